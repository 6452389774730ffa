import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from hartreelab.grid import Field, make_grid
from hartreelab.potentials import (PotentialForm, make_potential, one_minus_g_norm, parse_form,
                                   tail_integrable, validate_m1_m2)


def test_saturating_definition():
    g = make_potential("saturating", 2)
    r = np.array([0.0, 0.5, 1.0, 3.0])
    assert np.array_equal(g(r), np.minimum(r ** 2, 1.0))
    assert g(np.array([0.0]))[0] == 0.0


def test_rational_definition():
    g = make_potential("RationalPower", 3)
    r = np.array([0.0, 0.5, 2.0])
    assert np.allclose(g(r), r ** 3 / (1 + r ** 3), rtol=0, atol=1e-15)
    assert g.flags == ()


def test_rational_p1_flagged():
    g = make_potential("rational", 1)
    assert any("L^(d/2)" in f for f in g.flags)
    assert not tail_integrable(g)
    assert one_minus_g_norm(g) == math.inf


def test_limit_flagged_unbounded():
    g = make_potential("limit", 2)
    assert not g.bounded
    assert any("unbounded" in f for f in g.flags)
    with pytest.raises(ValueError):
        one_minus_g_norm(g)


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        make_potential("saturating", 0)
    with pytest.raises(ValueError):
        make_potential("quadratic", 2)
    with pytest.raises(ValueError):
        make_potential("tabulated", 2)


def test_parse_form_aliases():
    assert parse_form("SaturatingPower") is PotentialForm.SATURATING
    assert parse_form("limit_power") is PotentialForm.LIMIT


def test_validate_saturating_default_grid():
    rep = validate_m1_m2(make_potential("saturating", 2), make_grid(3, 16.0, 128))
    assert rep.passed, rep.notes
    assert set(rep.clauses) >= {"nonnegative", "bounded_by_one", "zero_at_origin", "unique_minimum", "power_law"}


def test_validate_tabulated_two_zeros():
    grid = make_grid(3, 4.0, 16)
    vals = np.minimum(grid.radius() ** 2, 1.0)
    vals[0, 0, 0] = 0.0
    g = make_potential("tabulated", 2, table=Field(grid, vals))
    rep = validate_m1_m2(g, grid)
    assert not rep.clauses["unique_minimum"]
    assert not rep.passed


def test_validate_limit_fails_bound():
    rep = validate_m1_m2(make_potential("limit", 2), make_grid(3, 4.0, 16))
    assert not rep.clauses["bounded_by_one"]
    assert rep.limit_only


def test_saturating_norm_grid_independent():
    g = make_potential("saturating", 2)
    # oracle: 4 pi int_0^1 r^2 (1 - r^2)^(3/2) dr by quadrature
    ref = (4 * math.pi * quad(lambda r: r * r * (1 - r * r) ** 1.5, 0, 1, epsabs=0, epsrel=1e-13)[0]) ** (2 / 3)
    assert one_minus_g_norm(g) == pytest.approx(ref, rel=1e-12)


def test_rational_p3_norm_against_quadrature():
    g = make_potential("rational", 3)
    f = lambda r: r * r * (1 + r ** 3) ** -1.5
    integral = 4 * math.pi * (quad(f, 0, 1)[0] + quad(f, 1, np.inf, limit=200)[0])
    assert abs(one_minus_g_norm(g) / integral ** (2 / 3) - 1) < 1e-4


def test_degenerate_tabulated_zero_well_infinite():
    grid = make_grid(3, 4.0, 16)
    g = make_potential("tabulated", 2, table=Field(grid, np.zeros(grid.shape)))
    assert one_minus_g_norm(g) == math.inf


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["saturating", "rational"]), st.floats(0.5, 6.0))
def test_bounded_families_on_grid(form, p):
    grid = make_grid(3, 4.0, 16)
    g = make_potential(form, p)
    vals = g.on_grid(grid)
    assert vals.min() >= 0 and vals.max() <= 1
    assert vals[grid.origin_index] == 0
    assert np.count_nonzero(vals == 0) == 1


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["saturating", "rational"]), st.floats(0.5, 6.0),
       st.floats(1e-4, 0.1))
def test_power_law_near_origin(form, p, r):
    g = make_potential(form, p)
    ratio = g(np.array([r]))[0] / r ** p
    # rational: 1/(1 + r^p) >= 1 - 0.1^p; within 1% once r^p <= 0.01
    if r ** p <= 0.01:
        assert abs(ratio - 1) <= 0.01
