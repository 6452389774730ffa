import math

import numpy as np
import pytest

from hartreelab.functionals import sobolev_constant, threshold_quotient
from hartreelab.grid import RadialField, RadialGrid, make_grid
from hartreelab.potentials import make_potential, one_minus_g_norm
from hartreelab.threshold import (PhaseCell, ThresholdResult, bisect_lambda_star,
                                  estimate_lambda_star, lambda_star_bounds, phase_diagram,
                                  quotient_flow)

SAT2 = make_potential("saturating", 2)


def test_bounds_formulas(gs):
    N = 0.5 * gs.n_star
    lo, up = lambda_star_bounds(N, SAT2, gs)
    assert lo == pytest.approx(sobolev_constant(3) * 0.5 / one_minus_g_norm(SAT2), rel=1e-14)
    assert 0 < lo < up


def test_upper_bound_is_quotient_of_scaled_q(gs):
    N = 0.4 * gs.n_star
    _, up = lambda_star_bounds(N, SAT2, gs)
    u = RadialField(gs.rgrid, math.sqrt(N / gs.n_star) * gs.Q.values)
    assert up == pytest.approx(threshold_quotient(u, SAT2), rel=1e-8)


def test_bounds_vanish_near_critical_mass(gs):
    lo, up = lambda_star_bounds(gs.n_star * (1 - 1e-6), SAT2, gs)
    lo5, up5 = lambda_star_bounds(0.5 * gs.n_star, SAT2, gs)
    assert lo / lo5 == pytest.approx(2e-6, rel=1e-6)
    assert up / up5 == pytest.approx(2e-6, rel=1e-6)


def test_bounds_reject_supercritical(gs):
    with pytest.raises(ValueError):
        lambda_star_bounds(gs.n_star, SAT2, gs)


def test_bounds_nonintegrable_tail(gs):
    lo, up = lambda_star_bounds(0.5 * gs.n_star, make_potential("rational", 1), gs)
    assert lo == 0.0 and up > 0


def test_quotient_flow_below_upper_bound(gs):
    N = 0.5 * gs.n_star
    _, up = lambda_star_bounds(N, SAT2, gs)
    out = quotient_flow(RadialGrid(2048, 16.0), N, SAT2)
    assert out["F"] <= up * 1.05
    hist = out["history"]
    assert np.all(np.diff(hist) <= 1e-12 * np.abs(hist[1:]))


@pytest.mark.slow
def test_estimate_within_sandwich(gs):
    N = 0.5 * gs.n_star
    res = estimate_lambda_star(N, SAT2, make_grid(3, 16.0, 128), gs)
    assert isinstance(res, ThresholdResult)
    for est in (res.lambda_star, res.lambda_star_bisect):
        assert res.lower_bound <= est <= res.upper_bound * 1.05
    assert res.gap <= 0.10


def test_bounds_proportional_to_mass_gap(gs):
    a = lambda_star_bounds(0.95 * gs.n_star, SAT2, gs)
    b = lambda_star_bounds(0.5 * gs.n_star, SAT2, gs)
    assert a[0] / b[0] == pytest.approx(0.1, rel=1e-12)
    assert a[1] / b[1] == pytest.approx(0.1, rel=1e-12)


def test_bisect_brackets_radial(gs):
    N = 0.7 * gs.n_star
    lo, up = lambda_star_bounds(N, SAT2, gs)
    lam, info = bisect_lambda_star(N, SAT2, (lo, up), RadialGrid(2048, 16.0))
    lo_b, hi_b = info["bracket"]
    assert lo_b <= lam <= hi_b and hi_b / lo_b - 1 <= 0.02
    assert lo <= lam <= up * 1.05


def test_phase_diagram_small(gs):
    grid = make_grid(3, 8.0, 32)
    cells = phase_diagram([0.5 * gs.n_star, 1.2 * gs.n_star], [1e-3, 30.0], SAT2, grid,
                          lambda_star={0.5 * gs.n_star: 30.0 * 1.01})
    assert [(c.N, c.lam) for c in cells] == [(0.5 * gs.n_star, 1e-3), (0.5 * gs.n_star, 30.0),
                                              (1.2 * gs.n_star, 1e-3), (1.2 * gs.n_star, 30.0)]
    assert cells[0].diagnosis == "vanishing"
    assert cells[1].diagnosis == "boundary" and cells[1].raw_diagnosis == "converged"
    assert cells[2].diagnosis == cells[3].diagnosis == "collapse"
    assert set(cells[0].as_row()) == {"N", "lambda", "diagnosis", "energy", "residual"}


def test_phase_diagram_threads_match_serial(gs):
    grid = make_grid(3, 8.0, 16)
    args = ([0.5 * gs.n_star, 1.2 * gs.n_star], [0.01, 10.0], SAT2, grid)
    a = phase_diagram(*args, workers=1)
    b = phase_diagram(*args, workers=2)
    assert [c.as_row() for c in a] == [c.as_row() for c in b]


def test_phase_cell_row():
    c = PhaseCell(1.0, 2.0, "converged", -1.0, 1e-7)
    assert list(c.as_row()) == ["N", "lambda", "diagnosis", "energy", "residual"]


def test_phase_refinement_skipped_at_or_above_critical_mass(gs):
    grid = make_grid(3, 8.0, 16)
    cells = phase_diagram([1.2 * gs.n_star], [10.0], SAT2, grid, n_star=gs.n_star)
    assert cells[0].diagnosis == "collapse" and cells[0].L == grid.L
