import numpy as np
import pytest

from hartreelab.functionals import quotients
from hartreelab.grid import RadialField, RadialGrid
from hartreelab.groundstate import (GroundStateError, compute_Q, decay_fit, pohozaev_check,
                                    scaled_profile)


def test_virial_identities(gs):
    assert abs(gs.T - gs.M) / gs.M <= 1e-5
    assert abs(gs.T - 0.5 * gs.D) / gs.T <= 1e-5


def test_gn_constant_self_consistent(gs):
    assert gs.gn_constant == 2.0 / gs.n_star
    assert quotients(gs.Q, 2.0).gn == pytest.approx(gs.gn_constant, rel=1e-6)


def test_positive_and_strictly_decreasing(gs):
    q = gs.Q.values
    assert np.all(q > 0)
    assert np.all(np.diff(q) < 0)


def test_refinement_stability(gs):
    fine = compute_Q(RadialGrid(16384, 50.0))
    assert abs(fine.n_star / gs.n_star - 1) < 1e-3


def test_seed_independence(gs):
    other = compute_Q(RadialGrid(8192, 40.0), seed=12345)
    assert abs(other.n_star / gs.n_star - 1) < 1e-4


def test_pohozaev_check(gs):
    assert pohozaev_check(gs).max_abs <= 1e-4


def test_decay_fit_exponential():
    rg = RadialGrid(4096, 40.0)
    rate, window, info = decay_fit(RadialField(rg, np.exp(-rg.r)))
    assert rate == pytest.approx(1.0, abs=1e-3)
    assert info.exponential
    assert window == pytest.approx((0.4 * 40.0, 0.7 * 40.0), rel=1e-3)


def test_decay_fit_algebraic_flagged():
    rg = RadialGrid(4096, 40.0)
    _, _, info = decay_fit(RadialField(rg, rg.r ** -2.0))
    assert not info.exponential
    assert any("non-exponential" in f for f in info.flags)


def test_decay_fit_underflow_shrinks_window():
    rg = RadialGrid(4096, 40.0)
    _, _, info = decay_fit(RadialField(rg, np.exp(-rg.r ** 3)))
    assert any("shrunk" in f for f in info.flags)


def test_decay_rate_stable_across_windows(gs):
    a, _, _ = decay_fit(gs.Q, (0.4, 0.7))
    b, _, _ = decay_fit(gs.Q, (0.3, 0.6))
    assert a > 0 and b > 0
    assert abs(a / b - 1) <= 0.02


def test_scaled_profile_dilation_laws(gs):
    # Q(b x): T -> T/b, M -> M/b^3; amplitude a: M -> a^2 M
    from hartreelab.functionals import basic_terms

    T, M, D = basic_terms(scaled_profile(gs, dilation=2.0))
    assert M == pytest.approx(gs.M / 8, rel=1e-10)
    assert T == pytest.approx(gs.T / 2, rel=1e-10)
    assert D == pytest.approx(gs.D / 16, rel=1e-10)
    assert scaled_profile(gs, amplitude=3.0).mass() == pytest.approx(9 * gs.M, rel=1e-12)


def test_nonconvergence_raises():
    with pytest.raises(GroundStateError) as exc:
        compute_Q(RadialGrid(2048, 30.0), max_iter=3)
    assert len(exc.value.trajectory) == 3


def test_rejects_other_dimensions():
    with pytest.raises(ValueError):
        compute_Q(RadialGrid(2048, 30.0, d=4))
