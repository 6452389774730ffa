import math

import numpy as np
import pytest
from scipy.sparse.linalg import LinearOperator, eigsh

from hartreelab.asymptotics import concentration_scale
from hartreelab.functionals import energy_breakdown
from hartreelab.grid import Field, laplacian, make_grid
from hartreelab.potentials import make_potential
from hartreelab.solve import (SolveConfig, el_residual, lagrange_multiplier, minimize,
                              minimize_multistart, smooth_cutoff, trial_cutoff_scan,
                              trial_theta_scan)

SAT2 = make_potential("saturating", 2)


@pytest.fixture(scope="module")
def converged(n_star):
    # concentration-adapted box: half-width 6 eps, flow units scaled by eps
    lam = 1e3
    eps = concentration_scale(lam, 2.0)
    cfg = SolveConfig(lam=lam, N=0.5 * n_star, g=SAT2, grid=make_grid(3, 6 * eps, 64),
                      tau=eps ** 2, init_width=eps, tol_residual=1e-6 / eps ** 2, record_every=1)
    return cfg, minimize(cfg)


# ---------------------------------------------------------------------------
# regimes
# ---------------------------------------------------------------------------

def test_converged_regime(converged):
    cfg, rep = converged
    assert rep.diagnosis == "converged"
    assert rep.converged
    assert rep.residual <= cfg.tol_residual


def test_collapse_regime(n_star):
    rep = minimize(SolveConfig(lam=1.0, N=1.2 * n_star, g=SAT2, grid=make_grid(3, 8.0, 64)))
    assert rep.diagnosis == "collapse"
    E = rep.trajectory["E_hat"]
    amp = rep.trajectory["max_abs"]
    assert E[-1] < E[0] and amp[-1] > amp[0]


def test_vanishing_regime(n_star):
    rep = minimize(SolveConfig(lam=1e-3, N=0.5 * n_star, g=SAT2, grid=make_grid(3, 8.0, 64)))
    assert rep.diagnosis == "vanishing"
    E = rep.trajectory["E_hat"]
    amp = rep.trajectory["max_abs"]
    assert E[-1] > 0 and E[-1] < E[0]
    assert amp[-1] < amp[0]


def test_limit_potential_rejected():
    with pytest.raises(ValueError):
        SolveConfig(lam=1.0, N=1.0, g=make_potential("limit", 2), grid=make_grid(3, 4.0, 16))


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(lam=1.0, N=-1.0, g=SAT2, grid=make_grid(3, 4.0, 16))
    with pytest.raises(ValueError):
        SolveConfig(lam=1.0, N=1.0, g=SAT2, grid=make_grid(3, 4.0, 16), tau=0.0)


# ---------------------------------------------------------------------------
# flow invariants
# ---------------------------------------------------------------------------

def test_mass_conservation(converged):
    cfg, rep = converged
    mass = rep.trajectory["mass"]
    assert np.max(np.abs(mass / cfg.N - 1)) <= 1e-10


def test_energy_monotone(converged):
    E = converged[1].trajectory["energy"]
    assert np.all(np.diff(E) <= 1e-12 * np.maximum(np.abs(E[1:]), 1.0))


def test_energy_is_report_breakdown(converged):
    cfg, rep = converged
    bd = energy_breakdown(rep.u, cfg.lam, SAT2)
    assert rep.energy == pytest.approx(bd.E, rel=1e-10)


def test_multistart_best_energy(n_star):
    cfg = SolveConfig(lam=5.0, N=0.3 * n_star, g=SAT2, grid=make_grid(3, 8.0, 32))
    best = minimize_multistart(cfg)
    singles = [minimize(cfg), minimize(SolveConfig(lam=5.0, N=0.3 * n_star, g=SAT2,
                                                    grid=make_grid(3, 8.0, 32), init="random"))]
    assert best.energy <= min(r.energy for r in singles if r.converged) + 1e-9
    assert any("best of 3" in n for n in best.notes)


# ---------------------------------------------------------------------------
# multipliers and residuals
# ---------------------------------------------------------------------------

def test_multipliers_agree_at_minimizer(converged):
    cfg, rep = converged
    assert abs(rep.mu_formula - rep.mu_projection) / abs(rep.mu_formula) <= 10 * 1e-6


def test_multiplier_linear_eigenstate():
    # oracle: lowest eigenpair of -Delta + lam g from an independent Lanczos solve
    grid = make_grid(3, 4.0, 16)
    lam = 5.0
    gv = SAT2.on_grid(grid)

    def matvec(x):
        f = Field(grid, x.reshape(grid.shape))
        return (-laplacian(f).values + lam * gv * f.values).ravel()

    op = LinearOperator((grid.n ** 3,) * 2, matvec=matvec, dtype=np.float64)
    vals, vecs = eigsh(op, k=1, which="SA", tol=1e-12)
    v = vecs[:, 0].reshape(grid.shape)
    N = 1e-10
    u = Field(grid, v * math.sqrt(N / (np.sum(v * v) * grid.dv)))
    mf, mp = lagrange_multiplier(u, lam, SAT2, N)
    assert mp == pytest.approx(vals[0], rel=1e-8)
    assert mf == pytest.approx(vals[0], rel=1e-8)


def test_multiplier_constant_state():
    # constant on the periodic box with a vanishing well slice: -Delta kills it,
    # so both estimates equal -D/N
    grid = make_grid(3, 4.0, 16)
    u = Field(grid, np.full(grid.shape, 0.3))
    N = u.mass()
    bd = energy_breakdown(u, 0.0, SAT2)
    mf, mp = lagrange_multiplier(u, 0.0, SAT2, N)
    assert mf == pytest.approx(-bd.D / N, rel=1e-12)
    assert mp == pytest.approx(mf, rel=1e-10)


def test_el_residual_zero_field():
    grid = make_grid(3, 4.0, 16)
    assert el_residual(Field(grid, np.zeros(grid.shape)), 1.0, SAT2, 0.3) == 0.0


def test_el_residual_at_minimizer(converged):
    cfg, rep = converged
    assert el_residual(rep.u, cfg.lam, SAT2, rep.mu_formula) <= cfg.tol_residual


@pytest.mark.parametrize("delta", [0.5, -2.0, 10.0])
def test_el_residual_shift_in_mu(converged, delta):
    cfg, rep = converged
    r0 = el_residual(rep.u, cfg.lam, SAT2, rep.mu_formula)
    r1 = el_residual(rep.u, cfg.lam, SAT2, rep.mu_formula + delta)
    assert abs(r1 - abs(delta)) <= r0 + 1e-12 * abs(delta)


# ---------------------------------------------------------------------------
# trial families
# ---------------------------------------------------------------------------

def test_theta_scan_supercritical(gs):
    N = 1.5 * gs.n_star
    rows = trial_theta_scan(N, [1, 2, 4, 8], 10.0, SAT2, gs)
    E = [r.E_hat for r in rows]
    assert all(a > b for a, b in zip(E, E[1:]))
    # slope in theta^2 between the two largest thetas
    slope = (E[-1] - E[-2]) / (8 ** 2 - 4 ** 2)
    assert slope == pytest.approx(N * (1 - N / gs.n_star), rel=0.05)


def test_theta_scan_critical(gs):
    lam = 10.0
    rows = trial_theta_scan(gs.n_star, [2, 4, 8], lam, SAT2, gs)
    for r in rows:
        # T - D/2 cancels; what remains is -lam int (1 - g) u^2, bounded by lam N*
        assert abs((r.T - 0.5 * r.D) / r.param ** 2) <= 0.05 * lam * gs.n_star


def test_theta_one_recovers_q(gs):
    lam = 3.0
    row = trial_theta_scan(gs.n_star, [1.0], lam, SAT2, gs)[0]
    omg = float(np.dot(gs.rgrid.weights, (1 - SAT2(gs.rgrid.r)) * gs.Q.values ** 2))
    assert row.E_hat == pytest.approx(gs.T - 0.5 * gs.D - lam * omg, rel=1e-10, abs=1e-10)


def test_theta_scan_subcritical_bound(gs):
    N = 0.5 * gs.n_star
    for r in trial_theta_scan(N, [0.05, 0.1, 0.2], 1.0, SAT2, gs):
        assert r.E_hat <= N * r.param ** 2 * (1 - N / gs.n_star) + 1e-9


def test_theta_scan_flags_unresolved(gs):
    rows = trial_theta_scan(gs.n_star, [0.01, 1.0], 1.0, SAT2, gs)
    assert rows[0].flag == "unresolved" and rows[1].flag == ""


def test_cutoff_scan(gs):
    lam = 10.0
    rows = trial_cutoff_scan([1, 8, 16], lam, SAT2, gs)
    target = -lam * gs.n_star
    assert rows[0].E_hat > target
    assert target <= rows[-1].E_hat <= target * (1 - 0.05)
    for r in rows[1:]:
        assert gs.n_star <= r.extra <= gs.n_star * (1 + 1e-3)


def test_smooth_cutoff_shape():
    x = np.array([0.0, 1.0, 1.5, 2.0, 3.0])
    phi = smooth_cutoff(x)
    assert phi[0] == phi[1] == 1.0 and phi[3] == phi[4] == 0.0
    assert phi[2] == pytest.approx(0.5)
