"""Constrained minimization of the well energy by a normalized gradient flow.

The flow for ``E(u) = T + lam P - D/2`` at fixed mass ``N`` is discretized as

    (1 + tau*s - tau*Delta) u_new = (1 + tau*(s + mu)) u - tau (lam g - V) u,
    u <- sqrt(N) u_new / ||u_new||,

with ``V = |.|^-2 * u^2`` and ``mu`` the current multiplier estimate.  The
kinetic term is implicit (diagonal in Fourier space), the well and the
nonlocal term are explicit.  The shift ``s >= 0`` keeps the explicit part
stable when ``lam`` is large; exact eigenfunctions of the Euler-Lagrange
operator are fixed points for every ``tau`` and ``s``.  In Fourier space the
update reads ``u_new = u - tau r / (1 + tau s + tau k^2)`` with
``r = (H - mu) u``, so the Euler-Lagrange residual comes with each step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft as sfft
from scipy.linalg import solve_banded

from . import _accel
from .functionals import EnergyBreakdown, energy_breakdown, well_values
from .grid import (Field, GridSpec, RadialField, RadialGrid, fourier_power_sum, kernel_transform,
                   laplacian, radial_kinetic, radial_laplacian, radial_operator_bands,
                   riesz_convolve, riesz_convolve_radial, riesz_values)
from .groundstate import GroundState
from .potentials import Potential

logger = logging.getLogger(__name__)

DIAGNOSES = ("converged", "collapse", "vanishing", "max_iters", "numerical_failure")

LOCAL_MIN_NOTE = "flow reaches a local constrained minimizer; the energy is an upper bound for the infimum"


@dataclass
class SolveConfig:
    """Parameters of one constrained minimization.

    Parameters
    ----------
    lam : float
        Well depth ``lambda > 0``.
    N : float
        Prescribed mass.
    g : Potential
        Bounded well.
    grid : GridSpec
    tau : float
        Flow step.  Halved whenever the energy increases.
    max_iters : int
    tol_energy : float
        Relative energy change per step below which the energy counts as settled.
    tol_residual : float
        Euler-Lagrange residual ``||(H - mu) u|| / ||u||`` required for convergence.
    init : str, Field or ndarray
        ``"gaussian"``, ``"random"`` or a warm start (Field on any 3D grid, or an
        array on ``grid``).
    init_width : float
        Width of the Gaussian start (also the envelope width of ``"random"``).
    seed : int
        Seed of the ``"random"`` start.
    energy_floor : float
        ``E_hat`` below this value is taken as unboundedness from below.
    shift : float, optional
        Stabilizing shift ``s``; chosen from the explicit potential when omitted.
    collapse_amplitude : float
        ``max|u|`` growth factor over the start that signals collapse.
    collapse_resolution : float
        Collapse is also declared when ``sqrt(M/T)`` (the kinetic length of
        ``u``) drops below this many grid spacings while the energy decreases.
    vanish_fraction : float
        Vanishing is declared when the mass inside the ball of radius ``L/2``
        about the well minimum falls below this fraction of ``N``.
    localized_fraction : float
        A stationary state with less ball mass than this is reported as vanishing
        (spread over the box) rather than converged.
    record_every : int
        Trajectory sampling interval.
    """

    lam: float
    N: float
    g: Potential
    grid: GridSpec
    tau: float = 1.0
    max_iters: int = 3000
    tol_energy: float = 1e-10
    tol_residual: float = 1e-6
    init: object = "gaussian"
    init_width: float = 1.0
    seed: int = 0
    energy_floor: float = -1e6
    shift: float | None = None
    collapse_amplitude: float = 1e4
    collapse_resolution: float = 0.75
    vanish_fraction: float = 0.5
    localized_fraction: float = 0.75
    record_every: int = 1

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not (self.tol_energy > 0 and self.tol_residual > 0):
            raise ValueError("tolerances must be positive")
        if not self.N > 0:
            raise ValueError("N must be positive")
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")
        if not self.g.bounded:
            raise ValueError("minimize needs a bounded well; use solve_e_inf for the limit potential")


@dataclass
class SolveReport:
    """Outcome of :func:`minimize` (or of the radial flows).

    ``trajectory`` maps column names to arrays sampled every ``record_every``
    steps: ``iteration, energy, E_hat, max_abs, peak_x..., ball_quarter,
    ball_half, mass, residual, tau``.
    """

    u: object
    breakdown: EnergyBreakdown
    mu_formula: float
    mu_projection: float
    residual: float
    diagnosis: str
    iterations: int
    trajectory: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def energy(self) -> float:
        return self.breakdown.E

    @property
    def mu(self) -> float:
        return self.mu_formula

    @property
    def converged(self) -> bool:
        return self.diagnosis == "converged"


# ---------------------------------------------------------------------------
# initial states
# ---------------------------------------------------------------------------

def _resample(field_: Field, grid: GridSpec) -> np.ndarray:
    if field_.grid == grid:
        return field_.values.copy()
    if grid.d != 3:
        raise ValueError("warm starts across grids are supported for d = 3 only")
    pts = np.stack([np.broadcast_to(c, grid.shape).ravel() for c in grid.coords()], axis=1)
    return _accel.trilinear(field_.values, -field_.grid.L, field_.grid.h, pts).reshape(grid.shape)


def initial_state(cfg: SolveConfig) -> np.ndarray:
    """Unnormalized starting samples for ``cfg``."""
    grid = cfg.grid
    init = cfg.init
    if isinstance(init, Field):
        return _resample(init, grid)
    if isinstance(init, np.ndarray):
        return np.asarray(init, dtype=np.float64).reshape(grid.shape).copy()
    r = grid.radius()
    w = cfg.init_width
    if init == "gaussian":
        return np.exp(-0.5 * (r / w) ** 2)
    if init == "random":
        rng = np.random.default_rng(cfg.seed)
        shift = rng.normal(scale=0.25 * w, size=grid.d)
        r2 = sum((c - s) ** 2 for c, s in zip(grid.coords(), shift))
        env = np.exp(-0.5 * r2 / (w * (0.8 + 0.4 * rng.random())) ** 2)
        noise = sfft.irfftn(sfft.rfftn(rng.normal(size=grid.shape)) * np.exp(-grid.k2() * w * w), s=grid.shape)
        noise /= np.max(np.abs(noise)) + 1e-300
        return env * (1.0 + 0.3 * noise)
    raise ValueError(f"unknown init {init!r}")


# ---------------------------------------------------------------------------
# box solver
# ---------------------------------------------------------------------------

class _Trajectory:
    def __init__(self, d):
        self.cols = ["iteration", "energy", "E_hat", "max_abs"] + [f"peak_x{i}" for i in range(d)] + \
            ["ball_quarter", "ball_half", "mass", "residual", "tau"]
        self.rows = []

    def add(self, *vals):
        self.rows.append(vals)

    def as_dict(self):
        if not self.rows:
            return {c: np.zeros(0) for c in self.cols}
        arr = np.array(self.rows, dtype=np.float64)
        return {c: arr[:, i] for i, c in enumerate(self.cols)}


def _auto_shift(wmax, mu, tau):
    # keeps the explicit factor 1 - tau (W - mu) / (1 + tau s) above -1
    return max(0.0, 0.55 * (wmax - mu) - 1.0 / tau)


def _respectrum(hat, v, zsign):
    """Half spectrum of ``v`` from the one it was synthesized from.

    ``irfftn`` ignores the non-Hermitian part of the two self-conjugate planes
    (last index 0 and n/2); rounding puts a little there and the flow would
    amplify it, so those planes are recomputed from ``v`` directly.
    """
    axes = tuple(range(v.ndim - 1))
    hat[..., 0] = sfft.fftn(v.sum(axis=-1), axes=axes)
    hat[..., -1] = sfft.fftn(v @ zsign, axes=axes)
    return hat


def minimize(cfg: SolveConfig) -> SolveReport:
    """Run the normalized flow for ``cfg`` and diagnose the outcome.

    Diagnoses
    ---------
    converged
        Residual and energy change below tolerance, state localized.
    collapse
        Energy decreasing while the state concentrates: ``E_hat`` below the
        floor, amplitude growth, or kinetic length below the resolution limit.
    vanishing
        The state spreads over the box (ball mass fraction below threshold).
    max_iters
        Iteration cap reached without a verdict.
    numerical_failure
        Non-finite iterate without the collapse signature, or step underflow.
    """
    grid = cfg.grid
    N = cfg.N
    lam = cfg.lam
    dv = grid.dv
    k2 = grid.k2()
    khat = kernel_transform(grid.d, grid.L, grid.n)
    gvals = np.ascontiguousarray(g_on(cfg.g, grid))
    r = grid.radius()
    ball_q = r <= 0.25 * grid.L
    ball_h = r <= 0.5 * grid.L
    coords = grid.axis

    u = initial_state(cfg)
    u *= math.sqrt(N / (np.sum(u * u) * dv))
    amp0 = float(np.max(np.abs(u)))
    tau = float(cfg.tau)
    traj = _Trajectory(grid.d)
    notes = [LOCAL_MIN_NOTE]
    diagnosis = "max_iters"
    reason = ""

    def evaluate(u, uhat=None):
        if uhat is None:
            uhat = sfft.rfftn(u)
        V = sfft.irfftn(sfft.rfftn(u * u) * khat, s=grid.shape)
        M, P, D, amax = _accel.weighted_sums(u, gvals, V)
        M, P, D = M * dv, P * dv, D * dv
        T = fourier_power_sum(grid, uhat, k2)
        return uhat, V, T, P, D, M, amax

    zsign = (-1.0) ** np.arange(grid.n)
    uhat, V, T, P, D, M, amax = evaluate(u)
    E = T + lam * P - 0.5 * D
    E_hist = [E]
    res = math.inf
    it = 0
    decreasing = 0
    shrinking = 0
    ell_hist = [math.sqrt(M / T) if T > 0 else math.inf]
    for it in range(1, cfg.max_iters + 1):
        mu = (T + lam * P - D) / M
        W = lam * gvals - V
        shift = cfg.shift if cfg.shift is not None else _auto_shift(float(W.max()), mu, tau)
        What = sfft.rfftn(W * u)
        rhat = (k2 - mu) * uhat + What
        res = math.sqrt(fourier_power_sum(grid, rhat) / M)
        E_hat = E - lam * M

        if (it - 1) % cfg.record_every == 0:
            ipk = np.unravel_index(int(np.argmax(np.abs(u))), u.shape)
            mass_q = float(np.sum(u[ball_q] ** 2) * dv) / M
            mass_h = float(np.sum(u[ball_h] ** 2) * dv) / M
            traj.add(it - 1, E, E_hat, amax, *[coords[i] for i in ipk], mass_q, mass_h, M, res, tau)
        else:
            mass_h = float(np.sum(u[ball_h] ** 2) * dv) / M

        # collapse and vanishing signatures
        if E_hat < cfg.energy_floor:
            diagnosis, reason = "collapse", "floor"
            notes.append(f"E_hat {E_hat:.4g} below floor {cfg.energy_floor:g}")
            break
        if decreasing >= 3:
            if amax > cfg.collapse_amplitude * amp0:
                diagnosis, reason = "collapse", "amplitude"
                notes.append(f"max|u| grew by {amax / amp0:.3g} while the energy decreased")
                break
            if ell_hist[-1] < cfg.collapse_resolution * grid.h and shrinking >= 3:
                diagnosis, reason = "collapse", "resolution"
                notes.append(f"kinetic length {ell_hist[-1]:.3g} below {cfg.collapse_resolution:g} h and shrinking")
                break
            if mass_h < cfg.vanish_fraction:
                diagnosis = "vanishing"
                notes.append(f"mass within L/2 fell to {mass_h:.3f} N while the energy decreased")
                break

        settled = len(E_hist) > 1 and abs(E_hist[-1] - E_hist[-2]) <= cfg.tol_energy * max(abs(E), 1.0)
        if res <= cfg.tol_residual and settled:
            if mass_h < cfg.localized_fraction:
                diagnosis = "vanishing"
                notes.append(f"stationary state spread over the box (mass within L/2: {mass_h:.3f} N)")
            else:
                diagnosis = "converged"
            break

        # flow step, halving tau on energy increase
        while True:
            denom = 1.0 + tau * shift + tau * k2
            new_hat = uhat - tau * rhat / denom
            v = sfft.irfftn(new_hat, s=grid.shape)
            nv = np.sum(v * v) * dv
            if not np.isfinite(nv) or nv <= 0:
                diagnosis = "collapse" if decreasing >= 3 and amax > amp0 else "numerical_failure"
                notes.append("non-finite iterate")
                break
            c = math.sqrt(N / nv)
            v *= c
            cand = evaluate(v, _respectrum(c * new_hat, v, zsign))
            cand_hat = cand[0]
            Tn, Pn, Dn, Mn = cand[2:6]
            En = Tn + lam * Pn - 0.5 * Dn
            if En <= E + 1e-12 * max(abs(E), 1.0) or tau < 1e-10:
                break
            tau *= 0.5
            if cfg.shift is None:
                shift = _auto_shift(float(W.max()), mu, tau)
        if diagnosis in ("collapse", "numerical_failure") and not np.isfinite(nv):
            break
        if tau < 1e-10:
            diagnosis = "numerical_failure"
            notes.append("step size underflow")
            break
        decreasing = decreasing + 1 if En < E else 0
        u = v
        uhat, V, T, P, D, M, amax = cand_hat, cand[1], Tn, Pn, Dn, Mn, cand[6]
        E = En
        E_hist.append(E)
        ell_hist.append(math.sqrt(M / T) if T > 0 else math.inf)
        shrinking = shrinking + 1 if ell_hist[-1] < ell_hist[-2] else 0

    field_u = Field(grid, u)
    bd = EnergyBreakdown.assemble(T, P, D, M, lam)
    mu_f, mu_p = lagrange_multiplier(field_u, lam, cfg.g, N, breakdown=bd)
    info = {"d": grid.d, "L": grid.L, "n": grid.n, "lam": lam, "N": N, "tau_final": tau,
            "initial_max": amp0, "ball_half": mass_h, "collapse_reason": reason}
    return SolveReport(field_u, bd, mu_f, mu_p, res, diagnosis, it, traj.as_dict(), notes, info)


def g_on(g: Potential, grid: GridSpec) -> np.ndarray:
    return np.asarray(g.on_grid(grid), dtype=np.float64)


def minimize_multistart(cfg: SolveConfig, inits=("gaussian", "wide", "random")) -> SolveReport:
    """Best (lowest energy) converged report over several starts.

    ``"wide"`` is a Gaussian of twice ``init_width``.  If no start converges the
    report with the lowest energy is returned with its own diagnosis.
    """
    reports = []
    for k, init in enumerate(inits):
        if init == "wide":
            c = replace(cfg, init="gaussian", init_width=2.0 * cfg.init_width)
        else:
            c = replace(cfg, init=init, seed=cfg.seed + k)
        reports.append(minimize(c))
    conv = [r for r in reports if r.converged]
    pool = conv or reports
    best = min(pool, key=lambda r: r.energy)
    best.notes.append(f"best of {len(reports)} starts: " + ", ".join(r.diagnosis for r in reports))
    return best


# ---------------------------------------------------------------------------
# multipliers and residuals
# ---------------------------------------------------------------------------

def apply_hamiltonian(u, lam: float, g: Potential | None) -> np.ndarray:
    """``(-Delta + lam g - |.|^-2 * u^2) u`` on either discretization."""
    if isinstance(u, RadialField):
        rg = u.rgrid
        V = riesz_convolve_radial(RadialField(rg, u.values ** 2)).values
        pot = 0.0 if g is None else lam * g(rg.r)
        return -radial_laplacian(u) + (pot - V) * u.values
    V = riesz_convolve(Field(u.grid, u.values ** 2)).values
    pot = 0.0 if g is None else lam * g.on_grid(u.grid)
    return -laplacian(u).values + (pot - V) * u.values


def _inner(u, a, b) -> float:
    if isinstance(u, RadialField):
        return float(np.sum(u.rgrid.weights * a * b))
    return float(np.sum(a * b) * u.grid.dv)


def lagrange_multiplier(u, lam: float, g: Potential, N: float,
                        breakdown: EnergyBreakdown | None = None) -> tuple[float, float]:
    """Two estimates of the multiplier.

    ``mu_formula = (E - D/2) / N`` from the energy components, and
    ``mu_projection = <H u, u> / N`` from an explicit application of the
    Euler-Lagrange operator.
    """
    bd = energy_breakdown(u, lam, g) if breakdown is None else breakdown
    mu_formula = (bd.E - 0.5 * bd.D) / N
    Hu = apply_hamiltonian(u, lam, g)
    mu_projection = _inner(u, Hu, u.values) / N
    return mu_formula, mu_projection


def el_residual(u, lam: float, g: Potential, mu: float) -> float:
    """``||(-Delta + lam g - mu - |.|^-2 * u^2) u|| / ||u||`` (0 for ``u = 0``)."""
    uu = _inner(u, u.values, u.values)
    if uu == 0.0:
        return 0.0
    r = apply_hamiltonian(u, lam, g) - mu * u.values
    return math.sqrt(_inner(u, r, r) / uu)


# ---------------------------------------------------------------------------
# radial flow
# ---------------------------------------------------------------------------

def minimize_radial(rgrid: RadialGrid, N: float, potential: np.ndarray, init=None,
                    tau: float = 10.0, max_iters: int = 20000, tol_residual: float = 1e-8,
                    tol_energy: float = 1e-13, energy_floor: float = -1e6,
                    collapse_resolution: float = 4.0, shift: float | None = None) -> dict:
    """Normalized flow for ``T + int W u^2 - D/2`` on the radial mesh.

    ``potential`` holds ``W`` at the nodes (already multiplied by any depth).
    Returns a dict with the final ``u`` (RadialField), ``T, P, D, M``,
    ``mu``, ``residual``, ``diagnosis`` and the energy history.  Collapse is
    declared when the kinetic length drops below ``collapse_resolution``
    mesh spacings or the energy passes ``energy_floor``.
    """
    rg = rgrid
    w = rg.weights
    pot = np.asarray(potential, dtype=np.float64)
    u = np.exp(-0.5 * rg.r ** 2) if init is None else np.array(init, dtype=np.float64)
    u *= math.sqrt(N / np.dot(w, u * u))

    def terms(u):
        U = RadialField(rg, u)
        V = riesz_convolve_radial(RadialField(rg, u * u)).values
        T = radial_kinetic(U)
        M = float(np.dot(w, u * u))
        P = float(np.dot(w, pot * u * u))
        D = float(np.dot(w, V * u * u))
        return V, T, P, D, M

    V, T, P, D, M = terms(u)
    E = T + P - 0.5 * D
    hist = [E]
    diagnosis = "max_iters"
    res = math.inf
    it = 0
    for it in range(1, max_iters + 1):
        mu = (T + P - D) / M
        Wv = pot - V
        r = -radial_laplacian(RadialField(rg, u)) + (Wv - mu) * u
        res = math.sqrt(np.dot(w, r * r) / M)
        if E < energy_floor:
            diagnosis = "collapse"
            break
        if it > 3 and hist[-1] < hist[-2] and math.sqrt(M / T) < collapse_resolution * rg.dr:
            diagnosis = "collapse"
            break
        settled = len(hist) > 1 and abs(hist[-1] - hist[-2]) <= tol_energy * max(abs(E), 1.0)
        if res <= tol_residual and settled:
            diagnosis = "converged"
            break
        s = shift if shift is not None else _auto_shift(float(Wv.max()), mu, tau)
        while True:
            ab = radial_operator_bands(rg, 0.0) * tau
            ab[1] += 1.0 + tau * s
            v = u - tau * solve_banded((1, 1), ab, r)
            v *= math.sqrt(N / np.dot(w, v * v))
            cand = terms(v)
            En = cand[1] + cand[2] - 0.5 * cand[3]
            if En <= E + 1e-12 * max(abs(E), 1.0) or tau < 1e-10:
                break
            tau *= 0.5
            if shift is None:
                s = _auto_shift(float(Wv.max()), mu, tau)
        if np.all(v >= 0):
            u = v
            V, T, P, D, M = cand
        else:
            u = np.abs(v)
            V, T, P, D, M = terms(u)
        E = T + P - 0.5 * D
        hist.append(E)
    mu = (T + P - D) / M
    return {"u": RadialField(rg, u), "T": T, "P": P, "D": D, "M": M, "E": E, "mu": mu,
            "residual": res, "diagnosis": diagnosis, "iterations": it, "energy_history": np.array(hist),
            "tau_final": tau}


# ---------------------------------------------------------------------------
# trial families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialRow:
    param: float
    E_hat: float
    T: float
    P: float
    D: float
    M: float
    flag: str = ""
    extra: float = math.nan


def _radial_energy_row(param, u: RadialField, lam, g, flag="", extra=math.nan) -> TrialRow:
    bd = energy_breakdown(u, lam, g)
    return TrialRow(float(param), bd.E_hat, bd.T, bd.P, bd.D, bd.M, flag, extra)


def trial_theta_scan(N: float, thetas, lam: float, g: Potential, gs: GroundState,
                     well_resolution: float = 0.1) -> list[TrialRow]:
    """``E_hat`` along ``u_theta(x) = sqrt(N theta^d / N*) Q(theta x)``.

    The dilation is exact: ``u_theta`` is ``Q``'s samples on the mesh scaled by
    ``1/theta``.  Rows whose scaled mesh spacing exceeds ``well_resolution``
    (the well varies on the unit scale) are flagged ``"unresolved"``.
    """
    rows = []
    Q = gs.Q
    d = Q.rgrid.d
    for th in thetas:
        th = float(th)
        if not th > 0:
            raise ValueError("theta must be positive")
        rg = Q.rgrid.rescaled(1.0 / th)
        u = RadialField(rg, math.sqrt(N * th ** d / gs.n_star) * Q.values)
        flag = "unresolved" if rg.dr > well_resolution else ""
        rows.append(_radial_energy_row(th, u, lam, g, flag))
    return rows


def smooth_cutoff(x, inner: float = 1.0, outer: float = 2.0) -> np.ndarray:
    """``C^inf`` bump: 1 for ``|x| <= inner``, 0 for ``|x| >= outer``."""
    x = np.asarray(x, dtype=np.float64)
    t = (x - inner) / (outer - inner)

    def s(t):
        return np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)

    return s(1.0 - t) / (s(1.0 - t) + s(t))


def trial_cutoff_scan(taus, lam: float, g: Potential, gs: GroundState) -> list[TrialRow]:
    """``E_hat`` along ``u_tau = A_tau tau^(d/2) phi(x) Q(tau x) / ||Q||`` with mass ``N*``.

    ``phi`` is :func:`smooth_cutoff`.  ``A_tau^2`` is stored in ``extra``.
    Rows whose scaled mesh ends inside the cutoff annulus are flagged.
    """
    rows = []
    Q = gs.Q
    w = Q.rgrid.weights
    for tau in taus:
        tau = float(tau)
        rg = Q.rgrid.rescaled(1.0 / tau)
        phi = smooth_cutoff(rg.r)
        A2 = gs.n_star ** 2 / float(np.dot(w, (phi * Q.values) ** 2))
        u = RadialField(rg, math.sqrt(A2 / gs.n_star) * tau ** (rg.d / 2.0) * phi * Q.values)
        flag = "mesh shorter than cutoff" if rg.R < 2.0 else ""
        rows.append(_radial_energy_row(tau, u, lam, g, flag, A2))
    return rows


__all__ = [
    "SolveConfig", "SolveReport", "TrialRow", "minimize", "minimize_multistart", "minimize_radial",
    "lagrange_multiplier", "el_residual", "apply_hamiltonian", "trial_theta_scan",
    "trial_cutoff_scan", "smooth_cutoff", "initial_state", "well_values", "riesz_values",
]
