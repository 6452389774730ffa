"""Deep-well asymptotics: the limit problem, lambda sweeps and profile rescaling.

For a well with ``g(x) ~ |x|^p`` at the origin, minimizers concentrate on the
scale ``eps = lam^(-1/(2+p))``.  The rescaled profile
``w(y) = eps^(d/2) u(eps y + x_peak)`` is compared against the minimizer
``w0`` of the limit energy ``E_inf(u) = T + int |x|^p u^2 - D/2``.

Every sweep cell is solved on a box that moves with the concentration scale:
half-width ``L_w eps`` with a fixed node count, so the rescaled nodes are the
same for every ``lam`` and a warm start is the previous array itself.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.linalg import eigh_tridiagonal

from . import _accel
from .functionals import EnergyBreakdown, basic_terms, weighted_integral
from .grid import (Field, GridSpec, RadialField, RadialGrid, fourier_power_sum, make_grid,
                   radial_to_grid, sphere_area)
from .groundstate import decay_fit
from .potentials import Potential, make_potential
from .solve import (SolveConfig, SolveReport, _inner, apply_hamiltonian, el_residual,
                    minimize, minimize_radial)

logger = logging.getLogger(__name__)


def concentration_scale(lam: float, p: float) -> float:
    """``eps = lam^(-1/(2+p))``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return float(lam) ** (-1.0 / (2.0 + p))


def energy_exponent(p: float) -> float:
    """Growth exponent ``2/(2+p)`` of the energy, kinetic term and multiplier."""
    return 2.0 / (2.0 + p)


# ---------------------------------------------------------------------------
# limit problem
# ---------------------------------------------------------------------------

def linear_ground_energy(p: float, rgrid: RadialGrid) -> float:
    """Lowest eigenvalue of ``-Delta + |x|^p`` on the radial mesh.

    Since ``D > 0``, ``e_inf(N) < N`` times this value for every ``N``, which
    makes it a ``p``-dependent bound for ``e_inf(N)/N``.
    """
    rg = rgrid
    w = rg.weights
    rf = (np.arange(rg.m) + 1.0) * rg.dr
    c = sphere_area(rg.d) * rf ** (rg.d - 1) / rg.dr
    diag = c.copy()
    diag[1:] += c[:-1]
    # symmetric form W^-1/2 K W^-1/2 of the weighted stiffness matrix
    d = diag / w + rg.r ** p
    e = -c[:-1] / np.sqrt(w[:-1] * w[1:])
    return float(eigh_tridiagonal(d, e, select="i", select_range=(0, 0), eigvals_only=True)[0])


def solve_e_inf(N: float, p: float, rgrid: RadialGrid, init=None, tol_residual: float = 1e-8,
                max_iters: int = 20000, tau: float = 10.0) -> SolveReport:
    """Minimize ``E_inf`` over radial functions of mass ``N``.

    Returns a :class:`SolveReport` whose breakdown carries ``E_inf`` (``E`` and
    ``E_hat`` are ``nan``).  ``info`` holds the shape checks: ``monotone``
    (strictly decreasing node to node), ``decay_rate`` and ``decay_flags``
    from an exponential fit of the tail, and ``linear_bound``, the lowest
    eigenvalue of ``-Delta + |x|^p``.  For ``N >= N*`` the flow collapses.
    """
    if not p > 0:
        raise ValueError("p must be positive")
    if not N > 0:
        raise ValueError("N must be positive")
    g = make_potential("limit", p)
    pot = g(rgrid.r)
    out = minimize_radial(rgrid, N, pot, init=init, tau=tau, max_iters=max_iters,
                          tol_residual=tol_residual)
    u = out["u"]
    bd = EnergyBreakdown.assemble(out["T"], out["P"], out["D"], out["M"], 1.0, limit=True)
    mu_formula = (bd.E_inf - 0.5 * bd.D) / N
    mu_proj = _inner(u, apply_hamiltonian(u, 1.0, g), u.values) / N
    notes = []
    info = {"p": p, "N": N, "m": rgrid.m, "R": rgrid.R, "linear_bound": linear_ground_energy(p, rgrid)}
    if out["diagnosis"] == "converged":
        v = u.values
        info["monotone"] = bool(np.all(np.diff(v) < 0))
        try:
            rate, window, fit = decay_fit(u)
            info.update(decay_rate=rate, decay_window=window, decay_flags=fit.flags)
        except ValueError as exc:
            info.update(decay_rate=math.nan, decay_window=(math.nan, math.nan), decay_flags=(str(exc),))
        if not info["monotone"]:
            notes.append("profile not strictly decreasing on the mesh")
    else:
        notes.append(f"limit flow ended with {out['diagnosis']}")
    traj = {"energy": out["energy_history"]}
    return SolveReport(u, bd, mu_formula, mu_proj, out["residual"], out["diagnosis"],
                       out["iterations"], traj, notes, info)


# ---------------------------------------------------------------------------
# lambda sweep
# ---------------------------------------------------------------------------

@dataclass
class ScalingFit:
    """Per-``lam`` energies of a sweep and the power law fitted to them.

    ``energies`` are ``e_lam = E``, ``potential`` is ``lam P``.  ``exponent`` and
    ``prefactor`` fit ``e_lam ~ prefactor * lam^exponent`` over ``window``
    (the top decade), using converged cells only.
    """

    N: float
    p: float
    lambdas: np.ndarray
    energies: np.ndarray
    kinetic: np.ndarray
    potential: np.ndarray
    nonlocal_: np.ndarray
    multipliers: np.ndarray
    residuals: np.ndarray
    diagnoses: list
    exponent: float
    prefactor: float
    e_inf_ref: float
    window: tuple[float, float]
    flags: list = field(default_factory=list)
    reports: list = field(default_factory=list, repr=False)

    @property
    def in_window(self) -> np.ndarray:
        lo, hi = self.window
        ok = np.array([d == "converged" for d in self.diagnoses])
        return ok & (self.lambdas >= lo * (1 - 1e-12)) & (self.lambdas <= hi * (1 + 1e-12))

    def scaled(self, values) -> np.ndarray:
        """``values * lam^(-2/(2+p))``."""
        return np.asarray(values) * self.lambdas ** (-energy_exponent(self.p))

    def rows(self) -> list[dict]:
        s = energy_exponent(self.p)
        out = []
        for i, lam in enumerate(self.lambdas):
            out.append({"lambda": lam, "e": self.energies[i], "T": self.kinetic[i],
                        "lambda_P": self.potential[i], "mu": self.multipliers[i],
                        "e_scaled": self.energies[i] * lam ** -s, "diagnosis": self.diagnoses[i],
                        "exponent": self.exponent})
        return out


def _fit_top_decade(lams, values, ok):
    hi = float(lams.max())
    window = (hi / 10.0, hi)
    sel = ok & (lams >= window[0] * (1 - 1e-12))
    if sel.sum() < 3:
        return math.nan, math.nan, window, sel
    slope, icpt = np.polyfit(np.log(lams[sel]), np.log(values[sel]), 1)
    return float(slope), float(math.exp(icpt)), window, sel


def sweep_lambda(N: float, g: Potential, lambdas, L_w: float = 6.0, n: int = 64,
                 e_inf_ref: float = math.nan, tol_residual: float = 1e-7, max_iters: int = 5000,
                 tau: float = 1.0, init_width: float = 1.0) -> ScalingFit:
    """Minimize at each ``lam`` (ascending) with warm starts and fit the energy law.

    Parameters
    ----------
    L_w : float
        Box half-width in units of ``eps``.
    n : int
        Nodes per axis; the rescaled mesh is identical for every ``lam``.
    tol_residual, tau, init_width :
        Given in rescaled units and converted with ``eps`` per cell.
    e_inf_ref : float
        Limit energy ``e_inf(N)`` for reporting (from :func:`solve_e_inf`).
    """
    lams = np.array(sorted(float(x) for x in lambdas))
    if lams.size < 1 or not np.all(lams > 0):
        raise ValueError("lambdas must be positive")
    if np.any(np.diff(lams) <= 0):
        raise ValueError("lambdas must be distinct")
    p = g.p
    s = energy_exponent(p)
    cols = {k: [] for k in ("E", "T", "lP", "D", "mu", "res")}
    diagnoses, reports, flags = [], [], []
    warm = "gaussian"
    for lam in lams:
        eps = concentration_scale(lam, p)
        grid = make_grid(3, L_w * eps, n)
        cfg = SolveConfig(lam=lam, N=N, g=g, grid=grid, tau=tau * eps * eps, max_iters=max_iters,
                          tol_residual=tol_residual / (eps * eps), init=warm,
                          init_width=init_width * eps)
        rep = minimize(cfg)
        bd = rep.breakdown
        for k, v in zip(cols, (bd.E, bd.T, lam * bd.P, bd.D, rep.mu, rep.residual)):
            cols[k].append(v)
        diagnoses.append(rep.diagnosis)
        reports.append(rep)
        if rep.converged:
            warm = rep.u.values
        else:
            flags.append(f"lambda={lam:g}: {rep.diagnosis}, excluded from the fit")
        logger.info("sweep lambda=%g: %s after %d steps, e*lam^-s=%.8g",
                    lam, rep.diagnosis, rep.iterations, bd.E * lam ** -s)
    E = np.array(cols["E"])
    ok = np.array([d == "converged" for d in diagnoses])
    expo, pref, window, sel = _fit_top_decade(lams, np.where(ok, E, 1.0), ok)
    if sel.sum() < 3:
        flags.append(f"only {int(sel.sum())} converged cells in the top decade; no fit")
    return ScalingFit(N, p, lams, E, np.array(cols["T"]), np.array(cols["lP"]), np.array(cols["D"]),
                      np.array(cols["mu"]), np.array(cols["res"]), diagnoses, expo, pref,
                      float(e_inf_ref), window, flags, reports)


# ---------------------------------------------------------------------------
# rescaled profiles
# ---------------------------------------------------------------------------

REFERENCE_GRID = make_grid(3, 12.0, 128)


@dataclass
class RescaledProfile:
    """``w(y) = eps^(d/2) u(eps y + x_peak)`` on a reference grid.

    ``mass_error`` is ``|int w^2 - N| / N`` after resampling.
    """

    lam: float
    eps: float
    x_peak: tuple
    peak: float
    w: Field
    N: float
    mass_error: float


def rescale_profile(report: SolveReport, lam: float, p: float,
                    ref_grid: GridSpec = REFERENCE_GRID) -> RescaledProfile:
    """Center ``u`` at its maximum, dilate by ``eps`` and resample trilinearly.

    Raises
    ------
    ValueError
        ``"unresolved concentration"`` if the maximum sits on the box edge.
    """
    if not report.converged:
        raise ValueError(f"rescaling needs a converged report, got {report.diagnosis!r}")
    u = report.u
    grid = u.grid
    if grid.d != 3 or ref_grid.d != 3:
        raise ValueError("profile rescaling is implemented for d = 3")
    eps = concentration_scale(lam, p)
    # argmax returns the first maximum in C order, the smallest lexicographic index
    idx = np.unravel_index(int(np.argmax(u.values)), grid.shape)
    if any(i in (0, grid.n - 1) for i in idx):
        raise ValueError("unresolved concentration: maximum on the box edge")
    x_peak = tuple(float(grid.axis[i]) for i in idx)
    pts = np.stack([np.broadcast_to(c, ref_grid.shape).ravel() for c in ref_grid.coords()], axis=1)
    pts = eps * pts + np.array(x_peak)
    vals = _accel.trilinear(u.values, -grid.L, grid.h, pts).reshape(ref_grid.shape)
    w = Field(ref_grid, eps ** 1.5 * vals)
    N = u.mass()
    mass_error = abs(w.mass() - N) / N
    if mass_error > 1e-3:
        logger.warning("rescaled profile at lambda=%g loses %.2e of its mass", lam, mass_error)
    return RescaledProfile(float(lam), eps, x_peak, float(u.values[idx]), w, N, mass_error)


def peak_slope(profiles) -> float:
    """Least-squares slope of ``log max u`` against ``log lam`` over the profiles.

    The concentration scaling predicts ``d / (2 (2 + p))``.
    """
    lams = np.array([pr.lam for pr in profiles])
    peaks = np.array([pr.peak for pr in profiles])
    if lams.size < 2:
        raise ValueError("peak slope needs at least 2 profiles")
    return float(np.polyfit(np.log(lams), np.log(peaks), 1)[0])


def h1_norm_sq(f: Field) -> float:
    """``int |grad f|^2 + f^2`` computed spectrally."""
    fh = sfft.rfftn(f.values)
    return fourier_power_sum(f.grid, fh, 1.0 + f.grid.k2())


def limit_energy(w: Field, p: float) -> float:
    """``E_inf(w) = T + int |x|^p w^2 - D/2`` on the box."""
    T, _, D = basic_terms(w)
    return T + weighted_integral(w, w.grid.radius() ** p) - 0.5 * D


def _nonincreasing(x, rel_noise):
    x = np.asarray(x, dtype=np.float64)
    return bool(np.all(np.diff(x) <= rel_noise * np.abs(x[:-1]) + 1e-300))


def check_concentration(profiles, w0: SolveReport, tail_radius: float = 3.0,
                        envelope_slack: float = 2.0, lambda0: float | None = None,
                        rel_noise: float = 1e-3) -> list[dict]:
    """Per-``lam`` concentration table with verdicts.

    Columns: ``lambda, eps, x_peak_over_eps, h1_distance, tail_sup, envelope,
    dominated``, plus table-level verdicts repeated on each row
    (``x_peak_bounded``, ``x_peak_nonincreasing``, ``h1_nonincreasing``).

    ``h1_distance`` is ``||w - w0||_H1 / ||w0||_H1`` on the reference grid.
    ``tail_sup`` is ``sup_{|y| >= tail_radius} w(y) e^|y|``; the envelope
    constant is ``envelope_slack`` times the same quantity for ``w0``.
    Rows below ``lambda0`` report the tail but are not required to be dominated.
    Monotonicity verdicts tolerate increases up to ``rel_noise`` of the
    previous value (once ``w`` has converged the sequence is flat up to rounding).
    """
    profiles = sorted(profiles, key=lambda pr: pr.lam)
    if len(profiles) < 3:
        raise ValueError("check_concentration needs at least 3 profiles")
    ref = profiles[0].w.grid
    w0f = radial_to_grid(w0.u, ref) if isinstance(w0.u, RadialField) else w0.u
    r = ref.radius()
    out_mask = r >= tail_radius
    weight = np.exp(r[out_mask])
    norm0 = math.sqrt(h1_norm_sq(w0f))
    envelope = envelope_slack * float(np.max(np.abs(w0f.values[out_mask]) * weight))
    lam0 = profiles[0].lam if lambda0 is None else lambda0
    rows = []
    for pr in profiles:
        diff = Field(ref, pr.w.values - w0f.values)
        tail = float(np.max(np.abs(pr.w.values[out_mask]) * weight))
        xp = math.sqrt(sum(x * x for x in pr.x_peak)) / pr.eps
        rows.append({"lambda": pr.lam, "eps": pr.eps, "x_peak_over_eps": xp,
                     "h1_distance": math.sqrt(h1_norm_sq(diff)) / norm0,
                     "tail_sup": tail, "envelope": envelope,
                     "dominated": bool(tail <= envelope) if pr.lam >= lam0 else None,
                     "mass_error": pr.mass_error})
    xs = np.array([row["x_peak_over_eps"] for row in rows])
    hs = np.array([row["h1_distance"] for row in rows])
    top = np.array([row["lambda"] >= rows[-1]["lambda"] / 10.0 * (1 - 1e-12) for row in rows])
    verdict = {
        "x_peak_bounded": bool(np.all(np.isfinite(xs)) and xs.max() <= 0.5 * ref.L),
        "x_peak_nonincreasing": _nonincreasing(xs[top], rel_noise),
        "h1_nonincreasing": _nonincreasing(hs, rel_noise),
    }
    for row in rows:
        row.update(verdict)
    return rows


def rescaled_residual(profile: RescaledProfile, report: SolveReport, g: Potential,
                      grid: GridSpec | None = None) -> float:
    """Residual of the rescaled Euler-Lagrange equation at ``w``.

    The operator is ``-Delta + eps^2 lam g(eps y + x_peak) - eps^2 mu - |.|^-2 * w^2``;
    in exact arithmetic its residual is ``eps^2`` times the original one.  It is
    evaluated on ``grid``, by default the solver box in rescaled units, so that
    the periodic images of the Riesz kernel match those seen by the solver.
    """
    eps, lam = profile.eps, profile.lam
    if grid is None:
        src = report.u.grid
        grid = make_grid(src.d, src.L / eps, src.n)
    ref = grid
    if ref != profile.w.grid:
        w0g = profile.w.grid
        pts = np.stack([np.broadcast_to(c, ref.shape).ravel() for c in ref.coords()], axis=1)
        vals = _accel.trilinear(profile.w.values, -w0g.L, w0g.h, pts).reshape(ref.shape)
    else:
        vals = profile.w.values
    coords = ref.coords()
    r = np.sqrt(sum((eps * c + x0) ** 2 for c, x0 in zip(coords, profile.x_peak)))
    if g.is_radial:
        gv = g(r)
    else:
        raise ValueError("rescaled residual needs an analytic well")
    wfield = Field(ref, vals)
    Hw = apply_hamiltonian(wfield, 0.0, None) + eps * eps * lam * gv * wfield.values
    res = Hw - eps * eps * report.mu * wfield.values
    return math.sqrt(_inner(wfield, res, res) / _inner(wfield, wfield.values, wfield.values))


def mass_outside_check(report: SolveReport, lam: float, g: Potential, M2: float,
                       levels=(10.0, 100.0)) -> list[dict]:
    """``int_{g >= l eps^p} u^2`` against ``M2 / l`` at each level ``l``."""
    u = report.u
    eps = concentration_scale(lam, g.p)
    gv = g.on_grid(u.grid)
    rows = []
    for lv in levels:
        mask = gv >= lv * eps ** g.p
        mass = float(np.sum(u.values[mask] ** 2) * u.grid.dv)
        rows.append({"level": lv, "mass": mass, "bound": M2 / lv, "ok": bool(mass <= M2 / lv)})
    return rows


def multiplier_trend(sweep: ScalingFit, rel_growth: float = 0.05) -> dict:
    """Boundedness of ``mu lam^(-2/(2+p))`` over the top decade.

    ``upper`` is the largest ratio (the fitted constant); ``lower`` is the
    smallest value of ``(e - D/2)/N`` scaled the same way.  The verdict is
    ``"bounded"`` when the ratio grows by less than ``rel_growth`` across the
    window, ``"growing"`` otherwise and ``"insufficient data"`` with fewer than
    two usable cells.
    """
    sel = sweep.in_window
    if sel.sum() < 2:
        return {"verdict": "insufficient data", "upper": math.nan, "lower": math.nan, "ratios": []}
    lams = sweep.lambdas[sel]
    ratios = sweep.scaled(sweep.multipliers)[sel]
    lower_terms = sweep.scaled((sweep.energies - 0.5 * sweep.nonlocal_) / sweep.N)[sel]
    growth = (ratios[-1] - ratios[0]) / max(abs(ratios).max(), 1e-300)
    verdict = "bounded" if np.all(np.isfinite(ratios)) and growth <= rel_growth else "growing"
    return {"verdict": verdict, "upper": float(ratios.max()), "lower": float(lower_terms.min()),
            "ratios": [float(x) for x in ratios], "lambdas": [float(x) for x in lams]}


__all__ = [
    "ScalingFit", "RescaledProfile", "REFERENCE_GRID", "concentration_scale", "energy_exponent",
    "linear_ground_energy", "solve_e_inf", "sweep_lambda", "rescale_profile", "check_concentration",
    "multiplier_trend", "rescaled_residual", "peak_slope", "mass_outside_check", "limit_energy", "h1_norm_sq",
    "el_residual",
]
