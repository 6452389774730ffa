"""Existence threshold ``lambda*(N)``, its analytic bounds and the phase diagram.

``lambda*(N)`` is the infimum of ``F(u) = (T - D/2) / int (1 - g) u^2`` over
``||u||^2 = N``.  Two estimators are provided:

* a normalized descent flow on ``F`` itself, started from several profiles;
* bisection in ``lambda`` on the predicate "the well energy flow converges to a
  localized state with ``E_hat < -1e-6``".

Both run by default on a radial mesh with a Dirichlet edge at ``R``.  On a
periodic box a box-filling state has ``D > 0`` with ``T = 0``, so ``F`` and
``E_hat`` pick up a spurious negative self-energy; the ball keeps the
inequality ``T - D/2 >= (1 - N/N*) T`` intact and the two estimators then
measure the same discrete threshold.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .functionals import sobolev_constant, weighted_integral
from .grid import (GridSpec, RadialField, RadialGrid, make_grid, radial_kinetic, radial_laplacian,
                   radial_operator_bands, riesz_convolve_radial)
from .groundstate import GroundState
from .potentials import Potential, one_minus_g_norm, tail_integrable
from .solve import SolveConfig, minimize, minimize_radial

logger = logging.getLogger(__name__)


@dataclass
class ThresholdResult:
    """Both threshold estimates with the analytic sandwich."""

    N: float
    lambda_star: float
    lambda_star_bisect: float
    lower_bound: float
    upper_bound: float
    provenance: dict = field(default_factory=dict)

    @property
    def gap(self) -> float:
        """Relative disagreement of the two estimators."""
        a, b = self.lambda_star, self.lambda_star_bisect
        if not (math.isfinite(a) and math.isfinite(b)):
            return math.nan
        return abs(a - b) / max(abs(a), abs(b), 1e-300)

    def as_row(self) -> dict:
        row = {"N": self.N, "lambda_star": self.lambda_star, "lambda_star_bisect": self.lambda_star_bisect,
               "lower_bound": self.lower_bound, "upper_bound": self.upper_bound}
        row.update(self.provenance)
        return row


# ---------------------------------------------------------------------------
# analytic bounds
# ---------------------------------------------------------------------------

def lambda_star_bounds(N: float, g: Potential, gs: GroundState) -> tuple[float, float]:
    """``(S_d (N* - N) / (N* ||1-g||_{d/2}),  (N* - N) / int (1 - g) Q^2)``.

    The lower bound is 0 when ``1 - g`` is not in ``L^{d/2}``.
    """
    ns = gs.n_star
    if not 0 < N < ns:
        raise ValueError(f"bounds need 0 < N < N* = {ns:.8g}, got N = {N:.8g}")
    d = gs.rgrid.d
    norm = one_minus_g_norm(g, d)
    lower = 0.0 if math.isinf(norm) else sobolev_constant(d) * (ns - N) / (ns * norm)
    upper = (ns - N) / weighted_integral(gs.Q, 1.0 - g(gs.rgrid.r))
    return lower, upper


# ---------------------------------------------------------------------------
# quotient flow
# ---------------------------------------------------------------------------

def _quotient_parts(rg, u, one_minus_g):
    U = RadialField(rg, u)
    w = rg.weights
    V = riesz_convolve_radial(RadialField(rg, u * u)).values
    T = radial_kinetic(U)
    D = float(np.dot(w, V * u * u))
    den = float(np.dot(w, one_minus_g * u * u))
    return V, T, D, den


def quotient_flow(rgrid: RadialGrid, N: float, g: Potential, init=None, tau: float = 10.0,
                  max_iters: int = 20000, tol_F: float = 1e-5, tol_residual: float = 1e-7,
                  window: int = 50) -> dict:
    """Minimize ``F`` at mass ``N`` on the radial mesh.

    Each step descends ``T - D/2 - F_k int (1-g) u^2`` (``F_k`` the current
    quotient) with the preconditioned, normalized update used by the energy
    flows; steps that raise ``F`` are retried with half the step.  Stops when
    the residual is below ``tol_residual`` or ``F`` changed by less than
    ``tol_F`` relative over the last ``window`` steps.
    """
    rg = rgrid
    w = rg.weights
    omg = 1.0 - g(rg.r)
    u = np.exp(-0.5 * rg.r ** 2) if init is None else np.array(init, dtype=np.float64)
    u *= math.sqrt(N / np.dot(w, u * u))
    V, T, D, den = _quotient_parts(rg, u, omg)
    F = (T - 0.5 * D) / den
    hist = [F]
    res = math.inf
    status = "max_iters"
    it = 0
    for it in range(1, max_iters + 1):
        Wv = -V - F * omg
        nu = (T - D - F * den) / N
        r = -radial_laplacian(RadialField(rg, u)) + (Wv - nu) * u
        res = math.sqrt(np.dot(w, r * r) / N) / max(abs(F), 1e-300)
        if res < tol_residual:
            status = "converged"
            break
        if len(hist) > window and abs(hist[-window - 1] - F) <= tol_F * abs(F):
            status = "plateau"
            break
        s = max(0.0, 0.55 * (float(Wv.max()) - nu) - 1.0 / tau)
        while True:
            ab = radial_operator_bands(rg, 0.0) * tau
            ab[1] += 1.0 + tau * s
            v = np.abs(u - tau * solve_banded((1, 1), ab, r))
            v *= math.sqrt(N / np.dot(w, v * v))
            cand = _quotient_parts(rg, v, omg)
            Fn = (cand[1] - 0.5 * cand[2]) / cand[3]
            if Fn <= F + 1e-14 * abs(F) or tau < 1e-10:
                break
            tau *= 0.5
        u = v
        V, T, D, den = cand
        F = Fn
        hist.append(F)
    return {"F": F, "u": RadialField(rg, u), "status": status, "iterations": it,
            "residual": res, "history": np.array(hist)}


def _radial_mesh_for(grid, m: int) -> RadialGrid:
    if isinstance(grid, RadialGrid):
        return grid
    if isinstance(grid, GridSpec):
        return RadialGrid(m, grid.L, grid.d)
    raise TypeError("grid must be a RadialGrid or a GridSpec")


# ---------------------------------------------------------------------------
# bisection
# ---------------------------------------------------------------------------

def _exists_radial(lam, N, g, rg, tol_residual, warm):
    out = minimize_radial(rg, N, lam * (g(rg.r) - 1.0), init=warm, tol_residual=tol_residual,
                          tol_energy=1e-14, max_iters=40000)
    E_hat = out["E"]
    # a state pressed against the Dirichlet edge is the ball's version of vanishing
    edge = float(np.dot(rg.weights[rg.r > 0.5 * rg.R], out["u"].values[rg.r > 0.5 * rg.R] ** 2)) / N
    ok = out["diagnosis"] == "converged" and E_hat < -1e-6 and edge < 0.25
    return ok, out["u"].values


def _exists_box(lam, N, g, grid, tol_residual, warm, solve_kwargs):
    cfg = SolveConfig(lam=lam, N=N, g=g, grid=grid, tol_residual=tol_residual,
                      init=warm if warm is not None else "gaussian", **solve_kwargs)
    rep = minimize(cfg)
    ok = rep.diagnosis == "converged" and rep.breakdown.E_hat < -1e-6
    return ok, (rep.u if rep.diagnosis == "converged" else None)


def bisect_lambda_star(N: float, g: Potential, bracket: tuple[float, float], grid,
                       rel_tol: float = 0.02, tol_residual: float = 1e-7, m: int = 2048,
                       solve_kwargs: dict | None = None, max_expand: int = 6) -> tuple[float, dict]:
    """Bisect ``lambda`` on the existence predicate until ``hi/lo - 1 <= rel_tol``.

    ``grid`` may be a RadialGrid (Dirichlet ball), a GridSpec (box solver via
    :func:`minimize`, with ``solve_kwargs`` forwarded) or a GridSpec to be
    replaced by a ball of radius ``L`` when ``solve_kwargs`` is ``None`` and
    ``m`` is given.  The bracket is widened geometrically if needed.
    """
    box = isinstance(grid, GridSpec) and solve_kwargs is not None
    rg = None if box else _radial_mesh_for(grid, m)
    warm = None

    def pred(lam):
        nonlocal warm
        if box:
            ok, state = _exists_box(lam, N, g, grid, tol_residual, warm, solve_kwargs)
        else:
            ok, state = _exists_radial(lam, N, g, rg, tol_residual, warm)
        if ok:
            warm = state
        logger.debug("existence(lambda=%.6g) = %s", lam, ok)
        return ok

    lo, hi = map(float, bracket)
    calls = 0
    for _ in range(max_expand):
        calls += 1
        if pred(hi):
            break
        lo, hi = hi, 2.0 * hi
    else:
        return math.inf, {"calls": calls, "bracket": (lo, hi)}
    for _ in range(max_expand):
        calls += 1
        if not pred(lo):
            break
        hi, lo = lo, 0.5 * lo
    else:
        return 0.0, {"calls": calls, "bracket": (lo, hi)}
    while hi / lo - 1.0 > rel_tol:
        mid = math.sqrt(lo * hi)
        calls += 1
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return math.sqrt(lo * hi), {"calls": calls, "bracket": (lo, hi)}


# ---------------------------------------------------------------------------
# combined estimate
# ---------------------------------------------------------------------------

def estimate_lambda_star(N: float, g: Potential, grid, gs: GroundState, m: int = 2048,
                         widths=(0.5, 1.0, 2.0), bisect: bool = True, bisect_grid=None,
                         solve_kwargs: dict | None = None, tol_F: float = 1e-5) -> ThresholdResult:
    """Estimate ``lambda*(N)`` by the quotient flow and by bisection.

    Parameters
    ----------
    grid : RadialGrid or GridSpec
        Domain of the quotient flow; a GridSpec is replaced by the ball of
        radius ``L`` with ``m`` nodes.
    widths : sequence of float
        Gaussian widths of the three starts of the quotient flow.
    bisect_grid : RadialGrid or GridSpec, optional
        Domain of the bisection (defaults to the quotient-flow ball).  With a
        GridSpec and ``solve_kwargs`` given, the box solver is used.
    """
    ns = gs.n_star
    if not 0 < N < ns:
        raise ValueError(f"threshold needs 0 < N < N* = {ns:.8g}")
    rg = _radial_mesh_for(grid, m)
    try:
        lower, upper = lambda_star_bounds(N, g, gs)
    except ZeroDivisionError:
        lower, upper = 0.0, math.inf
    best = None
    runs = []
    for wd in widths:
        out = quotient_flow(rg, N, g, init=np.exp(-0.5 * (rg.r / wd) ** 2), tol_F=tol_F)
        runs.append(out)
        if best is None or out["F"] < best["F"]:
            best = out
    lam_F = float(best["F"])
    lam_B = math.nan
    binfo = {}
    if bisect:
        bg = rg if bisect_grid is None else bisect_grid
        hi0 = upper if math.isfinite(upper) and upper > 0 else max(2.0 * lam_F, 1e-3)
        lo0 = lower if lower > 0 else 0.5 * min(hi0, max(lam_F, 1e-6))
        if lo0 >= hi0:
            lo0 = 0.5 * hi0
        lam_B, binfo = bisect_lambda_star(N, g, (lo0, hi0), bg, m=m, solve_kwargs=solve_kwargs)
    prov = {"R": rg.R, "m": rg.m, "flow_status": best["status"], "flow_iterations": best["iterations"],
            "flow_values": ";".join(f"{o['F']:.10g}" for o in runs),
            "bisect_calls": binfo.get("calls", 0),
            "integrable_tail": tail_integrable(g, rg.d)}
    return ThresholdResult(N, lam_F, lam_B, lower, upper, prov)


# ---------------------------------------------------------------------------
# phase diagram
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseCell:
    N: float
    lam: float
    diagnosis: str
    energy: float
    residual: float
    raw_diagnosis: str = ""
    L: float = math.nan

    def as_row(self) -> dict:
        return {"N": self.N, "lambda": self.lam, "diagnosis": self.diagnosis,
                "energy": self.energy, "residual": self.residual}


def _solve_cell(N, lam, g, grid, warm, refine, solve_kwargs):
    """Solve one cell.

    A collapse triggered by the resolution limit is re-run on boxes of half
    the width (same ``n``), at most ``refine`` times: a minimizer about one
    cell wide looks like a collapse on the coarse lattice.  A refined run
    replaces the coarse verdict only if it converges.
    """
    cfg = SolveConfig(lam=lam, N=N, g=g, grid=grid, init=warm if warm is not None else "gaussian",
                      **solve_kwargs)
    rep = minimize(cfg)
    if not (rep.diagnosis == "collapse" and rep.info.get("collapse_reason") == "resolution"):
        return rep, grid
    fine = grid
    for _ in range(refine):
        fine = make_grid(fine.d, 0.5 * fine.L, fine.n)
        logger.info("cell N=%g lambda=%g under-resolved; retrying at L=%g", N, lam, fine.L)
        frep = minimize(SolveConfig(lam=lam, N=N, g=g, grid=fine, **solve_kwargs))
        if frep.converged:
            frep.notes.append(f"resolved on a refined box L={fine.L:g} after a resolution-limited collapse")
            return frep, fine
        if not (frep.diagnosis == "collapse" and frep.info.get("collapse_reason") == "resolution"):
            break
    return rep, grid


def _phase_row(N, lams, g, grid, lam_star, boundary_rel, refine, solve_kwargs):
    cells = {}
    warm = None
    # descending depth: a localized solution at large lambda seeds the next column
    for lam in sorted(lams, reverse=True):
        try:
            rep, used = _solve_cell(N, lam, g, grid, warm, refine, solve_kwargs)
            diag, energy, res = rep.diagnosis, rep.energy, rep.residual
            warm = rep.u if rep.converged else None
            L_used = used.L
        except Exception as exc:  # one failed cell must not sink the diagram
            logger.warning("phase cell N=%g lambda=%g failed: %s", N, lam, exc)
            diag, energy, res, L_used = "numerical_failure", math.nan, math.nan, math.nan
            warm = None
        label = diag
        if lam_star is not None and math.isfinite(lam_star) and abs(lam / lam_star - 1.0) <= boundary_rel:
            label = "boundary"
        cells[lam] = PhaseCell(N, lam, label, energy, res, diag, L_used)
    return [cells[lam] for lam in lams]


def phase_diagram(N_list, lambda_list, g: Potential, grid: GridSpec, lambda_star: dict | None = None,
                  boundary_rel: float = 0.02, workers: int = 1, solve_kwargs: dict | None = None,
                  refine: int = 2, n_star: float | None = None) -> list[PhaseCell]:
    """Diagnose every ``(N, lambda)`` cell with the box solver.

    Within a row the columns are solved from the deepest well down, each warm
    started from the previous localized solution.  Cells within
    ``boundary_rel`` of ``lambda_star[N]`` (when supplied) are labelled
    ``"boundary"``.  Cells whose collapse was triggered by the resolution limit
    are re-solved on boxes of half the width, at most ``refine`` times, and
    take the refined result only if it converges; the box actually used is
    recorded in ``PhaseCell.L``.  With ``n_star`` given, rows with
    ``N >= n_star`` are not refined: the lattice only lowers the discrete
    critical mass, so a finer box cannot turn a supercritical collapse into a
    genuine minimizer, and the marginal collapse at ``N = n_star`` is slow on
    fine boxes.  Rows are independent and may run on ``workers`` threads;
    the output is always in ``(row, column)`` order.
    """
    kw = dict(solve_kwargs or {})
    lams = [float(x) for x in lambda_list]
    Ns = [float(x) for x in N_list]
    ls = lambda_star or {}

    def job(N):
        r = refine if n_star is None or N < n_star else 0
        return _phase_row(N, lams, g, grid, ls.get(N), boundary_rel, r, kw)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(job, Ns))
    else:
        rows = [job(N) for N in Ns]
    return [c for row in rows for c in row]


__all__ = ["ThresholdResult", "PhaseCell", "lambda_star_bounds", "quotient_flow", "bisect_lambda_star",
           "estimate_lambda_star", "phase_diagram"]
