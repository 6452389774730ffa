"""Ground state of ``-Delta Q + Q = (|.|^-2 * Q^2) Q`` on the radial mesh.

``Q`` is obtained as the maximizer of the scale-free quotient
``W(u) = D/(T M)`` over radial functions.  A maximizer is determined only up to
amplitude and dilation; both are fixed afterwards by exact algebra:

* a dilation ``u(x) -> u(b x)`` is realised by moving the nodes
  (``R -> R/b``), which scales the discrete quantities exactly as their
  continuum counterparts, ``T -> b^(2-d) T``, ``M -> b^-d M``,
  ``D -> b^(2-2d) D``;
* an amplitude ``a`` multiplies ``T`` and ``M`` by ``a^2`` and ``D`` by ``a^4``.

Choosing ``b^2 = M/T`` and ``a^2 = 2 b^d T / D`` gives ``T = M = D/2`` to
rounding error, and ``N* = int Q^2`` with ``W(Q) = 2/N*``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .functionals import PohozaevReport, pohozaev_from_terms
from .grid import (RadialField, RadialGrid, radial_kinetic, radial_mass,
                   radial_operator_bands, riesz_convolve_radial)

logger = logging.getLogger(__name__)

# Gaussian width whose kinetic/mass ratio is 1 in three dimensions
_UNIT_SCALE_WIDTH = math.sqrt(1.5)


class GroundStateError(RuntimeError):
    """Quotient ascent failed to converge; ``trajectory`` holds the residual history."""

    def __init__(self, msg, trajectory):
        super().__init__(msg)
        self.trajectory = trajectory


@dataclass
class GroundState:
    """Rescaled extremal ``Q`` with its characteristic quantities.

    Attributes
    ----------
    Q : RadialField
        Profile on the mesh ``(0, R_eff)`` produced by the final dilation.
    n_star : float
        ``int Q^2``.
    T, M, D : float
        Kinetic, mass and nonlocal terms at ``Q``.
    gn_constant : float
        ``2 / n_star``.
    decay_rate : float
        Exponential tail rate fitted on ``[0.4 R_eff, 0.7 R_eff]``.
    provenance : dict
        Mesh, tolerances, iteration count and seed.
    """

    Q: RadialField
    n_star: float
    T: float
    M: float
    D: float
    gn_constant: float
    decay_rate: float
    provenance: dict = field(default_factory=dict)

    @property
    def rgrid(self) -> RadialGrid:
        return self.Q.rgrid

    def as_row(self) -> dict:
        row = {"n_star": self.n_star, "T": self.T, "M": self.M, "D": self.D,
               "gn_constant": self.gn_constant, "decay_rate": self.decay_rate}
        row.update(self.provenance)
        return row


def _initial_profile(r, seed, width):
    u = np.exp(-0.5 * (r / width) ** 2)
    if seed is None:
        return u
    rng = np.random.default_rng(seed)
    # smooth positive perturbation and a random width change
    s = width * (1.0 + 0.2 * (rng.random() - 0.5))
    bump = sum(rng.normal(scale=0.1) * np.cos((k + 1) * r / (2.0 * s)) for k in range(4))
    return np.exp(-0.5 * (r / s) ** 2) * np.exp(bump)


def _quotient_ascent(rg: RadialGrid, u, tau, tol, max_iter):
    """Fixed-point ascent of ``W``; returns ``(u, T, M, D, residual, iterations, history)``.

    Each step solves ``(-Delta_h + T/M) v = (2T/D) V u``, whose fixed points are
    the critical points of ``W``.  The update ``v - u`` is stripped of its
    components along ``u`` (amplitude) and along the dilation generator
    ``r u' + (d/2) u``: ``W`` is blind to both in the continuum, and on the
    mesh the dilation direction carries only discretization drift.
    """
    w = rg.weights
    r = rg.r
    d = rg.d
    history = []
    res = math.inf
    for it in range(1, max_iter + 1):
        U = RadialField(rg, u)
        T = radial_kinetic(U)
        M = radial_mass(U)
        V = riesz_convolve_radial(RadialField(rg, u * u)).values
        D = float(np.dot(w, u * u * V))
        v = solve_banded((1, 1), radial_operator_bands(rg, T / M), (2.0 * T / D) * V * u)
        step = v - u
        xi = r * np.gradient(u, r) + 0.5 * d * u
        for direction in (xi, u):
            step -= np.dot(w, step * direction) / np.dot(w, direction * direction) * direction
        res = math.sqrt(np.dot(w, step * step) / M)
        history.append(res)
        if res < tol:
            return u, T, M, D, res, it, history
        u = np.abs(u + tau * step)
        u *= math.sqrt(M / np.dot(w, u * u))
    return u, T, M, D, res, max_iter, history


def compute_Q(rgrid: RadialGrid, tol: float = 1e-9, max_iter: int = 2000, tau: float = 1.0,
              seed: int | None = None, width: float | None = None) -> GroundState:
    """Compute the ground state ``Q`` and the critical mass ``N*``.

    Parameters
    ----------
    rgrid : RadialGrid
        Mesh for the ascent (``d = 3``).  The returned profile lives on the
        dilated mesh ``(0, R c)`` with ``c = sqrt(T/M)`` of the maximizer,
        which is close to one for the default initial width.
    tol : float
        Stop when the relative size of the projected update falls below ``tol``.
    seed : int, optional
        Perturbs the initial profile (shape and width) reproducibly.
    width : float, optional
        Width of the initial Gaussian.

    Raises
    ------
    GroundStateError
        If the ascent does not reach ``tol`` within ``max_iter`` steps.
    """
    if rgrid.d != 3:
        raise ValueError("ground states are computed for d = 3 only")
    if rgrid.m < 2048 or rgrid.R < 30:
        logger.warning("compute_Q on a coarse mesh (m=%d, R=%g); N* accuracy will suffer",
                       rgrid.m, rgrid.R)
    width = _UNIT_SCALE_WIDTH if width is None else float(width)
    u0 = _initial_profile(rgrid.r, seed, width)
    u, T, M, D, res, its, hist = _quotient_ascent(rgrid, u0, tau, tol, max_iter)
    if res >= tol:
        raise GroundStateError(f"quotient ascent stalled at residual {res:.3e} after {its} steps", hist)

    c = math.sqrt(T / M)
    a2 = 2.0 * T / (c ** 3 * D)
    qgrid = rgrid.rescaled(c)
    Q = RadialField(qgrid, math.sqrt(a2) * u)
    Tq = radial_kinetic(Q)
    Mq = radial_mass(Q)
    Dq = float(np.dot(qgrid.weights, Q.values ** 2 * riesz_convolve_radial(RadialField(qgrid, Q.values ** 2)).values))
    rate, _, _ = decay_fit(Q)
    prov = {"m": rgrid.m, "R": rgrid.R, "R_eff": qgrid.R, "tol": tol, "iterations": its,
            "residual": res, "seed": -1 if seed is None else int(seed)}
    return GroundState(Q, Mq, Tq, Mq, Dq, 2.0 / Mq, rate, prov)


@dataclass(frozen=True)
class DecayFit:
    rate: float
    window: tuple[float, float]
    exponential: bool
    flags: tuple[str, ...] = ()


def decay_fit(Q: RadialField, window: tuple[float, float] = (0.4, 0.7),
              rel_tol: float = 0.05) -> tuple[float, tuple[float, float], DecayFit]:
    """Least-squares slope of ``-log Q`` over ``window`` (fractions of ``R``).

    Returns ``(rate, (r_lo, r_hi), details)``.  The window shrinks toward the
    origin if ``Q`` underflows inside it.  ``details.exponential`` is false when
    the slopes of the two window halves differ by more than ``rel_tol``
    relative, which is the signature of a non-exponential (e.g. algebraic) tail.
    """
    rg = Q.rgrid
    r = rg.r
    q = Q.values
    lo, hi = window[0] * rg.R, window[1] * rg.R
    flags = []
    tiny = 1e-280
    sel = (r >= lo) & (r <= hi)
    while np.any(q[sel] <= tiny):
        hi = lo + 0.8 * (hi - lo)
        lo *= 0.8
        sel = (r >= lo) & (r <= hi)
        flags.append("window shrunk: profile underflows")
        if sel.sum() < 8:
            raise ValueError("profile vanishes before any usable fit window")
    y = -np.log(q[sel])
    x = r[sel]
    rate = float(np.polyfit(x, y, 1)[0])
    mid = 0.5 * (lo + hi)
    halves = [np.polyfit(x[s], y[s], 1)[0] for s in (x <= mid, x > mid)]
    spread = abs(halves[0] - halves[1]) / max(abs(rate), 1e-300)
    expo = bool(spread <= rel_tol and rate > 0)
    if not expo:
        flags.append(f"non-exponential tail (half-window slopes {halves[0]:.4g}, {halves[1]:.4g})")
    return rate, (float(lo), float(hi)), DecayFit(rate, (float(lo), float(hi)), expo, tuple(flags))


def pohozaev_check(gs: GroundState) -> PohozaevReport:
    """Virial residuals at the computed ground state."""
    return pohozaev_from_terms(gs.T, gs.M, gs.D, gs.rgrid.d)


def scaled_profile(gs: GroundState, amplitude: float = 1.0, dilation: float = 1.0) -> RadialField:
    """``amplitude * Q(dilation * x)``, exact on the dilated mesh ``(0, R_eff/dilation)``."""
    return RadialField(gs.rgrid.rescaled(1.0 / dilation), amplitude * gs.Q.values)
