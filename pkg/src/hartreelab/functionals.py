"""Energies, quotients and virial-type residuals of a sampled function.

Every routine accepts either a box :class:`~hartreelab.grid.Field` or a
:class:`~hartreelab.grid.RadialField`; the two share the notation

* ``T = int |grad u|^2`` (kinetic),
* ``M = int u^2`` (mass),
* ``D = int int u^2(x) u^2(y) |x - y|^-2`` (nonlocal),
* ``P = int g u^2`` (well) or ``int |x|^p u^2`` (limit problem).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .grid import (RadialField, hartree_term, kinetic_energy, radial_hartree,
                   radial_kinetic, radial_mass, sampled_kernel, sphere_area)
from .potentials import Potential


def _is_radial(u) -> bool:
    return isinstance(u, RadialField)


def _weights_and_radius(u):
    if _is_radial(u):
        rg = u.rgrid
        return rg.weights, rg.r, rg.d
    g = u.grid
    return g.dv, g.radius(), g.d


def basic_terms(u) -> tuple[float, float, float]:
    """Return ``(T, M, D)``."""
    if _is_radial(u):
        return radial_kinetic(u), radial_mass(u), radial_hartree(u)
    return kinetic_energy(u), u.mass(), hartree_term(u)


def well_values(u, g: Potential) -> np.ndarray:
    """``g`` sampled where ``u`` lives."""
    if _is_radial(u):
        return g(u.rgrid.r)
    return g.on_grid(u.grid)


def weighted_integral(u, f) -> float:
    """``int f u^2`` with the quadrature matching ``u``'s discretization."""
    w, _, _ = _weights_and_radius(u)
    return float(np.sum(w * f * u.values ** 2))


# ---------------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyBreakdown:
    """Components ``T, P, D, M`` and the energies assembled from them.

    For the well problem ``E = T + lam P - D/2`` and ``E_hat = E - lam M``;
    for the limit problem ``P`` is ``int |x|^p u^2`` and ``E_inf = T + P - D/2``.
    Entries that do not apply are ``nan``.
    """

    T: float
    P: float
    D: float
    M: float
    lam: float
    E: float
    E_hat: float
    E_inf: float

    @classmethod
    def assemble(cls, T, P, D, M, lam, limit=False) -> "EnergyBreakdown":
        T, P, D, M, lam = map(float, (T, P, D, M, lam))
        if limit:
            return cls(T, P, D, M, lam, math.nan, math.nan, T + P - 0.5 * D)
        E = T + lam * P - 0.5 * D
        return cls(T, P, D, M, lam, E, E - lam * M, math.nan)

    def as_dict(self) -> dict:
        return asdict(self)


def energy_breakdown(u, lam: float, g: Potential, variant: str = "lambda") -> EnergyBreakdown:
    """Evaluate all energy components of ``u``.

    Parameters
    ----------
    u : Field or RadialField
    lam : float
        Well depth (ignored by the limit variant).
    g : Potential
        A bounded well for ``variant="lambda"``; any form for ``variant="limit"``,
        which always uses ``|x|^p`` with ``g.p``.
    variant : {"lambda", "limit"}
    """
    T, M, D = basic_terms(u)
    _, r, _ = _weights_and_radius(u)
    if variant == "limit":
        P = weighted_integral(u, r ** g.p)
        return EnergyBreakdown.assemble(T, P, D, M, lam, limit=True)
    if variant != "lambda":
        raise ValueError(f"unknown variant {variant!r}")
    if not g.bounded:
        raise ValueError("the limit potential only enters the limit energy (variant='limit')")
    P = weighted_integral(u, well_values(u, g))
    return EnergyBreakdown.assemble(T, P, D, M, lam)


def action_I(u) -> float:
    """``I(u) = (T + M)/2 - D/4``."""
    T, M, D = basic_terms(u)
    return 0.5 * (T + M) - 0.25 * D


# ---------------------------------------------------------------------------
# quotients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuotientReport:
    """Raw values of the inequality quotients (``F`` is ``nan`` without a well)."""

    gn: float
    sobolev: float
    hardy: float
    ckn: float
    F: float

    def as_dict(self) -> dict:
        return asdict(self)


def critical_norm_sq(u) -> float:
    """``||u||_{2*}^2`` with ``2* = 2d/(d-2)``."""
    w, _, d = _weights_and_radius(u)
    q = 2.0 * d / (d - 2.0)
    return float(np.sum(w * np.abs(u.values) ** q) ** (2.0 / q))


def inverse_square_moment(u) -> float:
    """``int u^2 / |x|^2``.

    On the box the origin sample uses the same corrected singular weights as the
    Riesz kernel, so this is the convolution ``(|.|^-2 * u^2)(0)``.
    """
    if _is_radial(u):
        rg = u.rgrid
        return float(np.sum(rg.weights * u.values ** 2 / rg.r ** 2))
    g = u.grid
    k = np.fft.fftshift(sampled_kernel(g.d, g.L, g.n))
    return float(np.sum(k * u.values ** 2) * g.dv)


def threshold_quotient(u, g: Potential, terms=None) -> float:
    """``F(u) = (T - D/2) / int (1 - g) u^2``."""
    T, M, D = basic_terms(u) if terms is None else terms
    den = weighted_integral(u, 1.0 - well_values(u, g))
    if not den > 1e-14 * max(M, 1e-300):
        raise ValueError("u concentrated where g = 1: int (1-g) u^2 vanishes")
    return (T - 0.5 * D) / den


def quotients(u, p: float, g: Potential | None = None) -> QuotientReport:
    """All inequality quotients of ``u``.

    ``gn = D/(T M)``, ``sobolev = T/||u||_{2*}^2``, ``hardy = int u^2|x|^-2 / T``,
    ``ckn = T^(p/(2(2+p))) (int |x|^p u^2)^(1/(2+p)) / M^(1/2)`` (invariant under
    dilations and amplitude changes) and ``F`` as in :func:`threshold_quotient`.
    """
    T, M, D = basic_terms(u)
    if not (T > 0 and M > 0):
        raise ValueError("quotients need a nonzero, non-constant u")
    _, r, _ = _weights_and_radius(u)
    Pp = weighted_integral(u, r ** p)
    ckn = T ** (p / (2.0 * (2.0 + p))) * Pp ** (1.0 / (2.0 + p)) / math.sqrt(M)
    F = math.nan if g is None else threshold_quotient(u, g, (T, M, D))
    return QuotientReport(
        gn=D / (T * M),
        sobolev=T / critical_norm_sq(u),
        hardy=inverse_square_moment(u) / T,
        ckn=ckn,
        F=F,
    )


@lru_cache(maxsize=None)
def sobolev_constant(d: int = 3) -> float:
    """Sobolev quotient ``T/||u||_{2*}^2`` of the extremal ``(1 + r^2)^(-(d-2)/2)``.

    Evaluated by adaptive radial quadrature on ``(0, inf)``; for ``d = 3`` this
    is ``3 (pi/2)^(4/3)``.
    """
    s = sphere_area(d)
    q = 2.0 * d / (d - 2.0)

    def du2(r):
        return ((d - 2.0) * r * (1.0 + r * r) ** (-d / 2.0)) ** 2 * r ** (d - 1)

    def uq(r):
        return (1.0 + r * r) ** (-(d - 2.0) / 2.0 * q) * r ** (d - 1)

    T = s * quad(du2, 0.0, np.inf, epsabs=0.0, epsrel=1e-13, limit=200)[0]
    Lq = s * quad(uq, 0.0, np.inf, epsabs=0.0, epsrel=1e-13, limit=200)[0]
    return T / Lq ** (2.0 / q)


# ---------------------------------------------------------------------------
# virial identities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PohozaevReport:
    """Residuals of the virial identities, normalized by ``max(T, M, D)``.

    ``r1 = (d-2)/2 T + d/2 M - (d-1)/2 D``, ``r2a = T - M``, ``r2b = T - D/2``.
    """

    r1: float
    r2a: float
    r2b: float

    @property
    def max_abs(self) -> float:
        return max(abs(self.r1), abs(self.r2a), abs(self.r2b))

    def as_dict(self) -> dict:
        return asdict(self)


def pohozaev_from_terms(T: float, M: float, D: float, d: int = 3) -> PohozaevReport:
    scale = max(T, M, D)
    if not scale > 0:
        return PohozaevReport(0.0, 0.0, 0.0)
    r1 = (d - 2) / 2.0 * T + d / 2.0 * M - (d - 1) / 2.0 * D
    return PohozaevReport(r1 / scale, (T - M) / scale, (T - 0.5 * D) / scale)


def pohozaev(u) -> PohozaevReport:
    T, M, D = basic_terms(u)
    _, _, d = _weights_and_radius(u)
    return pohozaev_from_terms(T, M, D, d)


__all__ = [
    "EnergyBreakdown", "QuotientReport", "PohozaevReport",
    "basic_terms", "energy_breakdown", "action_I", "quotients", "threshold_quotient",
    "critical_norm_sq", "inverse_square_moment", "sobolev_constant", "pohozaev",
    "pohozaev_from_terms", "well_values", "weighted_integral",
]
