"""Steep-well potential families and their validation.

A bounded well ``g`` has ``g(0) = 0`` as its unique minimum, ``0 <= g <= 1`` and
``g(x) ~ |x|^p`` near the origin.  The unbounded power ``|x|^p`` is carried by
the same type (form ``"limit"``) because the limit problem uses it, but it is
rejected wherever a bounded well is required.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import beta

from . import _accel
from .grid import Field, GridSpec, sphere_area


class PotentialForm(str, enum.Enum):
    SATURATING = "saturating"
    RATIONAL = "rational"
    LIMIT = "limit"
    TABULATED = "tabulated"


_ALIASES = {
    "saturating": PotentialForm.SATURATING,
    "saturatingpower": PotentialForm.SATURATING,
    "rational": PotentialForm.RATIONAL,
    "rationalpower": PotentialForm.RATIONAL,
    "limit": PotentialForm.LIMIT,
    "limitpower": PotentialForm.LIMIT,
    "tabulated": PotentialForm.TABULATED,
}


def parse_form(form) -> PotentialForm:
    if isinstance(form, PotentialForm):
        return form
    key = str(form).strip().lower().replace("_", "").replace("-", "")
    try:
        return _ALIASES[key]
    except KeyError:
        raise ValueError(f"unknown potential form {form!r}") from None


@dataclass(frozen=True)
class Potential:
    """A well ``g(x)`` of one of the supported forms.

    Parameters
    ----------
    form : PotentialForm
        ``saturating``: ``min(|x|^p, 1)``; ``rational``: ``|x|^p / (1 + |x|^p)``;
        ``limit``: ``|x|^p`` (unbounded); ``tabulated``: grid samples in ``table``.
    p : float
        Exponent of the power law at the origin.
    table : Field, optional
        Samples for the tabulated form.
    flags : tuple of str
        Warnings attached at construction (for example a non-integrable ``1 - g``).
    """

    form: PotentialForm
    p: float
    table: Field | None = field(default=None, compare=False, repr=False)
    flags: tuple[str, ...] = ()

    @property
    def bounded(self) -> bool:
        return self.form is not PotentialForm.LIMIT

    @property
    def is_radial(self) -> bool:
        return self.form is not PotentialForm.TABULATED

    def __call__(self, r) -> np.ndarray:
        """Evaluate ``g`` at radii ``r`` (analytic forms only)."""
        r = np.asarray(r, dtype=np.float64)
        rp = r ** self.p
        if self.form is PotentialForm.SATURATING:
            return np.minimum(rp, 1.0)
        if self.form is PotentialForm.RATIONAL:
            return rp / (1.0 + rp)
        if self.form is PotentialForm.LIMIT:
            return rp
        raise TypeError("a tabulated potential has no radial formula; use on_grid")

    def on_grid(self, grid: GridSpec) -> np.ndarray:
        """Samples of ``g`` on a box grid."""
        if self.form is not PotentialForm.TABULATED:
            return self(grid.radius())
        tab = self.table
        if tab.grid == grid:
            return tab.values
        if grid.d != 3 or tab.grid.d != 3:
            raise ValueError("tabulated potentials can only be resampled in d = 3")
        pts = np.stack([np.broadcast_to(c, grid.shape).ravel() for c in grid.coords()], axis=1)
        out = _accel.trilinear(tab.values, -tab.grid.L, tab.grid.h, pts)
        # outside the table the well is taken as saturated
        inside = np.all(np.abs(pts) < tab.grid.L - tab.grid.h, axis=1)
        return np.where(inside, out, 1.0).reshape(grid.shape)


def make_potential(form, p: float, table: Field | None = None) -> Potential:
    """Construct a potential, attaching integrability and boundedness flags."""
    form = parse_form(form)
    p = float(p)
    if not p > 0:
        raise ValueError(f"p must be positive, got p={p}")
    flags: list[str] = []
    if form is PotentialForm.TABULATED:
        if table is None:
            raise ValueError("tabulated potential needs a table Field")
    elif table is not None:
        raise ValueError("only the tabulated form takes a table")
    if form is PotentialForm.LIMIT:
        flags.append("unbounded: limit problem only")
    if form is PotentialForm.RATIONAL:
        d = 3
        # 1 - g ~ |x|^-p, so (1-g)^(d/2) is integrable iff p d / 2 > d
        if p * d / 2.0 <= d:
            flags.append(f"1-g not in L^(d/2) for d={d} (tail exponent {p * d / 2.0:g} <= {d})")
    return Potential(form, p, table, tuple(flags))


def tail_integrable(g: Potential, d: int = 3) -> bool:
    """Whether ``(1 - g)^(d/2)`` is integrable over R^d."""
    if g.form is PotentialForm.SATURATING:
        return True
    if g.form is PotentialForm.RATIONAL:
        return g.p > 2.0
    if g.form is PotentialForm.LIMIT:
        return False
    tab = g.table
    shell = _outer_shell(tab.grid)
    return bool(np.max(1.0 - tab.values[shell]) < 1e-3)


def _outer_shell(grid: GridSpec) -> np.ndarray:
    idx = np.indices(grid.shape)
    return np.any((idx == 0) | (idx == grid.n - 1), axis=0)


@dataclass
class ValidationReport:
    """Per-clause results of the well checks; ``passed`` is the conjunction."""

    clauses: dict[str, bool]
    notes: list[str]
    limit_only: bool = False

    @property
    def passed(self) -> bool:
        return all(self.clauses.values())


def validate_m1_m2(g: Potential, grid: GridSpec, near_radius: float = 0.3,
                   ratio_band: tuple[float, float] = (0.9, 1.1)) -> ValidationReport:
    """Check boundedness, the unique minimum at the origin and the local power law.

    The power-law ratio ``g(x)/|x|^p`` is tested on samples with
    ``h <= |x| <= min(10 h, near_radius)``.  When no sample falls in that window
    (coarse grids) the analytic forms are probed on radii in the same band
    below the grid scale; a tabulated well is then reported as untestable.
    """
    vals = g.on_grid(grid)
    r = grid.radius()
    notes: list[str] = []
    clauses: dict[str, bool] = {}
    clauses["nonnegative"] = bool(np.min(vals) >= 0.0)
    clauses["bounded_by_one"] = bool(np.max(vals) <= 1.0)
    if not g.bounded:
        notes.append("limit potential: only valid for the limit problem")
    origin = grid.origin_index
    gmin = np.min(vals)
    at_min = np.argwhere(vals <= gmin)
    clauses["zero_at_origin"] = bool(vals[origin] == 0.0)
    unique = at_min.shape[0] == 1 and tuple(at_min[0]) == origin
    clauses["unique_minimum"] = bool(unique)
    if not unique:
        notes.append(f"minimum value {gmin:g} attained at {at_min.shape[0]} cells")

    lo, hi = grid.h, min(10.0 * grid.h, near_radius)
    band = (r >= lo * (1 - 1e-12)) & (r <= hi)
    if np.any(band):
        ratio = vals[band] / r[band] ** g.p
    elif g.is_radial:
        probe = np.geomspace(near_radius / 10.0, near_radius, 16)
        ratio = g(probe) / probe ** g.p
        notes.append("power-law window below grid scale; probed the formula directly")
    else:
        ratio = None
        notes.append("power-law window below grid scale; tabulated well not testable")
    if ratio is not None:
        ok = bool(np.all((ratio >= ratio_band[0]) & (ratio <= ratio_band[1])))
        if not ok:
            notes.append(f"g/|x|^p ranges over [{ratio.min():.4g}, {ratio.max():.4g}]")
        clauses["power_law"] = ok
    return ValidationReport(clauses, notes, limit_only=not g.bounded)


def one_minus_g_norm(g: Potential, d: int = 3) -> float:
    """``(int (1 - g)^(d/2))^(2/d)``; ``inf`` flags a non-integrable well.

    Closed forms are used for the saturating and rational families (both reduce
    to a Beta integral); a tabulated well is summed on its grid.
    """
    if not g.bounded:
        raise ValueError("1-g norm is undefined for the unbounded limit potential")
    s = sphere_area(d)
    half = d / 2.0
    if g.form is PotentialForm.SATURATING:
        # |S| int_0^1 r^(d-1) (1 - r^p)^(d/2) dr
        integral = s / g.p * beta(d / g.p, half + 1.0)
    elif g.form is PotentialForm.RATIONAL:
        # |S| int_0^inf r^(d-1) (1 + r^p)^(-d/2) dr
        if not g.p > 2.0:
            return math.inf
        integral = s / g.p * beta(d / g.p, half - d / g.p)
    else:
        tab = g.table
        if tab.grid.d != d:
            raise ValueError("table dimension does not match d")
        if not tail_integrable(g, d):
            return math.inf
        integral = float(np.sum(np.clip(1.0 - tab.values, 0.0, None) ** half) * tab.grid.dv)
    return float(integral ** (2.0 / d))
