"""Periodic boxes, radial meshes and the |x|^-2 convolution.

Two discretizations live here:

* :class:`GridSpec` / :class:`Field` -- a periodic box ``[-L, L)^d`` with ``n``
  points per axis.  Derivatives are spectral; the Riesz convolution
  ``(|.|^-2 * rho)(x)`` is a circular convolution against a grid-sampled kernel
  whose few central entries carry a locally corrected singular quadrature.
* :class:`RadialGrid` / :class:`RadialField` -- a midpoint mesh on ``(0, R)``
  for radially symmetric functions in three dimensions.  The convolution
  integrates the logarithmic kernel analytically cell by cell.

Sampled kernel
--------------
For ``j != 0`` the kernel is ``1/|j h|^2``.  A plain lattice sum of a function
against ``|x|^-2`` has an error expansion in powers of ``h`` whose coefficients
are continued lattice sums (Epstein zeta values).  The origin weight removes the
``O(h^(d-2))`` term and short stencils remove the ``O(h^d)`` and ``O(h^(d+2))``
terms, leaving an ``O(h^(d+4))`` rule for smooth densities.  The same kernel
array is used by the FFT path and by :func:`brute_force_riesz`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
from scipy.interpolate import CubicSpline
from scipy.special import gamma, gammaincc

from . import _accel

SUPPORTED_DIMS = (3, 4, 5)


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d (4*pi for d = 3)."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


# ---------------------------------------------------------------------------
# box grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Periodic box ``[-L, L)^d`` sampled at ``n`` points per axis."""

    d: int
    L: float
    n: int

    def __post_init__(self):
        if self.d not in SUPPORTED_DIMS:
            raise ValueError(f"d >= 3 required (supported: {SUPPORTED_DIMS}), got d={self.d}")
        if self.n % 2 or self.n < 8:
            raise ValueError(f"n must be even and >= 8, got n={self.n}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got L={self.L}")
        object.__setattr__(self, "L", float(self.L))

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def dv(self) -> float:
        """Cell volume ``h^d``."""
        return self.h ** self.d

    @property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.n)

    @property
    def origin_index(self) -> tuple[int, ...]:
        return (self.n // 2,) * self.d

    def coords(self) -> list[np.ndarray]:
        """Sparse (broadcastable) coordinate arrays, one per axis."""
        return np.meshgrid(*([self.axis] * self.d), indexing="ij", sparse=True)

    def radius(self) -> np.ndarray:
        return _radius(self.d, self.L, self.n)

    def k2(self) -> np.ndarray:
        """``|k|^2`` on the ``rfftn`` half-spectrum layout."""
        return _k2(self.d, self.L, self.n)


def make_grid(d: int, L: float, n: int) -> GridSpec:
    """Build and validate a :class:`GridSpec`."""
    return GridSpec(int(d), float(L), int(n))


@lru_cache(maxsize=8)
def _radius(d, L, n):
    g = GridSpec(d, L, n)
    r2 = sum(c * c for c in g.coords())
    r = np.sqrt(r2)
    r.setflags(write=False)
    return r


@lru_cache(maxsize=8)
def _k2(d, L, n):
    h = 2.0 * L / n
    k_full = 2.0 * np.pi * np.fft.fftfreq(n, d=h)
    k_half = 2.0 * np.pi * np.fft.rfftfreq(n, d=h)
    axes = [k_full] * (d - 1) + [k_half]
    grids = np.meshgrid(*axes, indexing="ij", sparse=True)
    k2 = sum(k * k for k in grids)
    k2.setflags(write=False)
    return k2


@lru_cache(maxsize=8)
def _rfft_weights(n, d):
    # multiplicity of each rfftn coefficient in the full spectrum
    w = np.full(n // 2 + 1, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    shape = (1,) * (d - 1) + (n // 2 + 1,)
    w = w.reshape(shape)
    w.setflags(write=False)
    return w


@dataclass
class Field:
    """Real samples of ``u(x)`` on a :class:`GridSpec` (array of shape ``grid.shape``)."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.size != self.grid.n ** self.grid.d:
            raise ValueError(f"field has {v.size} values, grid needs {self.grid.n ** self.grid.d}")
        v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        self.values = v

    def mass(self) -> float:
        return float(np.sum(self.values ** 2) * self.grid.dv)

    def scaled(self, c: float) -> "Field":
        return Field(self.grid, c * self.values)

    @classmethod
    def from_function(cls, grid: GridSpec, func) -> "Field":
        """Sample ``func(*coords)`` on the grid."""
        return cls(grid, np.broadcast_to(func(*grid.coords()), grid.shape).copy())


def fourier_power_sum(grid: GridSpec, uhat: np.ndarray, weight=None) -> float:
    """``h^d / n^d * sum_k weight(k) |uhat_k|^2`` over the full spectrum, from rfftn data."""
    w = _rfft_weights(grid.n, grid.d)
    p = (uhat.real ** 2 + uhat.imag ** 2) * w
    if weight is not None:
        p = p * weight
    return float(np.sum(p) * grid.dv / grid.n ** grid.d)


def kinetic_energy(u: Field) -> float:
    """Spectral ``int |grad u|^2`` (exact for band-limited periodic samples)."""
    g = u.grid
    return fourier_power_sum(g, sfft.rfftn(u.values), g.k2())


def laplacian(u: Field) -> Field:
    g = u.grid
    return Field(g, sfft.irfftn(-g.k2() * sfft.rfftn(u.values), s=g.shape))


# ---------------------------------------------------------------------------
# singular kernel
# ---------------------------------------------------------------------------

def _lattice(d, jmax):
    r = np.arange(-jmax, jmax + 1, dtype=np.float64)
    J = np.stack(np.meshgrid(*([r] * d), indexing="ij"), -1).reshape(-1, d)
    q = np.sum(J * J, axis=1)
    keep = q > 0
    return J[keep], q[keep]


@lru_cache(maxsize=None)
def epstein_zeta(d: int, sigma: float = 2.0, jmax: int = 7) -> float:
    """Analytic continuation of ``sum'_{j in Z^d} |j|^-sigma`` by Ewald splitting."""
    s = sigma / 2.0
    _, q = _lattice(d, jmax)
    x = math.pi * q
    a2 = d / 2.0 - s
    total = np.sum(_gamma_tail(s, x) / x ** s + _gamma_tail(a2, x) / x ** a2)
    total += 1.0 / (s - d / 2.0) - 1.0 / s
    return float(total * math.pi ** s / gamma(s))


@lru_cache(maxsize=None)
def quartic_lattice_sum(d: int, jmax: int = 7) -> float:
    """Continued value of ``sum'_j j_1^4 |j|^-2``.

    Written through the cubic harmonic ``K4 = sum_i j_i^4 - 3|j|^4/(d+2)``;
    the ``|j|^4`` remainder contributes ``E(-2) = 0``.
    """
    s = 1.0
    J, q = _lattice(d, jmax)
    x = math.pi * q
    k4 = np.sum(J ** 4, axis=1) - 3.0 / (d + 2) * q * q
    a2 = d / 2.0 + 4.0 - s
    total = np.sum(k4 * (_gamma_tail(s, x) / x ** s + _gamma_tail(a2, x) / x ** a2))
    return float(total * math.pi ** s / gamma(s) / d)


def _gamma_tail(a, x):
    return gammaincc(a, x) * gamma(a)


def _stencil_coefficients(d):
    """Central kernel corrections (in units of ``1/h^2``), keyed by integer offset."""
    e2 = epstein_zeta(d, 2.0)
    e0 = -1.0  # Epstein zeta at 0 is -1 for every lattice
    s4 = quartic_lattice_sum(d)
    c2 = -e0 / (2 * d)
    c4a = (-1.0 / d - s4) / 24.0
    c4b = s4 / (4.0 * (d - 1))
    corr: dict[tuple[int, ...], float] = {}

    def add(off, c):
        corr[off] = corr.get(off, 0.0) + c

    zero = (0,) * d
    add(zero, -e2)
    second = ((0, -2.0), (1, 1.0), (-1, 1.0))
    for ax in range(d):
        for s, c in second:
            off = [0] * d
            off[ax] = s
            add(tuple(off), c2 * c)
        for s, c in ((0, 6.0), (1, -4.0), (-1, -4.0), (2, 1.0), (-2, 1.0)):
            off = [0] * d
            off[ax] = s
            add(tuple(off), c4a * c)
    for a in range(d):
        for b in range(a + 1, d):
            for sa, ca in second:
                for sb, cb in second:
                    off = [0] * d
                    off[a] = sa
                    off[b] = sb
                    add(tuple(off), c4b * ca * cb)
    return corr


@lru_cache(maxsize=4)
def sampled_kernel(d: int, L: float, n: int) -> np.ndarray:
    """The discretized ``|x|^-2`` in FFT (origin-first) ordering, minimum-image distances."""
    g = GridSpec(d, L, n)
    h = g.h
    i = np.arange(n)
    ji = np.where(i < n // 2, i, i - n).astype(np.float64)
    grids = np.meshgrid(*([ji] * d), indexing="ij", sparse=True)
    q = sum(a * a for a in grids)
    with np.errstate(divide="ignore"):
        k = np.where(q > 0, 1.0 / np.where(q > 0, q, 1.0), 0.0)
    for off, c in _stencil_coefficients(d).items():
        k[tuple(o % n for o in off)] += c
    k = k / h ** 2
    k.setflags(write=False)
    return k


@lru_cache(maxsize=4)
def kernel_transform(d: int, L: float, n: int) -> np.ndarray:
    g = GridSpec(d, L, n)
    kh = sfft.rfftn(sampled_kernel(d, L, n)).real * g.dv
    kh.setflags(write=False)
    return kh


def riesz_convolve(rho: Field) -> Field:
    """Samples of ``(|.|^-2 * rho)(x)`` via forward FFT, kernel multiply, inverse FFT."""
    g = rho.grid
    return Field(g, riesz_values(g, rho.values))


def riesz_values(grid: GridSpec, rho: np.ndarray) -> np.ndarray:
    """Array-level :func:`riesz_convolve` used inside solver loops."""
    return sfft.irfftn(sfft.rfftn(rho) * kernel_transform(grid.d, grid.L, grid.n), s=grid.shape)


def brute_force_riesz(rho: Field) -> Field:
    """Direct ``O(n^(2d))`` periodic sum with the same kernel as :func:`riesz_convolve`."""
    g = rho.grid
    if g.n > 16:
        raise ValueError(f"brute_force_riesz is limited to n <= 16 (got n={g.n})")
    k = np.asarray(sampled_kernel(g.d, g.L, g.n))
    return Field(g, _accel.brute_riesz(rho.values, k) * g.dv)


def hartree_term(u: Field) -> float:
    """``D(u) = int int u^2(x) u^2(y) / |x-y|^2``."""
    rho = u.values ** 2
    return float(np.sum(rho * riesz_values(u.grid, rho)) * u.grid.dv)


# ---------------------------------------------------------------------------
# radial mesh (d = 3)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadialGrid:
    """Midpoint mesh ``r_j = (j + 1/2) R/m`` on ``(0, R)``; radial functions in R^d."""

    m: int
    R: float
    d: int = 3

    def __post_init__(self):
        if self.m < 256:
            raise ValueError(f"radial grid needs m >= 256, got m={self.m}")
        if not self.R > 0:
            raise ValueError(f"R must be positive, got R={self.R}")
        object.__setattr__(self, "R", float(self.R))

    @property
    def dr(self) -> float:
        return self.R / self.m

    @property
    def r(self) -> np.ndarray:
        return (np.arange(self.m) + 0.5) * self.dr

    @property
    def weights(self) -> np.ndarray:
        """Quadrature weights ``|S^(d-1)| r_j^(d-1) dr``."""
        return sphere_area(self.d) * self.r ** (self.d - 1) * self.dr

    def rescaled(self, c: float) -> "RadialGrid":
        """Same node count on ``(0, c R)``: maps samples ``u_j`` to ``u(r/c)``."""
        return RadialGrid(self.m, self.R * c, self.d)


@dataclass
class RadialField:
    rgrid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if v.size != self.rgrid.m:
            raise ValueError(f"radial field has {v.size} values, grid has m={self.rgrid.m}")
        if not np.all(np.isfinite(v)):
            raise ValueError("radial field values must be finite")
        self.values = v

    def mass(self) -> float:
        return radial_mass(self)

    def __call__(self, r):
        """Interpolate at radii ``r`` (cubic, zero beyond ``R``)."""
        return radial_interpolate(self, r)


def radial_mass(u: RadialField) -> float:
    return float(np.dot(u.rgrid.weights, u.values ** 2))


def _flux_coeffs(rg: RadialGrid) -> np.ndarray:
    # |S| r_{j+1/2}^(d-1) / dr on the m interfaces j+1/2 = (j+1) dr; last one faces u_m = 0
    rf = (np.arange(rg.m) + 1.0) * rg.dr
    return sphere_area(rg.d) * rf ** (rg.d - 1) / rg.dr


def radial_kinetic(u: RadialField) -> float:
    """Conservative finite-difference ``int |grad u|^2`` with ``u = 0`` beyond ``R``."""
    v = u.values
    du = np.diff(np.append(v, 0.0))
    return float(np.dot(_flux_coeffs(u.rgrid), du * du))


def radial_laplacian(u: RadialField) -> np.ndarray:
    """``Delta_h u``, i.e. minus half the gradient of :func:`radial_kinetic` per unit weight."""
    v = u.values
    c = _flux_coeffs(u.rgrid)
    flux = c * np.diff(np.append(v, 0.0))
    div = flux.copy()
    div[1:] -= flux[:-1]
    return div / u.rgrid.weights


def radial_operator_bands(rg: RadialGrid, shift: float) -> np.ndarray:
    """Banded (``solve_banded((1, 1), ...)``) form of ``-Delta_h + shift``."""
    c = _flux_coeffs(rg)
    w = rg.weights
    diag = c.copy()
    diag[1:] += c[:-1]
    ab = np.zeros((3, rg.m))
    ab[0, 1:] = -c[:-1] / w[:-1]
    ab[1] = diag / w + shift
    ab[2, :-1] = -c[:-1] / w[1:]
    return ab


@lru_cache(maxsize=8)
def _log_tables(m: int):
    # A[n] = int_n^{n+1} ln(n' + 1/2 + t) shifted to the i+k index; B[j + m] for j = k - i
    def F(x):
        return x * np.log(x) - x

    def H(x):
        ax = np.abs(x)
        return np.where(ax > 0, x * np.log(np.where(ax > 0, ax, 1.0)) - x, 0.0)

    nn = np.arange(2 * m, dtype=np.float64)
    A = F(nn + 1.5) - F(nn + 0.5)
    j = np.arange(-m, m, dtype=np.float64)
    B = H(j + 0.5) - H(j - 0.5)
    A.setflags(write=False)
    B.setflags(write=False)
    return A, B


def riesz_convolve_radial(rho: RadialField, method: str = "fft") -> RadialField:
    """``(2 pi / r) int_0^R s rho(s) ln((r+s)/|r-s|) ds`` on the nodes (d = 3 only).

    ``s rho(s)`` is frozen at each cell midpoint and the logarithm is integrated
    exactly over every cell, including the singular one.  The resulting weights
    split into a Hankel part (depending on ``i+k``) and a Toeplitz part
    (depending on ``k-i``); ``method="fft"`` evaluates both by FFT correlation,
    ``method="direct"`` sums them in ``O(m^2)``.  Both give the same discrete sum.
    """
    rg = rho.rgrid
    if rg.d != 3:
        raise ValueError("radial Riesz convolution is only available for d = 3")
    m = rg.m
    r = rg.r
    f = r * rho.values
    A, B = _log_tables(m)
    if method == "direct":
        s = _accel.radial_direct(f, np.asarray(A), np.asarray(B))
    elif method == "fft":
        s = _radial_fft_sum(f, A, B)
    else:
        raise ValueError(f"unknown method {method!r}")
    return RadialField(rg, 2.0 * math.pi / r * s * rg.dr)


def _radial_fft_sum(f, A, B):
    m = f.size
    g = f[::-1]
    nfft = sfft.next_fast_len(4 * m)
    G = sfft.rfft(g, nfft)
    # sum_k A[i+k] f[k] = (A * g)[i + m - 1]
    sa = sfft.irfft(sfft.rfft(A[: 2 * m - 1], nfft) * G, nfft)[m - 1: 2 * m - 1]
    # sum_k B[k-i] f[k] = (b * g)[2m - 2 - i] with b[j + m - 1] = B[j]
    b = B[1:]
    sb = sfft.irfft(sfft.rfft(b, nfft) * G, nfft)[m - 1: 2 * m - 1][::-1]
    return sa - sb


def radial_hartree(u: RadialField) -> float:
    rho = RadialField(u.rgrid, u.values ** 2)
    return float(np.dot(u.rgrid.weights, rho.values * riesz_convolve_radial(rho).values))


def radial_interpolate(u: RadialField, r) -> np.ndarray:
    """Cubic interpolation of a radial profile (even extension at 0, zero past R)."""

    rg = u.rgrid
    nodes = np.concatenate([-rg.r[:3][::-1], rg.r])
    vals = np.concatenate([u.values[:3][::-1], u.values])
    spline = CubicSpline(nodes, vals)
    r = np.asarray(r, dtype=np.float64)
    out = spline(np.minimum(r, rg.R))
    return np.where(r < rg.R, out, 0.0)


def radial_to_grid(u: RadialField, grid: GridSpec, center=None) -> Field:
    """Sample a radial profile on a box grid (``center`` defaults to the origin)."""
    if center is None:
        r = grid.radius()
    else:
        r = np.sqrt(sum((c - x0) ** 2 for c, x0 in zip(grid.coords(), center)))
    return Field(grid, radial_interpolate(u, r))
