"""Pointwise kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time.  Set ``HARTREELAB_NUMBA=0`` to
force the numpy path (useful for debugging and for the benchmark script);
numba is also skipped automatically when it cannot be imported.

Every public kernel here has the same signature and the same result on both
paths up to floating-point reassociation.
"""

from __future__ import annotations

import logging
import os

import numpy as np

logger = logging.getLogger(__name__)

_want_numba = os.environ.get("HARTREELAB_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

try:
    if not _want_numba:
        raise ImportError("disabled by HARTREELAB_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError as exc:  # pragma: no cover - depends on environment
    logger.debug("numba unavailable (%s); using numpy kernels", exc)
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return wrap


BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference versions
# ---------------------------------------------------------------------------

def _weighted_sums_np(u, pot, vconv):
    u2 = u * u
    return float(u2.sum()), float((pot * u2).sum()), float((vconv * u2).sum()), float(np.abs(u).max())


def _brute_riesz_np(rho, kernel):
    n = rho.shape[0]
    d = rho.ndim
    idx = np.indices(rho.shape).reshape(d, -1)
    flat_rho = rho.reshape(-1)
    out = np.empty(flat_rho.size)
    # one target at a time keeps memory at O(n^d)
    for t in range(flat_rho.size):
        diff = (idx[:, t:t + 1] - idx) % n
        out[t] = np.dot(kernel[tuple(diff)], flat_rho)
    return out.reshape(rho.shape)


def _trilinear_np(values, origin, spacing, pts):
    n = values.shape[0]
    f = (pts - origin) / spacing
    i0 = np.floor(f).astype(np.int64)
    t = f - i0
    out = np.zeros(pts.shape[0])
    for corner in range(8):
        bits = [(corner >> a) & 1 for a in range(3)]
        idx = [i0[:, a] + bits[a] for a in range(3)]
        w = np.ones(pts.shape[0])
        ok = np.ones(pts.shape[0], dtype=bool)
        for a in range(3):
            w *= t[:, a] if bits[a] else (1.0 - t[:, a])
            ok &= (idx[a] >= 0) & (idx[a] < n)
        safe = [np.clip(ix, 0, n - 1) for ix in idx]
        out += np.where(ok, w * values[safe[0], safe[1], safe[2]], 0.0)
    return out


def _radial_direct_np(f, A, B):
    m = f.size
    i = np.arange(m)
    out = np.empty(m)
    for row in range(m):
        out[row] = np.dot(A[row + i] - B[i - row + m], f)
    return out


# ---------------------------------------------------------------------------
# numba versions
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _weighted_sums_nb(u, pot, vconv):
        uf = u.ravel()
        pf = pot.ravel()
        vf = vconv.ravel()
        m = 0.0
        p = 0.0
        dd = 0.0
        mx = 0.0
        for i in range(uf.size):
            q = uf[i] * uf[i]
            m += q
            p += pf[i] * q
            dd += vf[i] * q
            a = abs(uf[i])
            if a > mx:
                mx = a
        return m, p, dd, mx

    @njit(cache=True)
    def _brute_riesz_nb(rho, kernel):
        n = rho.shape[0]
        out = np.zeros_like(rho)
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    s = 0.0
                    for x in range(n):
                        for y in range(n):
                            for z in range(n):
                                s += rho[x, y, z] * kernel[(a - x) % n, (b - y) % n, (c - z) % n]
                    out[a, b, c] = s
        return out

    @njit(cache=True)
    def _trilinear_nb(values, origin, spacing, pts):
        n = values.shape[0]
        npt = pts.shape[0]
        out = np.zeros(npt)
        for p in range(npt):
            fx = (pts[p, 0] - origin) / spacing
            fy = (pts[p, 1] - origin) / spacing
            fz = (pts[p, 2] - origin) / spacing
            ix = int(np.floor(fx))
            iy = int(np.floor(fy))
            iz = int(np.floor(fz))
            tx = fx - ix
            ty = fy - iy
            tz = fz - iz
            s = 0.0
            for cx in range(2):
                jx = ix + cx
                if jx < 0 or jx >= n:
                    continue
                wx = tx if cx else 1.0 - tx
                for cy in range(2):
                    jy = iy + cy
                    if jy < 0 or jy >= n:
                        continue
                    wy = ty if cy else 1.0 - ty
                    for cz in range(2):
                        jz = iz + cz
                        if jz < 0 or jz >= n:
                            continue
                        wz = tz if cz else 1.0 - tz
                        s += wx * wy * wz * values[jx, jy, jz]
            out[p] = s
        return out

    @njit(cache=True)
    def _radial_direct_nb(f, A, B):
        m = f.size
        out = np.empty(m)
        for row in range(m):
            s = 0.0
            for k in range(m):
                s += (A[row + k] - B[k - row + m]) * f[k]
            out[row] = s
        return out


def weighted_sums(u, pot, vconv):
    """Return ``(sum u^2, sum pot u^2, sum vconv u^2, max|u|)`` in one pass."""
    if HAVE_NUMBA:
        m, p, dd, mx = _weighted_sums_nb(u, pot, vconv)
        return float(m), float(p), float(dd), float(mx)
    return _weighted_sums_np(u, pot, vconv)


def brute_riesz(rho, kernel):
    """Periodic direct sum ``out[x] = sum_y rho[y] kernel[(x - y) mod n]`` (no cell volume)."""
    if HAVE_NUMBA and rho.ndim == 3:
        return _brute_riesz_nb(np.ascontiguousarray(rho), np.ascontiguousarray(kernel))
    return _brute_riesz_np(rho, kernel)


def trilinear(values, origin, spacing, pts):
    """Trilinear interpolation of a cubic 3D array at ``pts`` (shape ``(k, 3)``); zero outside."""
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    if HAVE_NUMBA:
        return _trilinear_nb(np.ascontiguousarray(values), float(origin), float(spacing), pts)
    return _trilinear_np(values, origin, spacing, pts)


def radial_direct(f, A, B):
    """O(m^2) product-integration sum ``out[i] = sum_k (A[i+k] - B[k-i+m]) f[k]``."""
    if HAVE_NUMBA:
        return _radial_direct_nb(f, A, B)
    return _radial_direct_np(f, A, B)


def set_threads(n: int) -> None:
    """Thread count for the numba kernels (no-op on the numpy path)."""
    if HAVE_NUMBA and int(n) > 1:
        import warnings

        import numba

        with warnings.catch_warnings():
            # the parallel backend reports unusable threading layers on first use
            warnings.simplefilter("ignore")
            numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
