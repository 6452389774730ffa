import os
import subprocess
import sys

import numpy as np
import pytest

from hartreelab import _accel

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba backend not active")


def test_env_flag_forces_numpy():
    env = dict(os.environ, HARTREELAB_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", "import hartreelab; print(hartreelab.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


@needs_numba
def test_weighted_sums_backends_agree():
    rng = np.random.default_rng(0)
    u, pot, v = (rng.standard_normal((16, 16, 16)) for _ in range(3))
    a = _accel._weighted_sums_np(u, pot, v)
    b = _accel._weighted_sums_nb(u, pot, v)
    assert np.allclose(a, b, rtol=1e-12)


@needs_numba
def test_brute_riesz_backends_agree():
    rng = np.random.default_rng(1)
    rho, ker = rng.random((6, 6, 6)), rng.random((6, 6, 6))
    assert np.allclose(_accel._brute_riesz_np(rho, ker), _accel._brute_riesz_nb(rho, ker), rtol=1e-12)


@needs_numba
def test_trilinear_backends_agree():
    rng = np.random.default_rng(2)
    vals = rng.random((10, 10, 10))
    pts = rng.uniform(-1.2, 1.2, size=(500, 3))
    a = _accel._trilinear_np(vals, -1.0, 0.2, pts)
    b = _accel._trilinear_nb(vals, -1.0, 0.2, pts)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-15)


@needs_numba
def test_radial_direct_backends_agree():
    rng = np.random.default_rng(3)
    m = 64
    f, A, B = rng.random(m), rng.random(2 * m), rng.random(2 * m + 1)
    assert np.allclose(_accel._radial_direct_np(f, A, B), _accel._radial_direct_nb(f, A, B), rtol=1e-12)


def test_trilinear_reproduces_linear_functions():
    # trilinear interpolation is exact on affine data inside the grid
    ax = -1.0 + 0.2 * np.arange(10)
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    vals = 1.0 + 2 * X - Y + 0.5 * Z
    pts = np.random.default_rng(4).uniform(-0.9, 0.7, size=(200, 3))
    out = _accel.trilinear(vals, -1.0, 0.2, pts)
    assert np.allclose(out, 1.0 + 2 * pts[:, 0] - pts[:, 1] + 0.5 * pts[:, 2], atol=1e-12)
