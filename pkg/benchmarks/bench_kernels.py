"""Time the hot kernels and one flow solve on the active backend.

Run twice to compare backends::

    python benchmarks/bench_kernels.py
    HARTREELAB_NUMBA=0 python benchmarks/bench_kernels.py
"""

import argparse
import time
import warnings

import numpy as np

warnings.filterwarnings("ignore", message=".*TBB.*")

from hartreelab import BACKEND, _accel  # noqa: E402
from hartreelab.grid import Field, make_grid, riesz_convolve  # noqa: E402
from hartreelab.potentials import make_potential  # noqa: E402
from hartreelab.solve import SolveConfig, minimize  # noqa: E402


def best_of(fn, repeat):
    fn()  # warm-up (jit compilation, FFT plans)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=128, help="grid points per axis")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    n = args.n
    u, pot, v = (rng.standard_normal((n, n, n)) for _ in range(3))
    rho8 = rng.random((8, 8, 8))
    ker8 = rng.random((8, 8, 8))
    pts = rng.uniform(-1, 1, size=(n ** 3 // 8, 3))
    grid = make_grid(3, 16.0, n)
    f = Field(grid, u)

    rows = [
        ("weighted_sums", lambda: _accel.weighted_sums(u, pot, v)),
        ("trilinear", lambda: _accel.trilinear(u, -1.0, 2.0 / n, pts)),
        ("brute_riesz 8^3", lambda: _accel.brute_riesz(rho8, ker8)),
        ("riesz_convolve", lambda: riesz_convolve(f)),
    ]
    print(f"backend={BACKEND} n={n}")
    for name, fn in rows:
        print(f"{name:>18s}  {best_of(fn, args.repeat) * 1e3:9.2f} ms")

    g = make_potential("saturating", 2)
    cfg = SolveConfig(lam=5.0, N=1.0, g=g, grid=make_grid(3, 8.0, 64), max_iters=200)
    t = time.perf_counter()
    rep = minimize(cfg)
    print(f"{'solve 64^3':>18s}  {time.perf_counter() - t:9.2f} s  ({rep.diagnosis}, {rep.iterations} steps)")


if __name__ == "__main__":
    main()
