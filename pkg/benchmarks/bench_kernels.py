"""Numba vs numpy timings for the hot kernels.

    python benchmarks/bench_kernels.py [--repeat 20]

Both variants are called directly, so the VISFUSE_DISABLE_NUMBA flag does not
matter here.  Outputs are checked for agreement before timing.
"""
import argparse
import time

import numpy as np

from visfuse import kernels
from visfuse._accel import HAVE_NUMBA
from visfuse.harness.dataset import coverage_for
from visfuse.config import ExperimentConfig
from visfuse.imaging import dirty_beam, dirty_image
from visfuse.skysim import make_synthetic_sky, sample_visibility


def best_of(fn, repeat):
    fn()  # warm-up (triggers JIT compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy path is available")
        return

    rng = np.random.default_rng(0)
    n = 64
    L = 4000
    feat = rng.normal(size=(4, L))
    rows = rng.uniform(0, n - 1, L)
    cols = rng.uniform(0, n - 1, L)
    grid = rng.normal(size=(4, n, n))

    cfg = ExperimentConfig()
    vs = sample_visibility(make_synthetic_sky("spiral", n, 1), coverage_for(cfg), 0.05, 1)
    dirty, beam = dirty_image(vs, normalized=True), dirty_beam(vs)
    stop = 0.01 * np.abs(dirty).max()

    cases = [
        ("scatter_bilinear", lambda f: f(feat, rows, cols, n, n),
         kernels.scatter_bilinear_numpy, kernels.scatter_bilinear_numba),
        ("gather_bilinear", lambda f: f(grid, rows, cols),
         kernels.gather_bilinear_numpy, kernels.gather_bilinear_numba),
        ("hogbom_loop(500)", lambda f: f(dirty.copy(), beam, 0.1, 500, stop),
         kernels.hogbom_loop_numpy, kernels.hogbom_loop_numba),
    ]
    print(f"{'kernel':<18} {'numpy (ms)':>12} {'numba (ms)':>12} {'speed-up':>9}")
    for name, call, f_np, f_nb in cases:
        a, b = call(f_np), call(f_nb)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)
        t_np = best_of(lambda: call(f_np), args.repeat)
        t_nb = best_of(lambda: call(f_nb), args.repeat)
        print(f"{name:<18} {t_np * 1e3:>12.3f} {t_nb * 1e3:>12.3f} {t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
