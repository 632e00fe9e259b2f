"""Timing comparison: compiled fitting kernel vs the pure-NumPy fallback.

Runs the same majorize-minimize loop through both backends on identical
inputs across a few (N, T, r) shapes, checks that the outputs agree to
floating-point noise, and prints per-iteration timings plus the
speedup.

Usage::

    python3 benchmarks/bench_core.py [--reps 5]
"""

import argparse
import time

import numpy as np

from safcov import backend
from safcov._mm_numpy import run_mm as run_mm_numpy
from safcov.saf import _pca_start, demeaned_sample_cov


def _instance(N, T, r, seed):
    rng = np.random.default_rng(seed)
    lam_true = rng.normal(size=(N, r))
    sigma = lam_true @ lam_true.T + np.diag(rng.uniform(0.5, 1.5, N))
    L = np.linalg.cholesky(sigma)
    X = L @ rng.standard_normal((N, T))
    S = demeaned_sample_cov(X)
    lam0, phi0 = _pca_start(S, r)
    return S, lam0, phi0


def _time_backend(run_mm, S, lam0, phi0, mu, reps):
    best = np.inf
    result = None
    for _ in range(reps):
        start = time.perf_counter()
        result = run_mm(S, lam0.copy(), phi0.copy(), mu, 0.01, 1e-6, 200)
        best = min(best, time.perf_counter() - start)
    return best, result


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--reps", type=int, default=5,
                        help="timing repetitions per shape (best-of)")
    args = parser.parse_args()

    if backend.BACKEND != "compiled":
        print("compiled kernel unavailable; benchmarking the fallback "
              "against itself is pointless.  Build the extension first "
              "(pip install -e . --no-build-isolation).")
        return

    shapes = [(30, 60, 2), (100, 240, 4), (200, 450, 4), (300, 120, 6)]
    mu = 0.05
    print(f"{'shape':>16}  {'compiled':>12}  {'numpy':>12}  "
          f"{'speedup':>8}  {'max |diff|':>10}")
    for N, T, r in shapes:
        S, lam0, phi0 = _instance(N, T, r, seed=20240501 + N)
        t_ext, out_ext = _time_backend(backend.run_mm, S, lam0, phi0,
                                       mu, args.reps)
        t_np, out_np = _time_backend(run_mm_numpy, S, lam0, phi0,
                                     mu, args.reps)
        diff = max(
            float(np.abs(out_ext[0] - out_np[0]).max()),
            float(np.abs(out_ext[1] - out_np[1]).max()),
        )
        iters = out_ext[3]
        print(f"N={N:4d} T={T:4d} r={r}  {t_ext * 1e3:9.2f} ms"
              f"  {t_np * 1e3:9.2f} ms  {t_np / t_ext:7.2f}x"
              f"  {diff:10.2e}  ({iters} iters)")


if __name__ == "__main__":
    main()
