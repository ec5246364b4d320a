#!/usr/bin/env python3
"""Benchmark the jit-compiled kernels against their pure-numpy fallbacks.

Times the two hot kernel families (accelerated/plain gossip rounds and the
batched SVM probe evaluations) at the shapes the drivers actually use.
Run: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from gossipopt import _kernels
from gossipopt.topology import build_ring


def timeit(fn, *args, repeats=200):
    fn(*args)  # warm-up / jit compile
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    if not _kernels._HAVE_NUMBA:
        print("numba unavailable; only the numpy path can run here")
        return

    rng = np.random.default_rng(0)
    P = build_ring(16, 1).weights
    rows = []

    for d, rounds in ((123, 2), (123, 8), (50, 140)):
        Z = rng.standard_normal((16, d))
        t_np = timeit(_kernels._chebyshev_rounds_np, P, Z, 0.67, rounds, repeats=args.repeats)
        t_nb = timeit(_kernels._chebyshev_rounds_nb, P, Z, 0.67, rounds, repeats=args.repeats)
        rows.append((f"accelerated gossip n=16 d={d} R={rounds}", t_np, t_nb))
        t_np = timeit(_kernels._plain_rounds_np, P, Z, rounds, repeats=args.repeats)
        t_nb = timeit(_kernels._plain_rounds_nb, P, Z, rounds, repeats=args.repeats)
        rows.append((f"plain gossip       n=16 d={d} R={rounds}", t_np, t_nb))

    A = rng.standard_normal((8000, 123))
    b = rng.choice([-1.0, 1.0], size=8000)
    for q in (1, 64):
        X = rng.standard_normal((q, 123)) * 0.1
        reps = max(2, args.repeats // 20)
        t_np = timeit(_kernels._svm_full_values_np, A, b, X, 1e-5, 2.0, repeats=reps)
        t_nb = timeit(_kernels._svm_full_values_nb, A, b, X, 1e-5, 2.0, repeats=reps)
        rows.append((f"svm values         m=8000 q={q}", t_np, t_nb))
        t_np = timeit(_kernels._svm_full_subgradients_np, A, b, X, 1e-5, 2.0, repeats=reps)
        t_nb = timeit(_kernels._svm_full_subgradients_nb, A, b, X, 1e-5, 2.0, repeats=reps)
        rows.append((f"svm subgradients   m=8000 q={q}", t_np, t_nb))

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel'.ljust(width)}  {'numpy':>12}  {'numba':>12}  {'speedup':>8}")
    for name, t_np, t_nb in rows:
        print(f"{name.ljust(width)}  {t_np * 1e6:>10.1f}us  {t_nb * 1e6:>10.1f}us  {t_np / t_nb:>7.2f}x")


if __name__ == "__main__":
    main()
