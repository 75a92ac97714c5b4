#!/usr/bin/env python3
"""Timing comparison of the numba and numpy kernel families.

Runs each kernel on identical inputs at a few realistic sizes (document
pools on the small end, evaluation-sweep batches on the large end) and
prints a table of best-of-N wall times plus the speedup factor. Numba
functions are called once before timing so compilation is not measured.

Usage:
    python benchmarks/bench_kernels.py [--repeats N]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from medrag import kernels


def best_of(fn, args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def cases(rng):
    """(kernel name, case label, args) tuples spanning pipeline workloads."""
    for n, d, label in ((20, 384, "pool 20x384"),
                        (200, 384, "sweep 200x384"),
                        (1000, 384, "corpus 1000x384")):
        a = rng.standard_normal((n, d))
        b = rng.standard_normal((n, d))
        yield "pairwise_cosine", label, (a, b)
        sim = kernels.NUMPY_IMPLS["pairwise_cosine"](a, a)
        yield "offdiag_rowmax", label, (sim,)
    for n, m, label in ((30, 30, "answers 30x30"),
                        (256, 256, "long 256x256"),
                        (2000, 2000, "stress 2000x2000")):
        a = rng.integers(0, 50, size=n).astype(np.int64)
        b = rng.integers(0, 50, size=m).astype(np.int64)
        yield "lcs_length", label, (a, b)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=7,
                        help="timing repeats per case (best is reported)")
    args = parser.parse_args()

    numba_impls = kernels.NUMBA_IMPLS
    if numba_impls is None:
        try:
            numba_impls = kernels._build_numba_impls()
        except ImportError:
            print("numba is not installed; nothing to compare against numpy")
            return 1

    rng = np.random.default_rng(7)
    rows = []
    for name, label, call_args in cases(rng):
        np_fn = kernels.NUMPY_IMPLS[name]
        nb_fn = numba_impls[name]
        nb_fn(*call_args)  # trigger compilation outside the timed region
        t_np = best_of(np_fn, call_args, args.repeats)
        t_nb = best_of(nb_fn, call_args, args.repeats)
        rows.append((name, label, t_np, t_nb))

    width = max(len(f"{n} {l}") for n, l, *_ in rows)
    print(f"{'kernel / case':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    print("-" * (width + 34))
    for name, label, t_np, t_nb in rows:
        case = f"{name} {label}"
        print(f"{case:<{width}}  {t_np * 1e3:>8.3f}ms  {t_nb * 1e3:>8.3f}ms"
              f"  {t_np / t_nb:>7.2f}x")
    print(f"\nactive backend for the library: {kernels.backend()}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
