"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run with::

    python benchmarks/bench_kernels.py

The numba path is compiled once before timing so JIT cost is excluded.
``CROSSREC_NO_NUMBA=1`` forces the numpy fallback package-wide; here both
paths are timed explicitly regardless of the flag.
"""

import time

import numpy as np

from crossrec import kernels
from crossrec.accel import NUMBA_AVAILABLE


def timeit(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    rng = np.random.default_rng(0)
    rows = []

    a = rng.standard_normal((512, 32))
    b = rng.standard_normal((512, 32))
    if NUMBA_AVAILABLE:
        kernels._pairwise_sq_dists_nb(a, b)  # compile
    rows.append((
        "pairwise_sq_dists 512x512x32",
        timeit(kernels._pairwise_sq_dists_np, a, b),
        timeit(kernels._pairwise_sq_dists_nb, a, b) if NUMBA_AVAILABLE else None,
    ))

    x = rng.standard_normal((256, 16))
    y = rng.standard_normal((256, 16))
    gamma = 0.5
    if NUMBA_AVAILABLE:
        kernels._mmd_sums_nb(x, y, gamma)
    rows.append((
        "mmd_sums N=256 d=16",
        timeit(kernels._mmd_sums_np, x, y, gamma),
        timeit(kernels._mmd_sums_nb, x, y, gamma) if NUMBA_AVAILABLE else None,
    ))

    scores = rng.standard_normal((2000, 1000))
    pos = rng.integers(0, 1000, size=2000)
    if NUMBA_AVAILABLE:
        kernels._rank_counts_nb(scores, pos)
    rows.append((
        "rank_counts 2000x1000",
        timeit(kernels._rank_counts_np, scores, pos),
        timeit(kernels._rank_counts_nb, scores, pos) if NUMBA_AVAILABLE else None,
    ))

    width = max(len(r[0]) for r in rows) + 2
    print(f"{'kernel':<{width}}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, t_np, t_nb in rows:
        if t_nb is None:
            print(f"{name:<{width}}{t_np * 1e3:>10.2f}ms{'n/a':>12}{'n/a':>10}")
        else:
            print(f"{name:<{width}}{t_np * 1e3:>10.2f}ms{t_nb * 1e3:>10.2f}ms"
                  f"{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
