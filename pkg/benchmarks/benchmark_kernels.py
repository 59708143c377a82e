#!/usr/bin/env python3
"""Times the hot kernels on both backends and checks they agree.

Run: python benchmarks/benchmark_kernels.py
The active backend for library calls follows CLUSTERALIGN_BACKEND; this
script always times every implementation registered in the kernels module.
"""

import time

import numpy as np

from clusteralign import kernels


def timeit(fn, *args, repeats=5):
    fn(*args)  # warm-up (JIT compile for the numba path)
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def bench_pairwise(n, d):
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(n, d))
    labels = rng.integers(2, size=n).astype(np.int64)
    print(f"pairwise margin loss, n={n}, d={d}")
    results = {}
    for name, (pairwise, _) in kernels.IMPLEMENTATIONS.items():
        t = timeit(pairwise, feats, labels, 3.0, True)
        results[name] = (t, pairwise(feats, labels, 3.0, True))
        print(f"  {name:<6} {t * 1e3:9.3f} ms")
    _summarize(results)


def bench_kmeans_assign(n, d, k):
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(n, d))
    centers = rng.normal(size=(k, d))
    print(f"kmeans assignment, n={n}, d={d}, k={k}")
    results = {}
    for name, (_, assign) in kernels.IMPLEMENTATIONS.items():
        t = timeit(assign, pts, centers)
        results[name] = (t, assign(pts, centers))
        print(f"  {name:<6} {t * 1e3:9.3f} ms")
    _summarize(results)


def _summarize(results):
    if "numba" in results and "numpy" in results:
        t_np, out_np = results["numpy"]
        t_nb, out_nb = results["numba"]
        match = all(np.allclose(a, b) for a, b in zip(out_np, out_nb))
        print(f"  speedup {t_np / t_nb:6.2f}x  results match: {match}")
    print()


def main():
    print(f"active backend: {kernels.BACKEND}")
    print(f"registered implementations: {sorted(kernels.IMPLEMENTATIONS)}\n")
    bench_pairwise(64, 2)       # one training batch
    bench_pairwise(2200, 2)     # full-dataset evaluation pass
    bench_pairwise(256, 16)     # penultimate-feature batch
    bench_kmeans_assign(2200, 2, 2)
    bench_kmeans_assign(4000, 16, 10)


if __name__ == "__main__":
    main()
