"""Benchmark the compiled metric kernels against the NumPy fallback.

Usage: python benchmarks/bench_kernels.py [--quick]

Times the three hot entry points on sizes representative of the acceptance
runs: batch window distances (the metric checks), the pairwise distance
matrix (surjectivity coverage) and the bump-convolution accumulator (the
smoothing and partition machinery).
"""

import argparse
import time

import numpy as np

from invstab._kernels import get_backend


def timeit(fn, *args, repeats=3):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true",
                        help="smaller sizes, for CI smoke runs")
    args = parser.parse_args()

    scale = 0.1 if args.quick else 1.0
    rng = np.random.default_rng(0)
    n_pairs = int(10_000 * scale)
    n_win, n_mc = int(400 * scale), int(20_000 * scale)
    W, d = 49, 3
    A = rng.random((n_pairs, W, d))
    B = rng.random((n_pairs, W, d))
    weights = 2.0 ** -np.abs(np.arange(-24, 25)).astype(float)
    XW = rng.random((n_win, 17, d))
    YW = rng.random((n_mc, 17, d))
    phi = rng.standard_normal(n_mc)
    wmc = 2.0 ** -np.abs(np.arange(-8, 9)).astype(float)
    GA = rng.random((int(200 * scale), W, d))
    GB = rng.random((int(2_000 * scale), W, d))

    cases = [
        ("rowwise_d1", lambda k: k.rowwise_d1(A, B, weights, True)),
        ("rowwise_dinf", lambda k: k.rowwise_dinf(A, B, True)),
        ("pairwise_d1", lambda k: k.pairwise_d1(GA, GB, weights, True)),
        ("bump_convolve", lambda k: k.bump_convolve(XW, YW, wmc, phi, 0.8,
                                                    True)),
    ]

    backends = {}
    for name in ("cython", "numpy"):
        try:
            backends[name] = get_backend(name)
        except ImportError:
            print(f"backend {name} unavailable; skipping")

    print(f"{'kernel':16s} " + " ".join(f"{b:>12s}" for b in backends)
          + "      speedup")
    for label, call in cases:
        times = {}
        for bname, mod in backends.items():
            times[bname] = timeit(lambda: call(mod))
        row = f"{label:16s} " + " ".join(f"{times[b]*1e3:10.1f}ms"
                                         for b in backends)
        if len(times) == 2:
            row += f"  {times['numpy'] / times['cython']:10.1f}x"
        print(row)

    # cross-check: identical outputs
    if len(backends) == 2:
        a = backends["cython"].rowwise_d1(A, B, weights, True)
        b = backends["numpy"].rowwise_d1(A, B, weights, True)
        assert np.allclose(a, b, atol=1e-12), "backend results disagree"
        print("parity check: OK")


if __name__ == "__main__":
    main()
