#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-NumPy fallback.

Times the two hot kernels (object-homogeneity windows and similar-pixel
residual combination) and the segmentation merge loop on the same inputs,
checks that both backends agree bit for bit, and prints the speedups.

    python benchmarks/bench_kernels.py [--size 384] [--scale 10]
"""

import argparse
import time

import numpy as np

from obsum._kernels import fallback


def _load_compiled():
    try:
        from obsum._kernels import _core
        return _core
    except ImportError:
        return None


# resolved at import so --help works without the extension
_core_or_none = _load_compiled()


def timeit(fn, repeats=3):
    best = float("inf")
    result = None
    for _ in range(repeats):
        start = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - start)
    return best, result


def grid_edges(data):
    h, w, _ = data.shape
    idx = np.arange(h * w).reshape(h, w)
    ea = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    eb = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    ew = np.concatenate([
        np.sqrt(np.sum((data[:, :-1] - data[:, 1:]) ** 2, axis=2)).ravel(),
        np.sqrt(np.sum((data[:-1, :] - data[1:, :]) ** 2, axis=2)).ravel(),
    ])
    return ea.astype(np.int64), eb.astype(np.int64), ew


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=384,
                        help="side length of the benchmark image")
    parser.add_argument("--scale", type=int, default=10,
                        help="scale factor for the homogeneity windows")
    parser.add_argument("--sim-window", type=int, default=31)
    parser.add_argument("--n-similar", type=int, default=30)
    parser.add_argument("--bands", type=int, default=4)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    compiled = _core_or_none
    if compiled is None:
        print("compiled kernels not available; showing fallback only")

    rng = np.random.default_rng(0)
    n = args.size
    fine = rng.random((n, n, args.bands))
    resid = rng.uniform(-0.2, 0.2, (n, n, args.bands))
    labels = rng.integers(0, 40, (n, n)).astype(np.int32)
    ea, eb, ew = grid_edges(fine)
    order = np.argsort(ew, kind="stable")

    cases = [
        ("ohi_map", lambda mod: mod.ohi_map(labels, args.scale)),
        ("plr_map", lambda mod: mod.plr_map(
            fine, resid, args.sim_window, args.n_similar)),
        ("fh_segment", lambda mod: mod.fh_segment(
            ea, eb, order, ew, n * n, 0.4)),
    ]

    print(f"image {n}x{n}x{args.bands}, scale {args.scale}, "
          f"window {args.sim_window}, {args.n_similar} similar pixels, "
          f"best of {args.repeats}")
    print(f"{'kernel':<12}{'fallback':>12}{'compiled':>12}{'speedup':>10}")
    for name, call in cases:
        fb_time, fb_result = timeit(lambda: call(fallback),
                                    args.repeats)
        if compiled is None:
            print(f"{name:<12}{fb_time:>11.3f}s{'-':>12}{'-':>10}")
            continue
        c_time, c_result = timeit(lambda: call(compiled), args.repeats)
        if not np.array_equal(np.asarray(fb_result),
                              np.asarray(c_result)):
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:<12}{fb_time:>11.3f}s{c_time:>11.3f}s"
              f"{fb_time / c_time:>9.1f}x")


if __name__ == "__main__":
    main()
