"""Benchmark the compiled kernels against the pure-Python fallbacks.

Run:  python3 benchmarks/bench_dtw.py [--sizes 50,100,200] [--repeats 5]
"""

import argparse
import time

import numpy as np

from artimit import _kernels_py

try:
    from artimit import _kernels
except ImportError:
    _kernels = None


def time_fn(fn, *args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="50,100,200",
                    help="comma-separated DTW matrix sizes")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(0)

    if _kernels is None:
        print("compiled extension not built; showing pure-Python times only")

    print(f"{'kernel':<28}{'size':>8}{'python':>12}{'cython':>12}{'speedup':>10}")
    for n in sizes:
        cost = rng.uniform(0, 2, size=(n, n))
        tp = time_fn(_kernels_py.dtw_accumulate, cost, repeats=args.repeats)
        if _kernels is not None:
            tc = time_fn(_kernels.dtw_accumulate, cost, repeats=args.repeats)
            assert _kernels.dtw_accumulate(cost) == \
                _kernels_py.dtw_accumulate(cost)
            print(f"{'dtw_accumulate':<28}{n:>6}x{n}{tp * 1e3:>10.2f}ms"
                  f"{tc * 1e3:>10.2f}ms{tp / tc:>9.1f}x")
        else:
            print(f"{'dtw_accumulate':<28}{n:>6}x{n}{tp * 1e3:>10.2f}ms"
                  f"{'-':>12}{'-':>10}")

    frame = rng.normal(size=640)
    tp = time_fn(_kernels_py.autocorr_curve, frame, 80, 320,
                 repeats=args.repeats)
    if _kernels is not None:
        tc = time_fn(_kernels.autocorr_curve, frame, 80, 320,
                     repeats=args.repeats)
        print(f"{'autocorr_curve (640, 241 lags)':<28}{'':>8}{tp * 1e3:>10.2f}ms"
              f"{tc * 1e3:>10.2f}ms{tp / tc:>9.1f}x")
    else:
        print(f"{'autocorr_curve (640, 241 lags)':<28}{'':>8}{tp * 1e3:>10.2f}ms"
              f"{'-':>12}{'-':>10}")


if __name__ == "__main__":
    main()
