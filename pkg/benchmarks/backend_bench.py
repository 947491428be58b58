#!/usr/bin/env python3
"""Timing comparison of the numpy fallback vs the compiled kernel backend.

Runs the three hot kernels (counter-based noise tensor, smoothed-density MC
drift, training-free sampler terminal states) through both implementations
and prints best-of-N wall times plus the speedup. The compiled rows are
skipped when numba is unavailable.

Usage: python benchmarks/backend_bench.py [--repeat N] [--scale F]
"""

import argparse
import time

import numpy as np

from follmer.kernels import numpy_impl
from follmer.semigroup import mixture_target_ratio

try:
    from follmer.kernels import numba_impl
except ImportError:
    numba_impl = None


def best_of(fn, repeat):
    fn()  # warm-up; also triggers JIT compilation for the numba rows
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(scale):
    ratio = mixture_target_ratio([0.5, 0.5], [-2.0, 2.0], [0.5, 0.8], 1.0)
    kind, params, gamma = ratio.kernel_kind, ratio.kernel_params, ratio.gamma
    x = np.linspace(-3.0, 3.0, int(256 * scale))
    keys = np.arange(x.size, dtype=np.uint64) + np.uint64(12345)
    return [
        ("noise_tensor(S=%d,k=100,d=4)" % int(2000 * scale),
         lambda impl: impl.noise_tensor(7, int(2000 * scale), 100, 4)),
        ("mc_drift(n=%d,M=2000)" % x.size,
         lambda impl: impl.semigroup_mc_drift_1d(kind, params, gamma, 0.5,
                                                 x, 2000, keys)),
        ("sfs_terminal(S=%d,k=20,M=500)" % int(200 * scale),
         lambda impl: impl.sfs_terminal_1d(kind, params, gamma,
                                           int(200 * scale), 20, 500, 3)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5,
                    help="timed repetitions per row (best is reported)")
    ap.add_argument("--scale", type=float, default=1.0,
                    help="multiplier on problem sizes")
    args = ap.parse_args()

    impls = [("numpy", numpy_impl)]
    if numba_impl is not None:
        impls.append(("numba", numba_impl))
    else:
        print("numba unavailable; timing the numpy fallback only")

    print(f"{'kernel':<34} {'backend':<8} {'best (ms)':>10}  speedup")
    for label, call in cases(args.scale):
        base = None
        for name, impl in impls:
            t = best_of(lambda: call(impl), args.repeat)
            if base is None:
                base = t
                rel = ""
            else:
                rel = f"{base / t:.1f}x"
            print(f"{label:<34} {name:<8} {1e3 * t:>10.2f}  {rel}")
        # identical streams by construction; cheap to re-assert here
        if len(impls) == 2:
            a, b = (call(impl) for _, impl in impls)
            worst = float(np.max(np.abs(a - b)))
            if worst > 1e-9:
                raise SystemExit(f"backend mismatch on {label}: {worst}")
    if len(impls) == 2:
        print("backend outputs agree on every benchmarked kernel")


if __name__ == "__main__":
    main()
