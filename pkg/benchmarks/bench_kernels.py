"""Timing comparison of the compiled voxel kernels against the numpy path.

Runs each kernel on identical random volumes, reports per-call wall time
for both implementations plus the speedup, and cross-checks that the two
paths agree to near machine precision before any number is trusted.

Usage: python benchmarks/bench_kernels.py [--size 64] [--repeats 7]
"""

import argparse
import time

import numpy as np

from multilook import _kernels_py

try:
    from multilook import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=64, help="cube edge in voxels")
    parser.add_argument("--repeats", type=int, default=7, help="timed repetitions; best kept")
    args = parser.parse_args(argv)

    if _kernels is None:
        print("compiled extension not importable; nothing to compare")
        return 1

    rng = np.random.default_rng(0)
    n = args.size**3
    r_prime = rng.uniform(1e-4, 2.0, n)
    v = rng.uniform(0.05, 3.0, n)
    s = rng.uniform(0.0, 3.0, n)
    cases = [
        ("covariance_diag", lambda impl: impl.covariance_diag(r_prime, 1e-3, 0.0254)),
        ("prox_quadratic", lambda impl: impl.prox_quadratic(v, r_prime, s, 0.05, 1.5)),
        ("prox_cubic", lambda impl: impl.prox_cubic(v, s, 0.05)),
    ]

    print(f"volume {args.size}^3 = {n} voxels, best of {args.repeats}")
    print(f"{'kernel':<16} {'numpy':>10} {'compiled':>10} {'speedup':>8}   agreement")
    for name, call in cases:
        ref = call(_kernels_py)
        got = call(_kernels)
        worst = float(np.abs(got - ref).max())
        scale = float(np.abs(ref).max()) or 1.0
        agree = worst / scale
        t_py = best_of(lambda: call(_kernels_py), args.repeats)
        t_c = best_of(lambda: call(_kernels), args.repeats)
        print(
            f"{name:<16} {t_py * 1e3:>8.2f}ms {t_c * 1e3:>8.2f}ms {t_py / t_c:>7.1f}x"
            f"   {agree:.1e} relative"
        )
        if agree > 1e-12:
            print(f"  WARNING: {name} paths disagree beyond 1e-12")
            return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
