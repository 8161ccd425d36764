"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel and size with both timings, the speedup, and
the largest disagreement between the two backends.
"""
import argparse
import timeit

import numpy as np

from pfnet import _pykernels

try:
    from pfnet import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(rng):
    for n in (200, 2000, 10000):
        a, b = rng.normal(0, 20, n), rng.normal(0, 20, n)
        yield "log_convolve", n, (a, b, n), lambda x, y: np.max(np.abs(x - y) / np.maximum(1, np.abs(y)))
    for n in (1000, 100000, 1000000):
        p, q = rng.random(n), rng.random(200)
        yield "convolve_truncated", n, (p, q, n), lambda x, y: np.max(np.abs(x - y)) / np.max(np.abs(y))
    for n in (100, 1000, 10000):
        p = rng.dirichlet(np.ones(n))
        th = np.linspace(-np.pi, np.pi, 1001)
        yield "char_sum", n, (p, th), lambda x, y: np.max(np.abs(x - y))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    if _ckernels is None:
        print("compiled kernels not built; timing the numpy fallback only")
    print(f"{'kernel':<20}{'size':>9}{'python s':>12}{'cython s':>12}{'speedup':>9}{'max diff':>11}")
    for name, n, argv, diff in cases(rng):
        py = getattr(_pykernels, name)
        number = 3 if n <= 10000 else 1
        t_py = min(timeit.repeat(lambda: py(*argv), number=number, repeat=args.repeat)) / number
        if _ckernels is None:
            print(f"{name:<20}{n:>9}{t_py:>12.3e}{'-':>12}{'-':>9}{'-':>11}")
            continue
        cy = getattr(_ckernels, name)
        t_cy = min(timeit.repeat(lambda: cy(*argv), number=number, repeat=args.repeat)) / number
        err = float(diff(cy(*argv), py(*argv)))
        print(f"{name:<20}{n:>9}{t_py:>12.3e}{t_cy:>12.3e}{t_py / t_cy:>9.1f}{err:>11.1e}")


if __name__ == "__main__":
    main()
