"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel and shape with the best-of-N time of each backend and
the speedup. The outputs of both backends are checked for agreement first.
"""

import argparse
import timeit

import numpy as np

from deepsense import _kernels_py as py

try:
    from deepsense import _kernels as cy
except ImportError:  # extension not built
    cy = None

CASES = {
    "unfold": [((32, 1, 6, 40), 2, 3), ((128, 64, 3, 20), 1, 3), ((160, 64, 1, 30), 1, 3)],
    "fold": [((32, 1, 6, 40), 2, 3), ((128, 64, 3, 20), 1, 3), ((160, 64, 1, 30), 1, 3)],
    "strapdown": [(2_000,), (20_000,), (100_000,)],
}


def _args(kernel, case, rng):
    if kernel == "strapdown":
        (n,) = case
        t = np.arange(n) / 100.0
        return (t, rng.normal(size=(n, 3)), rng.normal(scale=0.1, size=n), rng.uniform(-np.pi, np.pi, n),
                9.81, 0.02, 0.0)
    shape, fh, fw = case
    x = rng.normal(size=shape)
    if kernel == "unfold":
        return (x, fh, fw)
    cols = py.unfold(x, fh, fw)
    return (cols, shape[1], fh, fw)


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def _best(fn, args, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-6)))
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    if cy is None:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'kernel':<10} {'case':<24} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for kernel, cases in CASES.items():
        for case in cases:
            a = _args(kernel, case, rng)
            tp = _best(getattr(py, kernel), a, args.repeat)
            if cy is None:
                print(f"{kernel:<10} {str(case):<24} {tp * 1e3:>10.3f} {'-':>10} {'-':>8}")
                continue
            if not _same(getattr(py, kernel)(*a), getattr(cy, kernel)(*a)):
                raise SystemExit(f"{kernel} {case}: backends disagree")
            tc = _best(getattr(cy, kernel), a, args.repeat)
            print(f"{kernel:<10} {str(case):<24} {tp * 1e3:>10.3f} {tc * 1e3:>10.3f} {tp / tc:>7.1f}x")


if __name__ == "__main__":
    main()
