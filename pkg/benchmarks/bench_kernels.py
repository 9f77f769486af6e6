"""Compare the compiled kernels with their pure-Python fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from cascade_transducer import kernels
from cascade_transducer._kernels_py import edit_counts as py_edit, rnnt_alpha_beta as py_ab


def lattice(rng, T, U):
    lp = rng.normal(size=(T, U + 1, 2))
    lp -= np.logaddexp(lp[..., :1], lp[..., 1:])
    return np.ascontiguousarray(lp[..., 0]), np.ascontiguousarray(lp[:, :U, 1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.BACKEND != "compiled":
        print("compiled extension not available; only the fallback can be timed")
    rng = np.random.default_rng(0)
    cases = []
    for T, U in ((25, 12), (100, 40)):
        b, l = lattice(rng, T, U)
        cases.append((f"alpha/beta T={T} U={U}", lambda b=b, l=l: kernels.rnnt_alpha_beta(b, l),
                      lambda b=b, l=l: py_ab(b, l)))
    for n in (12, 100):
        r = rng.integers(0, 50, n).astype(np.int64)
        h = rng.integers(0, 50, n).astype(np.int64)
        cases.append((f"edit distance n={n}", lambda r=r, h=h: kernels.edit_counts(r, h),
                      lambda r=r, h=h: py_edit(r, h)))
    print(f"{'kernel':<26}{'compiled (us)':>15}{'python (us)':>14}{'speed-up':>10}")
    for name, fast, slow in cases:
        n = 20
        tf = min(timeit.repeat(fast, number=n, repeat=args.repeat)) / n * 1e6
        ts = min(timeit.repeat(slow, number=n, repeat=args.repeat)) / n * 1e6
        print(f"{name:<26}{tf:>15.1f}{ts:>14.1f}{ts / tf:>9.1f}x")


if __name__ == "__main__":
    main()
