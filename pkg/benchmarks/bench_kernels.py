"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from seme import _kernels_py

try:
    from seme import _kernels
except ImportError:
    _kernels = None


def _cases(rng):
    n, m = 120, 150
    s = rng.integers(0, 6, size=n)
    p = rng.integers(0, 6, size=m)
    align_args = (s, np.arange(n + 1), p, np.arange(m + 1), 1.0, 1.0, 1.0, 4)
    words = ["".join(rng.choice(list("abcdefgh"), size=40)) for _ in range(2)]
    stack = rng.standard_normal((5, 200_000))
    mask = rng.random(200_000) < 0.3
    return {
        "align_table 120x150": ("align_table", align_args),
        "levenshtein 40 chars": ("levenshtein", (words[0], words[1], -1)),
        "erase_signs 5x200k": ("erase_signs", (stack, mask, True)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':<24}{'python (ms)':>14}{'cython (ms)':>14}{'speedup':>10}")
    for label, (fn, fargs) in cases.items():
        py = min(timeit.repeat(lambda: getattr(_kernels_py, fn)(*fargs), number=1, repeat=args.repeat))
        if _kernels is None:
            print(f"{label:<24}{py * 1e3:>14.2f}{'n/a':>14}{'n/a':>10}")
            continue
        cy = min(timeit.repeat(lambda: getattr(_kernels, fn)(*fargs), number=1, repeat=args.repeat))
        print(f"{label:<24}{py * 1e3:>14.2f}{cy * 1e3:>14.2f}{py / cy:>9.1f}x")


if __name__ == "__main__":
    main()
