"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 50]
"""

import argparse
import timeit

import numpy as np

from surfseg import _fallback

try:
    from surfseg import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    n = 512
    diag = rng.uniform(1, 2, n) + 4.0
    off = -np.full(n - 1, 2.0)
    rhs = rng.normal(size=n)
    j = np.arange(512.0)[:, None]
    f = np.exp(-((j - rng.uniform(100, 400, 60)) ** 2) / (2 * 20.0**2))
    img = rng.normal(size=(512, 60))
    padded = np.ascontiguousarray(np.pad(img, 4, mode="edge"))
    k = rng.normal(size=(9, 9))
    g = rng.normal(size=(512, 60))
    return {
        "tridiag_solve N=512": lambda m: m.tridiag_solve(diag, off, rhs),
        "fit_columns 512x60": lambda m: m.fit_columns(f, 1e-3, 1e-12, 1e-12, 51.2),
        "patch_logits 512x60, 9x9": lambda m: m.patch_logits(padded, k, 0.0),
        "patch_weight_grad 512x60, 9x9": lambda m: m.patch_weight_grad(padded, g, 9, 9),
    }


def best_of(fn, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'cython':>12s} {'python':>12s} {'speedup':>8s}")
    for name, call in cases(rng).items():
        py = best_of(lambda: call(_fallback), args.repeat)
        if _kernels is None:
            print(f"{name:32s} {'n/a':>12s} {py * 1e6:10.1f}us")
            continue
        cy = best_of(lambda: call(_kernels), args.repeat)
        print(f"{name:32s} {cy * 1e6:10.1f}us {py * 1e6:10.1f}us {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
