"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--n 2000]

Each kernel runs on identical inputs under both backends; outputs are
checked for agreement before timing.  Needs the compiled extension.
"""
import argparse
import timeit

import numpy as np

from mppsynth import _kernels


def cases(n: int, rng):
    xy = rng.random((n, 2))
    h = np.round(np.arange(0.01, 0.251, 0.01), 10)
    syn = rng.random((n, 2))
    combo = rng.integers(1, 5, n)
    mark = rng.integers(16, 99, n).astype(float)
    eta = rng.normal(np.log(60), 0.3, 20 * n)
    u = rng.random(20 * n)
    return {
        "pair_counts": lambda b: _kernels.pair_counts(xy, h, backend=b),
        "risk_counts": lambda b: _kernels.risk_counts(xy, combo, mark, syn, combo[::-1].copy(), mark,
                                                      0.02, 5.0, backend=b),
        "trunc_pois_lognorm": lambda b: _kernels.trunc_pois_lognorm(eta, 16, 98, backend=b),
        "trunc_pois_moments": lambda b: _kernels.trunc_pois_moments(eta, 16, 98, backend=b),
        "trunc_pois_sample": lambda b: _kernels.trunc_pois_sample(eta, u, 16, 98, backend=b),
    }


def _same(a, b) -> bool:
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(x, y, rtol=1e-10, atol=0) for x, y in zip(a, b))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=2000, help="points per pattern (default 2000)")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    try:
        _kernels._backend("cython")
    except ImportError:
        raise SystemExit("compiled kernels are not built; run `pip install -e .` first")

    print(f"n = {args.n}, best of {args.repeat}")
    print(f"{'kernel':<20} {'python [ms]':>12} {'cython [ms]':>12} {'speed-up':>9}")
    for name, fn in cases(args.n, np.random.default_rng(args.seed)).items():
        if not _same(fn("python"), fn("cython")):
            raise SystemExit(f"{name}: backends disagree")
        t = {b: min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) * 1e3
             for b in ("python", "cython")}
        print(f"{name:<20} {t['python']:>12.2f} {t['cython']:>12.2f} {t['python'] / t['cython']:>8.1f}x")


if __name__ == "__main__":
    main()
