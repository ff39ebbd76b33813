"""Time the compiled kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--n 20000] [--p 6] [--repeat 20]

Also checks that both backends agree before timing them.
"""

import argparse
import sys
import timeit

import numpy as np

from medshift import _kernels_py

try:
    from medshift import _kernels as compiled
except ImportError:
    compiled = None


def _inputs(n, p, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    beta = rng.normal(scale=0.3, size=p)
    y = (rng.random(n) < 1 / (1 + np.exp(-X @ beta))).astype(float)
    w = rng.random(n) + 0.5
    off = rng.normal(scale=0.1, size=n)
    key = rng.integers(0, 64, size=n).astype(np.intp)
    return X, y, w, off, beta, key


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--p", type=int, default=6)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not built; only the numpy backend is available")
        return 1
    X, y, w, off, beta, key = _inputs(args.n, args.p)

    ll_c, g_c, h_c = compiled.irls_pass(X, y, w, off, beta)
    ll_p, g_p, h_p = _kernels_py.irls_pass(X, y, w, off, beta)
    assert abs(ll_c - ll_p) <= 1e-9 * abs(ll_p)
    assert np.allclose(g_c, g_p, rtol=1e-10, atol=1e-10) and np.allclose(h_c, h_p, rtol=1e-10, atol=1e-10)
    s_c = compiled.stratum_sums(key, y, w, 64)
    s_p = _kernels_py.stratum_sums(key, y, w, 64)
    assert all(np.allclose(a, b, rtol=1e-12) for a, b in zip(s_c, s_p))

    cases = [
        ("irls_pass", lambda: compiled.irls_pass(X, y, w, off, beta),
         lambda: _kernels_py.irls_pass(X, y, w, off, beta)),
        ("stratum_sums", lambda: compiled.stratum_sums(key, y, w, 64),
         lambda: _kernels_py.stratum_sums(key, y, w, 64)),
    ]
    print(f"n={args.n} p={args.p} repeat={args.repeat} (best of 5, ms per call)")
    print(f"{'kernel':<14}{'cython':>10}{'numpy':>10}{'speedup':>10}")
    for name, fc, fp in cases:
        tc = min(timeit.repeat(fc, number=args.repeat, repeat=5)) / args.repeat * 1e3
        tp = min(timeit.repeat(fp, number=args.repeat, repeat=5)) / args.repeat * 1e3
        print(f"{name:<14}{tc:>10.3f}{tp:>10.3f}{tp / tc:>9.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
