"""Time the hot numeric kernels on both backends.

Each operation is timed on the pure-numpy path and, when numba is installed,
on the compiled path, after a warm-up call so JIT compilation never lands in
a measurement.  Outputs one table row per (operation, size) with the median
wall time over the requested repeats and the resulting speedup.

Usage::

    python3 benchmarks/bench_backends.py
    python3 benchmarks/bench_backends.py --sizes 200,800,1600 --repeats 7
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from dualgp import _backend


def _median_time(fn, args, repeats):
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def _bench_pair(name, fn_np, fn_nb, args, repeats, rows):
    t_np = _median_time(fn_np, args, repeats)
    if fn_nb is not None:
        fn_nb(*args)  # warm the compiled specialization for these dtypes
        t_nb = _median_time(fn_nb, args, repeats)
        rows.append((name, t_np, t_nb, t_np / t_nb))
    else:
        rows.append((name, t_np, None, None))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="200,800,1600",
                        help="comma-separated point counts (default 200,800,1600)")
    parser.add_argument("--dim", type=int, default=8, help="input dimension (default 8)")
    parser.add_argument("--rank", type=int, default=100,
                        help="pivot budget for the pivoted Cholesky (default 100)")
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats per row; the median is reported (default 5)")
    parser.add_argument("--seed", type=int, default=0, help="input RNG seed (default 0)")
    args = parser.parse_args()

    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    rng = np.random.default_rng(args.seed)
    inv_ls = 1.0 / rng.uniform(0.5, 2.0, args.dim)

    print(f"numba available: {_backend.HAS_NUMBA}   active backend: {_backend.BACKEND}")
    if not _backend.HAS_NUMBA:
        print("numba is not installed; reporting numpy timings only")
    print(f"dim={args.dim}  rank={args.rank}  repeats={args.repeats} (median reported)")
    print()

    rows = []
    for n in sizes:
        x = rng.uniform(-3.0, 3.0, (n, args.dim))
        gram_args = (x, x, inv_ls, 1.3, 0.1)
        _bench_pair(f"matern52 gram  n={n:>5}", _backend._gram_matern52_np,
                    _backend._gram_matern52_nb, gram_args, args.repeats, rows)
        _bench_pair(f"se gram        n={n:>5}", _backend._gram_se_np,
                    _backend._gram_se_nb, gram_args, args.repeats, rows)
        g = _backend._gram_matern52_np(x, x, inv_ls, 1.3, 0.0)
        g[np.diag_indices_from(g)] += 1e-8
        piv_args = (g, min(args.rank, n), 1e-10)
        _bench_pair(f"pivoted chol   n={n:>5}", _backend._pivoted_cholesky_np,
                    _backend._pivoted_cholesky_nb, piv_args, args.repeats, rows)

    header = f"{'operation':<22} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, t_np, t_nb, speedup in rows:
        if t_nb is None:
            print(f"{name:<22} {t_np * 1e3:>10.3f} {'-':>10} {'-':>8}")
        else:
            print(f"{name:<22} {t_np * 1e3:>10.3f} {t_nb * 1e3:>10.3f} {speedup:>7.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
