"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The active implementation is chosen once at import time from the environment
variable ``DUALGP_BACKEND``:

* ``auto`` (default): use numba when it is importable, numpy otherwise.
* ``numpy``: force the pure-numpy path.
* ``numba``: require numba; raise if it is not installed.

Both implementations of every kernel are always importable (the numpy twins
carry a ``_np`` suffix, the compiled ones ``_nb``), which is what the
cross-backend equivalence tests and the benchmark script rely on.  The public
aliases ``gram_matern52``, ``gram_se`` and ``pivoted_cholesky`` point at the
active path.
"""

from __future__ import annotations

import math
import os

import numpy as np

_ENV_VAR = "DUALGP_BACKEND"
_SQRT5 = math.sqrt(5.0)


def _gram_matern52_np(
    xa: np.ndarray, xb: np.ndarray, inv_ls: np.ndarray, amplitude: float, constant: float
) -> np.ndarray:
    diff = (xa[:, None, :] - xb[None, :, :]) * inv_ls
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    s = _SQRT5 * np.sqrt(r2)
    return amplitude * (1.0 + s + (5.0 / 3.0) * r2) * np.exp(-s) + constant


def _gram_se_np(
    xa: np.ndarray, xb: np.ndarray, inv_ls: np.ndarray, amplitude: float, constant: float
) -> np.ndarray:
    diff = (xa[:, None, :] - xb[None, :, :]) * inv_ls
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    return amplitude * np.exp(-0.5 * r2) + constant


def _pivoted_cholesky_np(
    g: np.ndarray, max_rank: int, rel_tol: float
) -> tuple[np.ndarray, int, np.ndarray]:
    """Greedy pivoted Cholesky on a dense PSD matrix.

    Returns ``(order, count, residual_diag)`` where ``order[:count]`` are the
    selected pivot indices in selection order and ``residual_diag`` is the
    Schur-complement diagonal after the last accepted pivot.  Selection stops
    at ``max_rank`` pivots or once the largest residual falls below
    ``rel_tol`` times the initial largest diagonal.  Ties break toward the
    lowest index (first maximum wins).
    """
    n = g.shape[0]
    d = np.ascontiguousarray(np.diag(g)).astype(np.float64).copy()
    low = np.empty((n, max_rank), dtype=np.float64)
    order = np.empty(max_rank, dtype=np.int64)
    threshold = rel_tol * max(float(d.max(initial=0.0)), 0.0) if n else 0.0
    count = 0
    for t in range(min(max_rank, n)):
        j = int(np.argmax(d))
        if d[j] <= threshold or d[j] <= 0.0:
            break
        piv = math.sqrt(d[j])
        col = g[:, j].astype(np.float64).copy()
        if t:
            col -= low[:, :t] @ low[j, :t]
        col /= piv
        low[:, t] = col
        d -= col * col
        np.maximum(d, 0.0, out=d)
        d[j] = 0.0
        order[t] = j
        count = t + 1
    return order[:count].copy(), count, d


try:  # pragma: no cover - exercised indirectly via the active backend
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    njit = None
    HAS_NUMBA = False


if HAS_NUMBA:

    @njit(cache=True)
    def _gram_matern52_nb(xa, xb, inv_ls, amplitude, constant):  # pragma: no cover
        na, dim = xa.shape
        nb = xb.shape[0]
        out = np.empty((na, nb), dtype=np.float64)
        for i in range(na):
            for j in range(nb):
                r2 = 0.0
                for k in range(dim):
                    t = (xa[i, k] - xb[j, k]) * inv_ls[k]
                    r2 += t * t
                s = _SQRT5 * math.sqrt(r2)
                out[i, j] = amplitude * (1.0 + s + 5.0 * r2 / 3.0) * math.exp(-s) + constant
        return out

    @njit(cache=True)
    def _gram_se_nb(xa, xb, inv_ls, amplitude, constant):  # pragma: no cover
        na, dim = xa.shape
        nb = xb.shape[0]
        out = np.empty((na, nb), dtype=np.float64)
        for i in range(na):
            for j in range(nb):
                r2 = 0.0
                for k in range(dim):
                    t = (xa[i, k] - xb[j, k]) * inv_ls[k]
                    r2 += t * t
                out[i, j] = amplitude * math.exp(-0.5 * r2) + constant
        return out

    @njit(cache=True)
    def _pivoted_cholesky_nb(g, max_rank, rel_tol):  # pragma: no cover
        n = g.shape[0]
        d = np.empty(n, dtype=np.float64)
        for i in range(n):
            d[i] = g[i, i]
        low = np.empty((n, max_rank), dtype=np.float64)
        order = np.empty(max_rank, dtype=np.int64)
        dmax0 = 0.0
        for i in range(n):
            if d[i] > dmax0:
                dmax0 = d[i]
        threshold = rel_tol * dmax0
        count = 0
        limit = max_rank if max_rank < n else n
        for t in range(limit):
            j = 0
            best = d[0]
            for i in range(1, n):
                if d[i] > best:
                    best = d[i]
                    j = i
            if best <= threshold or best <= 0.0:
                break
            piv = math.sqrt(best)
            for i in range(n):
                acc = g[i, j]
                for s in range(t):
                    acc -= low[i, s] * low[j, s]
                low[i, t] = acc / piv
            for i in range(n):
                d[i] -= low[i, t] * low[i, t]
                if d[i] < 0.0:
                    d[i] = 0.0
            d[j] = 0.0
            order[t] = j
            count = t + 1
        return order[:count].copy(), count, d

else:  # pragma: no cover
    _gram_matern52_nb = None
    _gram_se_nb = None
    _pivoted_cholesky_nb = None


def _resolve_backend() -> str:
    choice = os.environ.get(_ENV_VAR, "auto").strip().lower()
    if choice not in ("auto", "numpy", "numba"):
        raise ValueError(
            f"{_ENV_VAR} must be one of 'auto', 'numpy', 'numba'; got {choice!r}"
        )
    if choice == "numba" and not HAS_NUMBA:
        raise ImportError(f"{_ENV_VAR}=numba but numba is not installed")
    if choice == "auto":
        return "numba" if HAS_NUMBA else "numpy"
    return choice


BACKEND = _resolve_backend()

if BACKEND == "numba":
    gram_matern52 = _gram_matern52_nb
    gram_se = _gram_se_nb
    pivoted_cholesky = _pivoted_cholesky_nb
else:
    gram_matern52 = _gram_matern52_np
    gram_se = _gram_se_np
    pivoted_cholesky = _pivoted_cholesky_np


def warm_up() -> None:
    """Trigger JIT compilation of the hot kernels on a tiny problem.

    A no-op on the numpy path.  Call once before timing anything.
    """
    x = np.zeros((2, 1))
    ones = np.ones(1)
    gram_matern52(x, x, ones, 1.0, 0.0)
    gram_se(x, x, ones, 1.0, 0.0)
    pivoted_cholesky(np.eye(2), 1, 1e-10)
