"""Hot numeric kernels.

Every kernel exists twice: a numba loop (``*_nb``) and a pure-numpy version
(``*_np``). The public names dispatch on ``_accel.USE_NUMBA``. Both versions
use the same per-output-cell summation order wherever that is cheap to
guarantee, so results agree to the last bit for matmul and spmm.

Inputs are assumed validated and C-contiguous float64 / int64; the wrappers
in :mod:`bgformer.numerics` do the checking.
"""

import math

import numpy as np

from ._accel import HAVE_NUMBA, USE_NUMBA, njit

# ---------------------------------------------------------------- matmul


def matmul_np(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for p in range(k):
        out += a[:, p : p + 1] * b[p : p + 1, :]
    return out


@njit
def matmul_nb(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for p in range(k):
            aip = a[i, p]
            for j in range(n):
                out[i, j] += aip * b[p, j]
    return out


# ---------------------------------------------------------------- sparse aggregation
# Fixed-width row format: row i has neighbours idx[i, :] with weights w[i, :].


def spmm_np(idx, w, x):
    out = np.zeros((idx.shape[0], x.shape[1]))
    for t in range(idx.shape[1]):
        out += w[:, t : t + 1] * x[idx[:, t]]
    return out


@njit
def spmm_nb(idx, w, x):
    b, kk = idx.shape
    c = x.shape[1]
    out = np.zeros((b, c))
    for i in range(b):
        for t in range(kk):
            j = idx[i, t]
            wt = w[i, t]
            for ch in range(c):
                out[i, ch] += wt * x[j, ch]
    return out


def spmm_t_np(idx, w, g, n_rows):
    """Transpose product: ``A^T g`` for the fixed-width sparse ``A``."""
    out = np.zeros((n_rows, g.shape[1]))
    for t in range(idx.shape[1]):
        np.add.at(out, idx[:, t], w[:, t : t + 1] * g)
    return out


@njit
def spmm_t_nb(idx, w, g, n_rows):
    b, kk = idx.shape
    c = g.shape[1]
    out = np.zeros((n_rows, c))
    for t in range(kk):
        for i in range(b):
            j = idx[i, t]
            wt = w[i, t]
            for ch in range(c):
                out[j, ch] += wt * g[i, ch]
    return out


# ---------------------------------------------------------------- k-NN selection


def knn_topk_np(s, k):
    b = s.shape[0]
    key = -s.copy()
    np.fill_diagonal(key, np.inf)
    order = np.argsort(key, axis=1, kind="stable")[:, :k]
    idx = np.sort(order, axis=1).astype(np.int64)
    w = np.take_along_axis(s, idx, axis=1).copy()
    assert idx.shape == (b, k)
    return idx, w


@njit
def knn_topk_nb(s, k):
    b = s.shape[0]
    idx = np.empty((b, k), dtype=np.int64)
    w = np.empty((b, k))
    key = np.empty(b)
    for i in range(b):
        for j in range(b):
            key[j] = -s[i, j]
        key[i] = np.inf
        order = np.argsort(key, kind="mergesort")
        sel = np.sort(order[:k])
        for t in range(k):
            idx[i, t] = sel[t]
            w[i, t] = s[i, sel[t]]
    return idx, w


# ---------------------------------------------------------------- Poincare distances
# d(x, y) = 2/sqrt(c) * artanh(sqrt(c) * |(-x) (+) y|), using the identity
# |(-x) (+) y|^2 = |x - y|^2 / (1 - 2c<x,y> + c^2 |x|^2 |y|^2).

_T_MAX = 1.0 - 1e-16


def pairwise_poincare_np(x, y, c):
    sc = math.sqrt(c)
    chunk = max(1, (1 << 21) // max(1, y.shape[0] * x.shape[1]))
    xx = np.sum(x * x, axis=1)
    yy = np.sum(y * y, axis=1)
    out = np.empty((x.shape[0], y.shape[0]))
    for lo in range(0, x.shape[0], chunk):
        hi = min(lo + chunk, x.shape[0])
        diff = x[lo:hi, None, :] - y[None, :, :]
        q = np.sum(diff * diff, axis=2)
        xy = np.sum(x[lo:hi, None, :] * y[None, :, :], axis=2)
        den = 1.0 - 2.0 * c * xy + c * c * np.outer(xx[lo:hi], yy)
        t = np.minimum(sc * np.sqrt(q / den), _T_MAX)
        out[lo:hi] = (2.0 / sc) * np.arctanh(t)
    return out


@njit
def pairwise_poincare_nb(x, y, c):
    m, d = x.shape
    n = y.shape[0]
    sc = math.sqrt(c)
    xx = np.zeros(m)
    yy = np.zeros(n)
    for i in range(m):
        for k in range(d):
            xx[i] += x[i, k] * x[i, k]
    for j in range(n):
        for k in range(d):
            yy[j] += y[j, k] * y[j, k]
    out = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            q = 0.0
            xy = 0.0
            for k in range(d):
                diff = x[i, k] - y[j, k]
                q += diff * diff
                xy += x[i, k] * y[j, k]
            den = 1.0 - 2.0 * c * xy + c * c * xx[i] * yy[j]
            t = min(sc * math.sqrt(q / den), _T_MAX)
            out[i, j] = (2.0 / sc) * math.atanh(t)
    return out


# ---------------------------------------------------------------- dispatch

BACKEND = "numba" if USE_NUMBA else "numpy"

_TABLE = {
    "numba": (matmul_nb, spmm_nb, spmm_t_nb, knn_topk_nb, pairwise_poincare_nb),
    "numpy": (matmul_np, spmm_np, spmm_t_np, knn_topk_np, pairwise_poincare_np),
}


def get_backend(name):
    """Return the kernel tuple ``(matmul, spmm, spmm_t, knn_topk, pairwise_poincare)``."""
    if name not in _TABLE:
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise ValueError("numba is not installed")
    return _TABLE[name]


matmul, spmm, spmm_t, knn_topk, pairwise_poincare = _TABLE[BACKEND]
