"""Sparse vs dense graph aggregation, for each available kernel backend."""

import time

import numpy as np

from . import kernels
from .encoder import OpCounter, ssa_forward
from .errors import ContractError
from .graph import knn_visual_adjacency, minmax_normalize
from .numerics import make_rng

COLUMNS = ["backend", "mode", "B", "K", "C", "iters", "agg_madds", "proj_madds", "sec_per_iter", "max_dev"]


def available_backends():
    from ._accel import HAVE_NUMBA

    return ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]


def _inputs(b, k, c, seed):
    rng = make_rng(seed)
    f = rng.standard_normal((b, c))
    w = rng.standard_normal((c, c)) / np.sqrt(c)
    adj = minmax_normalize(knn_visual_adjacency(rng.standard_normal((b, b)), k))
    return f, w, adj


def _time(fn, iters):
    fn()  # warm-up, includes JIT compilation
    t0 = time.perf_counter()
    for _ in range(iters):
        fn()
    return (time.perf_counter() - t0) / iters


def run_bench(b, k, c, iters=20, seed=0, backends=None):
    """One row per (backend, mode). ``max_dev`` compares full SSA outputs."""
    if not 1 <= k < b:
        raise ContractError(f"bench needs 1 <= K < B, got K={k}, B={b}")
    f, w, adj = _inputs(b, k, c, seed)
    dense = adj.to_dense()

    sparse_cnt, dense_cnt = OpCounter(), OpCounter()
    out_sparse = ssa_forward(f, adj, w, sparse_cnt).value
    out_dense = ssa_forward(f, dense, w, dense_cnt).value
    dev = float(np.max(np.abs(out_sparse - out_dense)))

    fw = kernels.matmul(f, w)
    rows = []
    for name in backends or available_backends():
        mm, spmm, *_ = kernels.get_backend(name)
        t_dense = _time(lambda: mm(dense, fw), iters)
        t_sparse = _time(lambda: spmm(adj.indices, adj.weights, fw), iters)
        for mode, cnt, t in (("dense", dense_cnt, t_dense), ("sparse", sparse_cnt, t_sparse)):
            rows.append({
                "backend": name, "mode": mode, "B": b, "K": k, "C": c, "iters": iters,
                "agg_madds": cnt.aggregation, "proj_madds": cnt.projection,
                "sec_per_iter": t, "max_dev": dev,
            })
    return rows


def speedups(rows):
    """``{backend: dense_time / sparse_time}``."""
    by = {(r["backend"], r["mode"]): r["sec_per_iter"] for r in rows}
    return {be: by[(be, "dense")] / by[(be, "sparse")] for be, mode in by if mode == "dense"}
