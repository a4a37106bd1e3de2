"""Dual visual/label batch graph over the samples of one mini-batch."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError, ShapeError
from .numerics import as_matrix


@dataclass(frozen=True)
class SparseAdjacency:
    """Directed adjacency with exactly ``k`` stored neighbours per row.

    ``indices[i]`` holds the neighbour columns of row ``i`` in ascending
    order; ``weights[i]`` the matching edge weights.
    """

    indices: np.ndarray
    weights: np.ndarray

    @property
    def size(self):
        return self.indices.shape[0]

    @property
    def k(self):
        return self.indices.shape[1]

    @property
    def n_edges(self):
        return self.indices.size

    def to_dense(self):
        out = np.zeros((self.size, self.size))
        rows = np.repeat(np.arange(self.size), self.k)
        out[rows, self.indices.reshape(-1)] = self.weights.reshape(-1)
        return out

    def edges(self):
        """Yield ``(i, j, weight)`` in row-major order."""
        for i in range(self.size):
            for j, w in zip(self.indices[i], self.weights[i]):
                yield i, int(j), float(w)


@dataclass(frozen=True)
class BatchGraph:
    a_v: SparseAdjacency
    a_v_norm: SparseAdjacency
    a_l_norm: np.ndarray
    labels: np.ndarray
    k: int


def similarity(f):
    f = as_matrix(f)
    if f.shape[0] < 2:
        raise ContractError(f"similarity needs at least 2 samples, got {f.shape[0]}")
    return kernels.matmul(f, np.ascontiguousarray(f.T))


def knn_visual_adjacency(s, k):
    """Keep the ``k`` most similar other samples in every row.

    Ties at the cut-off go to the smaller column index. The result is
    row-wise and therefore not symmetric in general.
    """
    s = as_matrix(s)
    b = s.shape[0]
    if s.shape != (b, b):
        raise ShapeError(f"similarity matrix must be square, got {s.shape}")
    if not 1 <= k <= b - 1:
        raise ContractError(f"k must lie in [1, {b - 1}] for a batch of {b}, got {k}")
    idx, w = kernels.knn_topk(s, int(k))
    return SparseAdjacency(idx, w)


def label_adjacency(labels):
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size < 1:
        raise ContractError("labels must be a non-empty vector")
    return (labels[:, None] == labels[None, :]).astype(np.float64)


def minmax_normalize(a_v):
    """Rescale stored weights linearly onto [0, 1].

    The min and max run over stored edges only; absent edges stay zero.
    If every stored weight is equal the result is all zeros.
    """
    w = a_v.weights
    if w.size == 0:
        raise ContractError("adjacency has no stored entries")
    lo = w.min()
    hi = w.max()
    if hi == lo:
        out = np.zeros_like(w)
    else:
        out = (w - lo) / (hi - lo)
    return SparseAdjacency(a_v.indices, out)


def sym_laplacian_normalize(a_l):
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the row sums of ``A`` itself."""
    a_l = as_matrix(a_l)
    d = a_l.sum(axis=1)
    # sqrt(d_i * d_j) keeps exact values like 1/m for a single class of size m
    return (a_l + np.eye(a_l.shape[0])) / np.sqrt(np.outer(d, d))


def build_batch_graph(f, labels, k):
    """Both adjacencies for one batch; ``k`` is capped at ``B - 1``."""
    f = as_matrix(f)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (f.shape[0],):
        raise ShapeError(f"{labels.shape[0]} labels for {f.shape[0]} feature rows")
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    k = min(int(k), f.shape[0] - 1)
    a_v = knn_visual_adjacency(similarity(f), k)
    return BatchGraph(
        a_v=a_v,
        a_v_norm=minmax_normalize(a_v),
        a_l_norm=sym_laplacian_normalize(label_adjacency(labels)),
        labels=labels,
        k=int(k),
    )


def write_graph_dump(path_or_file, g):
    """Edge dump: ``# B=.. k=..`` header then ``i, j, raw, norm`` tab-separated."""
    lines = [f"# B={g.a_v.size} k={g.k}"]
    for (i, j, raw), (_, _, norm) in zip(g.a_v.edges(), g.a_v_norm.edges()):
        lines.append(f"{i}\t{j}\t{raw!r}\t{norm!r}")
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w", encoding="utf-8") as fh:
            fh.write(text)


def graph_stats(g):
    raw = g.a_v.weights
    norm = g.a_v_norm.weights
    return {
        "rows": g.a_v.size,
        "edges": g.a_v.n_edges,
        "raw_min": float(raw.min()),
        "raw_max": float(raw.max()),
        "norm_min": float(norm.min()),
        "norm_max": float(norm.max()),
        "label_blocks": int(np.unique(g.labels).size),
    }
