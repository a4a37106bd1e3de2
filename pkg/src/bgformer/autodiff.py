"""Minimal reverse-mode differentiation over float64 matrices.

A :class:`Tape` records every op applied to tracked nodes. Parameters enter
through :meth:`Tape.param`; registering the same :class:`ParamTensor` twice
returns the same leaf, so a weight used in two places accumulates both
contributions. ``Tape(record=False)`` gives an evaluation-only tape that
stores nothing.

Only the ops needed by the model are provided. There is no broadcasting:
bias rows go through :func:`add_bias`.
"""

import numpy as np

from . import kernels
from .errors import ContractError, ShapeError
from .numerics import gelu as _gelu
from .numerics import gelu_grad as _gelu_grad


class Node:
    __slots__ = ("value", "tape", "parents", "backward_fn", "index")

    def __init__(self, value, tape=None, parents=(), backward_fn=None, index=-1):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.index = index

    @property
    def requires_grad(self):
        return self.tape is not None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape}, tracked={self.requires_grad})"


class Tape:
    def __init__(self, record=True):
        self.record_ops = record
        self.nodes = []
        self._leaves = {}

    def param(self, p):
        """Leaf node bound to a :class:`ParamTensor`."""
        if not self.record_ops:
            return Node(p.value)
        hit = self._leaves.get(id(p))
        if hit is not None:
            return hit[1]
        node = self._append(p.value, (), None)
        self._leaves[id(p)] = (p, node)
        return node

    def params(self):
        return [p for p, _ in self._leaves.values()]

    def _append(self, value, parents, backward_fn):
        node = Node(value, self, parents, backward_fn, len(self.nodes))
        self.nodes.append(node)
        return node


def const(value):
    """Untracked node; gradients never flow into it."""
    return Node(np.asarray(value, dtype=np.float64))


def _record(value, parents, backward_fn):
    for p in parents:
        if p.tape is not None:
            return p.tape._append(value, parents, backward_fn)
    return Node(value)


def backward(tape, loss):
    """Fill ``grad`` on every parameter registered on ``tape``.

    Parameters not reachable from ``loss`` get a zero gradient. Returns a
    ``{name: grad}`` dict.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    if loss.tape is not tape:
        raise ContractError("loss node was not recorded on this tape")
    grads = [None] * len(tape.nodes)
    grads[loss.index] = np.ones_like(loss.value)
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = grads[node.index]
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or parent.tape is None:
                continue
            if grads[parent.index] is None:
                grads[parent.index] = pg
            else:
                grads[parent.index] = grads[parent.index] + pg
    out = {}
    for p, leaf in tape._leaves.values():
        g = grads[leaf.index]
        p.grad = np.zeros_like(p.value) if g is None else np.array(g, dtype=np.float64)
        out[p.name] = p.grad
    return out


def fd_check(forward_fn, params, h=1e-6, analytic=None):
    """Max relative error between analytic and central-difference gradients.

    ``forward_fn(tape)`` must build the scalar loss on the given tape. If
    ``analytic`` (``{name: grad}``) is omitted it is computed by
    :func:`backward`.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if analytic is None:
        tape = Tape()
        analytic = backward(tape, forward_fn(tape))
    worst = 0.0
    for p in params:
        a_grad = analytic.get(p.name)
        if a_grad is None:
            a_grad = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            f_plus = float(forward_fn(Tape(record=False)).value)
            flat[i] = old - h
            f_minus = float(forward_fn(Tape(record=False)).value)
            flat[i] = old
            num = (f_plus - f_minus) / (2.0 * h)
            ana = float(a_grad.reshape(-1)[i])
            err = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------- ops


def _mm(a, b):
    return kernels.matmul(np.ascontiguousarray(a), np.ascontiguousarray(b))


def matmul(a, b):
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.value.shape} x {b.value.shape}")
    av, bv = a.value, b.value

    def back(g):
        ga = _mm(g, bv.T) if a.requires_grad else None
        gb = _mm(av.T, g) if b.requires_grad else None
        return ga, gb

    return _record(_mm(av, bv), (a, b), back)


def add(a, b):
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add shape mismatch: {a.value.shape} vs {b.value.shape}")
    return _record(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    if a.value.shape != b.value.shape:
        raise ShapeError(f"sub shape mismatch: {a.value.shape} vs {b.value.shape}")
    return _record(a.value - b.value, (a, b), lambda g: (g, -g))


def add_bias(x, b):
    """``x + b`` with ``b`` a ``1 x n`` row added to every row of ``x``."""
    if b.value.shape != (1, x.value.shape[1]):
        raise ShapeError(f"bias shape {b.value.shape} does not fit {x.value.shape}")
    return _record(x.value + b.value, (x, b), lambda g: (g, g.sum(axis=0, keepdims=True)))


def scale(x, s):
    s = float(s)
    return _record(x.value * s, (x,), lambda g: (g * s,))


def gelu(x):
    xv = x.value
    return _record(_gelu(xv), (x,), lambda g: (g * _gelu_grad(xv),))


def layer_norm(x, gamma, beta, eps=1e-5):
    xv = x.value
    if gamma.value.shape != (1, xv.shape[1]) or beta.value.shape != (1, xv.shape[1]):
        raise ShapeError("layer_norm affine parameters must be 1 x C")
    mu = xv.mean(axis=1, keepdims=True)
    xc = xv - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    sigma = np.sqrt(var + eps)
    xhat = xc / sigma
    gv = gamma.value

    def back(g):
        gxhat = g * gv
        gx = (
            gxhat
            - gxhat.mean(axis=1, keepdims=True)
            - xhat * np.mean(gxhat * xhat, axis=1, keepdims=True)
        ) / sigma
        return gx, np.sum(g * xhat, axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return _record(xhat * gv + beta.value, (x, gamma, beta), back)


def spmm(idx, w, x):
    """Sparse aggregation ``A @ x`` for a constant fixed-width adjacency."""
    if idx.shape[0] != x.value.shape[0]:
        raise ShapeError(f"adjacency has {idx.shape[0]} rows, features {x.value.shape[0]}")
    n_rows = x.value.shape[0]

    def back(g):
        return (kernels.spmm_t(idx, w, np.ascontiguousarray(g), n_rows),)

    return _record(kernels.spmm(idx, w, np.ascontiguousarray(x.value)), (x,), back)


def sum_all(x):
    shape = x.value.shape
    return _record(np.asarray(x.value.sum()), (x,), lambda g: (np.full(shape, float(g)),))
