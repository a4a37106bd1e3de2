"""Dense float64 matrix helpers shared by every layer.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. Vectors
(biases, layer-norm affine terms) are stored as ``1 x n`` row matrices so the
checkpoint format only ever deals with 2-D arrays.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import kernels
from .errors import ShapeError

BACKBONE = "backbone-adapter"
HEAD = "bgformer-head"
GROUPS = (BACKBONE, HEAD)


def as_matrix(x):
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matmul(a, b):
    """Product ``a @ b`` with a fixed left-to-right reduction order per cell."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return kernels.matmul(a, b)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Row-wise layer norm with population variance."""
    x = as_matrix(x)
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    return xc / np.sqrt(var + eps) * np.reshape(gamma, (1, -1)) + np.reshape(beta, (1, -1))


def gelu(x):
    """Exact GELU, ``x * Phi(x)``."""
    x = np.asarray(x, dtype=np.float64)
    return x * ndtr(x)


def gelu_grad(x):
    return ndtr(x) + x * np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


def make_rng(seed):
    """Seeded PCG64 generator; the same seed yields the same stream everywhere."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def init_normal(rng, rows, cols, std):
    if std < 0:
        raise ValueError("std must be >= 0")
    draw = rng.standard_normal((rows, cols))
    if std == 0:
        return np.zeros((rows, cols))
    return draw * std


@dataclass
class ParamTensor:
    name: str
    value: np.ndarray
    group: str = HEAD
    grad: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.value = as_matrix(self.value).copy()
        if self.group not in GROUPS:
            raise ValueError(f"unknown parameter group {self.group!r}")
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)
