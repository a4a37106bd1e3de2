"""Hyperbolic embedding head and the pairwise cross-entropy metric loss.

Points live in the Poincare ball ``{z : sqrt(c) |z| < 1}``. The head is a
linear layer followed by the exponential map at the origin; the loss is a
softmax over negative hyperbolic distances, averaged over ordered positive
pairs.
"""

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .errors import ContractError, DomainError, ShapeError
from .numerics import HEAD, ParamTensor, as_matrix, init_normal

_SERIES_BELOW = 1e-3


@dataclass
class HemParams:
    fc_w: ParamTensor
    fc_b: ParamTensor
    c: float = 1.0
    tau: float = 0.2
    norm_clip: float = 0.999

    def __post_init__(self):
        if self.c <= 0 or self.tau <= 0:
            raise ContractError(f"curvature and temperature must be positive (c={self.c}, tau={self.tau})")
        if not 0.0 < self.norm_clip < 1.0:
            raise ContractError(f"norm_clip must lie in (0, 1), got {self.norm_clip}")

    def tensors(self):
        return [self.fc_w, self.fc_b]


def init_hem(rng, c_in, d, c=1.0, tau=0.2, norm_clip=0.999, std=0.02):
    return HemParams(
        ParamTensor("hem.fc_w", init_normal(rng, c_in, d, std), HEAD),
        ParamTensor("hem.fc_b", np.zeros((1, d)), HEAD),
        c,
        tau,
        norm_clip,
    )


# ---------------------------------------------------------------- ball geometry


def _tanh_ratio(s):
    """``tanh(s) / s`` and ``(d/ds)(tanh(s)/s) / s`` for ``s >= 0``."""
    phi = np.empty_like(s)
    psi = np.empty_like(s)
    small = s < _SERIES_BELOW
    ss = s[small] ** 2
    phi[small] = 1.0 - ss / 3.0 + 2.0 * ss * ss / 15.0
    psi[small] = -2.0 / 3.0 + 8.0 * ss / 15.0 - 34.0 * ss * ss / 105.0
    big = ~small
    sb = s[big]
    th = np.tanh(sb)
    phi[big] = th / sb
    psi[big] = (sb * (1.0 - th * th) - th) / sb**3
    return phi, psi


def _expmap_factors(v, c, clip):
    sc = math.sqrt(c)
    s = sc * np.sqrt(np.sum(v * v, axis=1))
    phi, psi = _tanh_ratio(s)
    if clip is not None:
        r_max = math.atanh(clip)
        over = s > r_max
        if np.any(over):
            # radial rescale of v to length r_max / sqrt(c) before the map
            t = math.tanh(r_max)
            so = s[over]
            phi[over] = t / so
            psi[over] = -t / so**3
    return phi, psi


def exp_map0(v, c):
    """``tanh(sqrt(c)|v|) v / (sqrt(c)|v|)`` row by row; the origin maps to itself."""
    if c <= 0:
        raise ContractError(f"curvature must be positive, got {c}")
    v = as_matrix(v)
    phi, _ = _expmap_factors(v, c, None)
    return v * phi[:, None]


def mobius_add(u, v, c):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    uv = float(u @ v)
    uu = float(u @ u)
    vv = float(v @ v)
    num = (1.0 + 2.0 * c * uv + c * vv) * u + (1.0 - c * uu) * v
    return num / (1.0 + 2.0 * c * uv + c * c * uu * vv)


def _check_in_ball(x, c, what):
    r = math.sqrt(c) * float(np.linalg.norm(x))
    if not r < 1.0:
        raise DomainError(f"{what} has scaled norm {r:.17g}, not strictly inside the ball")


def poincare_distance(x, y, c=1.0):
    """Geodesic distance ``2/sqrt(c) artanh(sqrt(c) |(-x) (+) y|)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_in_ball(x, c, "x")
    _check_in_ball(y, c, "y")
    sc = math.sqrt(c)
    t = sc * float(np.linalg.norm(mobius_add(-x, y, c)))
    return 2.0 / sc * math.atanh(min(t, 1.0 - 1e-16))


def pairwise_distances(x, y, c=1.0):
    """All-pairs Poincare distances between the rows of ``x`` and ``y``."""
    return kernels.pairwise_poincare(as_matrix(x), as_matrix(y), float(c))


# ---------------------------------------------------------------- differentiable ops


def expmap0_op(v, c, clip):
    vv = v.value
    phi, psi = _expmap_factors(vv, c, clip)

    def back(g):
        gv = np.sum(g * vv, axis=1)
        return (g * phi[:, None] + (c * psi * gv)[:, None] * vv,)

    return ad._record(vv * phi[:, None], (v,), back)


def pairwise_distance_op(z, c):
    """``B x B`` distance matrix over the rows of ``z``."""
    zv = np.ascontiguousarray(z.value)
    dist = kernels.pairwise_poincare(zv, zv, float(c))

    def back(g):
        sc = math.sqrt(c)
        a = 1.0 - c * np.sum(zv * zv, axis=1)
        aa = np.outer(a, a)
        sh = np.sinh(sc * dist)
        with np.errstate(divide="ignore", invalid="ignore"):
            base = np.where(sh > 0, 4.0 * c / (aa * sc * sh), 0.0)
        # |x - y|^2 recovered from the distance to stay consistent with forward
        q = aa * np.sinh(0.5 * sc * dist) ** 2 / c
        ks = (g + g.T) * base
        row = ks.sum(axis=1)
        radial = (c / a) * np.sum(ks * q, axis=1)
        gz = zv * (row + radial)[:, None] - kernels.matmul(np.ascontiguousarray(ks), zv)
        return (gz,)

    return ad._record(dist, (z,), back)


def _logsumexp_rows(x):
    m = np.max(x, axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(x - m), axis=1, keepdims=True)))[:, 0]


def pair_ce_op(dist, labels, tau):
    dv = dist.value
    b = dv.shape[0]
    labels = np.asarray(labels)
    pos = (labels[:, None] == labels[None, :]) & ~np.eye(b, dtype=bool)
    n_pos = pos.sum(axis=1)
    total = int(n_pos.sum())
    if total == 0:
        counts = dict(sorted(Counter(labels.tolist()).items()))
        raise ContractError(
            f"no positive pair in a batch of {b} samples with label counts {counts}"
        )
    logits = -dv / tau
    np.fill_diagonal(logits, -np.inf)
    lse = _logsumexp_rows(logits)
    value = (np.sum(dv[pos]) / tau + np.sum(n_pos * lse)) / total

    def back(g):
        soft = np.exp(logits - lse[:, None])
        gd = (pos - n_pos[:, None] * soft) / (tau * total)
        return (float(g) * gd,)

    return ad._record(np.asarray(value), (dist,), back)


# ---------------------------------------------------------------- public forward


def hem_forward(f, p, tape=None):
    """Linear projection then clipped exponential map; rows land inside the ball."""
    tape = ad.Tape(record=False) if tape is None else tape
    f = f if isinstance(f, ad.Node) else ad.const(f)
    if f.value.shape[1] != p.fc_w.value.shape[0]:
        raise ShapeError(f"features have {f.value.shape[1]} columns, head expects {p.fc_w.value.shape[0]}")
    v = ad.add_bias(ad.matmul(f, tape.param(p.fc_w)), tape.param(p.fc_b))
    return expmap0_op(v, p.c, p.norm_clip)


def pairwise_ce_loss(z, labels, p):
    z = z if isinstance(z, ad.Node) else ad.const(z)
    return pair_ce_op(pairwise_distance_op(z, p.c), labels, p.tau)


def total_loss(l1, l2, alpha):
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return l1
    if alpha == 0.0:
        return l2
    return ad.add(ad.scale(l1, alpha), ad.scale(l2, 1.0 - alpha))
