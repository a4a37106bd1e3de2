"""BGFormer encoder: dual graph-constrained attention, fusion, FFN, stacking.

Forward functions take and return :class:`~bgformer.autodiff.Node` values.
Raw arrays are accepted too and treated as constants. Parameters are pulled
onto ``tape``; with the default ``tape=None`` nothing is recorded.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractError, ShapeError
from .graph import SparseAdjacency
from .numerics import HEAD, ParamTensor, init_normal

LN_EPS = 1e-5
INIT_STD = 0.02


@dataclass
class OpCounter:
    """Multiply-add counts, split into graph aggregation and projection."""

    aggregation: int = 0
    projection: int = 0


@dataclass
class BlockParams:
    w_ssa: ParamTensor
    ffn_w1: ParamTensor
    ffn_b1: ParamTensor
    ffn_w2: ParamTensor
    ffn_b2: ParamTensor
    ln_gamma: ParamTensor
    ln_beta: ParamTensor

    def tensors(self):
        return [self.w_ssa, self.ffn_w1, self.ffn_b1, self.ffn_w2, self.ffn_b2,
                self.ln_gamma, self.ln_beta]


@dataclass
class EncoderStack:
    blocks: list
    inter_ln: list = field(default_factory=list)
    lam: float = 0.4

    def __post_init__(self):
        if not self.blocks:
            raise ContractError("an encoder stack needs at least one block")
        if len(self.inter_ln) != len(self.blocks) - 1:
            raise ContractError(
                f"{len(self.blocks)} blocks need {len(self.blocks) - 1} inter-block norms, "
                f"got {len(self.inter_ln)}"
            )
        _check_unit("lambda", self.lam)

    def tensors(self):
        out = []
        for i, block in enumerate(self.blocks):
            out.extend(block.tensors())
            if i < len(self.inter_ln):
                out.extend(self.inter_ln[i])
        return out


def _check_unit(name, value):
    if not 0.0 <= value <= 1.0:
        raise ContractError(f"{name} must lie in [0, 1], got {value}")


def _node(x):
    return x if isinstance(x, ad.Node) else ad.const(x)


def _tape(tape):
    return ad.Tape(record=False) if tape is None else tape


def ssa_forward(f, norm_adj, w, counter=None):
    """``F + Norm(A) (F W)`` for a sparse or dense normalized adjacency."""
    f = _node(f)
    w = _node(w)
    b, c = f.value.shape
    if w.value.shape != (c, c):
        raise ShapeError(f"projection must be {c}x{c}, got {w.value.shape}")
    fw = ad.matmul(f, w)
    if isinstance(norm_adj, SparseAdjacency):
        if norm_adj.size != b:
            raise ShapeError(f"adjacency is {norm_adj.size}x{norm_adj.size}, batch is {b}")
        agg = ad.spmm(norm_adj.indices, norm_adj.weights, fw)
        n_agg = norm_adj.n_edges * c
    else:
        adj = np.asarray(norm_adj, dtype=np.float64)
        if adj.shape != (b, b):
            raise ShapeError(f"adjacency is {adj.shape}, batch is {b}")
        agg = ad.matmul(ad.const(adj), fw)
        n_agg = b * b * c
    if counter is not None:
        counter.aggregation += n_agg
        counter.projection += b * c * c
    return ad.add(f, agg)


def fuse(f_v, f_l, lam):
    _check_unit("lambda", lam)
    if lam == 1.0:
        return f_v
    if lam == 0.0:
        return f_l
    # lerp form: exact when both branches agree
    return ad.add(f_l, ad.scale(ad.sub(f_v, f_l), lam))


def ffn_residual(x, p, tape=None):
    """``x + FFN(LN(x))`` with a GELU two-layer FFN."""
    tape = _tape(tape)
    x = _node(x)
    z = ad.layer_norm(x, tape.param(p.ln_gamma), tape.param(p.ln_beta), LN_EPS)
    h = ad.gelu(ad.add_bias(ad.matmul(z, tape.param(p.ffn_w1)), tape.param(p.ffn_b1)))
    out = ad.add_bias(ad.matmul(h, tape.param(p.ffn_w2)), tape.param(p.ffn_b2))
    return ad.add(x, out)


def block_forward(f, g, p, lam, tape=None, counter=None):
    tape = _tape(tape)
    w = tape.param(p.w_ssa)
    f_v = ssa_forward(f, g.a_v_norm, w, counter)
    f_l = ssa_forward(f, g.a_l_norm, w, counter)
    return ffn_residual(fuse(f_v, f_l, lam), p, tape)


def stack_forward(f, g, stack, tape=None, counter=None):
    """Run every block; layer norm sits only between consecutive blocks."""
    tape = _tape(tape)
    x = _node(f)
    for i, block in enumerate(stack.blocks):
        if i > 0:
            gamma, beta = stack.inter_ln[i - 1]
            x = ad.layer_norm(x, tape.param(gamma), tape.param(beta), LN_EPS)
        x = block_forward(x, g, block, stack.lam, tape, counter)
    return x


def init_block(rng, c, hidden, prefix):
    def normal(name, rows, cols):
        return ParamTensor(f"{prefix}.{name}", init_normal(rng, rows, cols, INIT_STD), HEAD)

    def fill(name, cols, value):
        return ParamTensor(f"{prefix}.{name}", np.full((1, cols), value), HEAD)

    return BlockParams(
        w_ssa=normal("w_ssa", c, c),
        ffn_w1=normal("ffn_w1", c, hidden),
        ffn_b1=fill("ffn_b1", hidden, 0.0),
        ffn_w2=normal("ffn_w2", hidden, c),
        ffn_b2=fill("ffn_b2", c, 0.0),
        ln_gamma=fill("ln_gamma", c, 1.0),
        ln_beta=fill("ln_beta", c, 0.0),
    )


def init_stack(rng, c, ffn_ratio=4, n_blocks=2, lam=0.4):
    if c < 1 or n_blocks < 1:
        raise ContractError(f"need C >= 1 and N >= 1, got C={c}, N={n_blocks}")
    hidden = int(round(ffn_ratio * c))
    if hidden < 1:
        raise ContractError(f"ffn_ratio {ffn_ratio} gives an empty hidden layer")
    blocks = [init_block(rng, c, hidden, f"encoder.block{i}") for i in range(n_blocks)]
    inter = [
        (
            ParamTensor(f"encoder.inter_ln{i}.gamma", np.ones((1, c)), HEAD),
            ParamTensor(f"encoder.inter_ln{i}.beta", np.zeros((1, c)), HEAD),
        )
        for i in range(n_blocks - 1)
    ]
    return EncoderStack(blocks, inter, float(lam))
