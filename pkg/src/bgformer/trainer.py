"""Dual-branch training, BGFormer-free inference and Recall@K evaluation."""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import Checkpoint, check_shapes
from .data import AdapterParams, adapter_forward, init_adapter, sample_batch, split_by_class
from .encoder import BlockParams, EncoderStack, init_stack, stack_forward
from .errors import ContractError
from .graph import build_batch_graph
from .hyperbolic import HemParams, hem_forward, init_hem, pairwise_ce_loss, pairwise_distances, total_loss
from .numerics import BACKBONE, HEAD, ParamTensor, make_rng
from .optim import AdamW, AdamWState

log = logging.getLogger(__name__)

RECALL_KS = (1, 2, 4, 8)
LOG_HEADER = ["step", "epoch"] + [f"recall@{k}" for k in RECALL_KS] + ["loss"]


@dataclass
class Model:
    adapter: AdapterParams
    stack: EncoderStack
    hem: HemParams

    def tensors(self):
        out = list(self.adapter.tensors())
        if self.stack is not None:
            out.extend(self.stack.tensors())
        out.extend(self.hem.tensors())
        return out


def init_model(cfg, c_in, rng):
    adapter = init_adapter(c_in, enabled=cfg.adapter)
    stack = init_stack(rng, c_in, cfg.ffn_ratio, cfg.n_blocks, cfg.lambda_)
    hem = init_hem(rng, c_in, cfg.embed_dim, cfg.curvature, cfg.tau, cfg.norm_clip)
    return Model(adapter, stack, hem)


def make_optimizer(model, cfg, state=None):
    lrs = {BACKBONE: cfg.lr_backbone, HEAD: cfg.lr_head}
    return AdamW(model.tensors(), lrs, cfg.weight_decay, state)


# ---------------------------------------------------------------- training


def forward_loss(tape, features, labels, model, cfg, graph=None):
    """Total loss ``alpha * L(HEM(F)) + (1 - alpha) * L(HEM(BGFormer(F)))``.

    The batch graph is built from the adapter output and carries no
    gradient. Pass ``graph`` to hold it fixed.
    """
    f = adapter_forward(features, model.adapter, tape)
    if graph is None:
        graph = build_batch_graph(f.value, labels, cfg.k_neighbors)
    f_tilde = stack_forward(f, graph, model.stack, tape)
    l1 = pairwise_ce_loss(hem_forward(f, model.hem, tape), labels, model.hem)
    l2 = pairwise_ce_loss(hem_forward(f_tilde, model.hem, tape), labels, model.hem)
    return total_loss(l1, l2, cfg.alpha)


def train_step(batch, model, opt, cfg):
    counts = np.unique(batch.labels, return_counts=True)[1]
    if counts.min() < 2:
        raise ContractError("every class in a training batch needs at least 2 samples")
    opt.zero_grad()
    tape = ad.Tape()
    loss = forward_loss(tape, batch.features, batch.labels, model, cfg)
    ad.backward(tape, loss)
    opt.step()
    return float(loss.value)


# ---------------------------------------------------------------- evaluation


def inference_embed(features, model, chunk=256):
    """Ball embeddings ``HEM(adapter(x))``; the encoder stack is never touched."""
    features = np.asarray(features, dtype=np.float64)
    parts = []
    for lo in range(0, features.shape[0], max(1, int(chunk))):
        x = features[lo : lo + chunk]
        parts.append(hem_forward(adapter_forward(x, model.adapter), model.hem).value)
    if not parts:
        return np.zeros((0, model.hem.fc_w.value.shape[1]))
    return np.concatenate(parts, axis=0)


def recall_at_k(embeddings, labels, ks=RECALL_KS, c=1.0, report=None):
    """Fraction of queries with a same-class sample among their ``k`` nearest.

    Neighbours are ranked by Poincare distance, ties to the smaller index.
    Queries whose class has no other member are skipped; pass a dict as
    ``report`` to receive the counts.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    m = z.shape[0]
    if m == 0:
        raise ContractError("recall_at_k needs a non-empty embedding set")
    if m < 2:
        raise ContractError("recall_at_k needs at least 2 samples")
    ks = [int(k) for k in ks]
    _, inv, counts = np.unique(labels, return_inverse=True, return_counts=True)
    valid = counts[inv] >= 2
    dist = pairwise_distances(z, z, c)
    np.fill_diagonal(dist, np.inf)
    kmax = min(max(ks), m - 1)
    order = np.argsort(dist, axis=1, kind="stable")[:, :kmax]
    hits = labels[order] == labels[:, None]
    first_hit = np.where(hits.any(axis=1), hits.argmax(axis=1), kmax)
    n_valid = int(valid.sum())
    if report is not None:
        report["queries"] = n_valid
        report["excluded"] = m - n_valid
    if n_valid == 0:
        raise ContractError("no query has another sample of its class")
    return {k: float(np.mean(first_hit[valid] < k)) for k in ks}


def evaluate(model, ds, ks=RECALL_KS):
    z = inference_embed(ds.features, model)
    return recall_at_k(z, ds.labels, ks, model.hem.c)


# ---------------------------------------------------------------- checkpoints


def model_to_checkpoint(model, cfg, step=0, history=None):
    tensors = {p.name: p.value.copy() for p in model.tensors()}
    return Checkpoint(tensors, cfg, step, list(history or []))


def model_from_checkpoint(ckpt):
    """Rebuild a model; a checkpoint without encoder tensors yields ``stack=None``."""
    check_shapes(ckpt)
    t = ckpt.tensors
    cfg = ckpt.config

    def pt(name, group=HEAD):
        return ParamTensor(name, t[name], group)

    if "adapter.w" in t:
        adapter = AdapterParams(pt("adapter.w", BACKBONE), pt("adapter.b", BACKBONE), True)
    else:
        adapter = init_adapter(t["hem.fc_w"].shape[0], enabled=False)
    stack = None
    if "encoder.block0.w_ssa" in t:
        blocks = []
        for i in range(cfg.n_blocks):
            pre = f"encoder.block{i}"
            blocks.append(BlockParams(*(pt(f"{pre}.{n}") for n in (
                "w_ssa", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2", "ln_gamma", "ln_beta"))))
        inter = [
            (pt(f"encoder.inter_ln{i}.gamma"), pt(f"encoder.inter_ln{i}.beta"))
            for i in range(cfg.n_blocks - 1)
        ]
        stack = EncoderStack(blocks, inter, cfg.lambda_)
    hem = HemParams(pt("hem.fc_w"), pt("hem.fc_b"), cfg.curvature, cfg.tau, cfg.norm_clip)
    return Model(adapter, stack, hem)


# ---------------------------------------------------------------- loop


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    log: list = field(default_factory=list)
    best_recall: float = -1.0


def batches_per_epoch(n_train_classes, p):
    return math.ceil(n_train_classes / p)


def _seed_rngs(seed):
    init_seq, sample_seq = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.Generator(np.random.PCG64(init_seq)), np.random.Generator(np.random.PCG64(sample_seq))


def train_loop(cfg, dataset, split=None):
    """Train for ``cfg.epochs`` epochs, evaluating Recall@K on held-out classes.

    Evaluation runs before training, every ``eval_every`` epochs and after
    the last epoch. The checkpoint with the highest Recall@1 is kept; ties
    keep the earlier one. ``split`` may supply a ready ``(train, test)`` pair.
    """
    cfg.validate()
    train, test = split if split is not None else split_by_class(dataset, cfg.train_fraction)
    init_rng, sample_rng = _seed_rngs(cfg.seed)
    model = init_model(cfg, train.dim, init_rng)
    opt = make_optimizer(model, cfg, AdamWState())
    n_batches = batches_per_epoch(len(train.classes), cfg.p)
    rows = []
    best = None
    best_r1 = -1.0
    step = 0
    pending = []

    def record(epoch):
        nonlocal best, best_r1
        rec = evaluate(model, test)
        loss = float(np.mean(pending)) if pending else ""
        row = {"step": step, "epoch": epoch, **{f"recall@{k}": rec[k] for k in RECALL_KS}, "loss": loss}
        rows.append(row)
        pending.clear()
        log.info("epoch %d step %d recall@1 %.4f", epoch, step, rec[1])
        if rec[1] > best_r1:
            best_r1 = rec[1]
            best = model_to_checkpoint(model, cfg, step)

    record(0)
    for epoch in range(1, cfg.epochs + 1):
        for _ in range(n_batches):
            batch = sample_batch(train, cfg.p, cfg.k_pc, sample_rng)
            pending.append(train_step(batch, model, opt, cfg))
            step += 1
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            record(epoch)
    final = model_to_checkpoint(model, cfg, step, rows)
    best.history = list(rows)
    return TrainResult(best, final, rows, best_r1)


def write_metric_log(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        for row in rows:
            writer.writerow([_cell(row[k]) for k in LOG_HEADER])


def _cell(v):
    return repr(v) if isinstance(v, float) else str(v)
