"""``bgformer`` command line: gen-data, train, eval, graph, bench.

Data goes to stdout as CSV; logs and errors go to stderr. Failures exit
non-zero with a single ``error: ...`` line.
"""

import argparse
import csv
import logging
import os
import sys

from . import bench as bench_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config, with_overrides
from .data import gen_synthetic, load_embeddings, sample_batch, save_embeddings, split_by_class
from .errors import BGFormerError
from .graph import build_batch_graph, graph_stats, write_graph_dump
from .numerics import make_rng
from .trainer import RECALL_KS, inference_embed, model_from_checkpoint, recall_at_k, train_loop, write_metric_log

log = logging.getLogger("bgformer")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return vals


def _writer(stream=None):
    return csv.writer(stream or sys.stdout, lineterminator="\n")


# ---------------------------------------------------------------- commands


def cmd_gen_data(args):
    ds = gen_synthetic(make_rng(args.seed), args.classes, args.per_class, args.dim, args.spread)
    save_embeddings(args.out, ds, args.format)
    log.info("wrote %d rows x %d features to %s", len(ds), ds.dim, args.out)


def _parse_set(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise BGFormerError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def cmd_train(args):
    cfg = load_config(args.config)
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    cfg = with_overrides(cfg, **overrides)
    ds = load_embeddings(args.data)
    os.makedirs(args.out, exist_ok=True)
    result = train_loop(cfg, ds)
    save_checkpoint(os.path.join(args.out, "best.bgf"), result.best)
    save_checkpoint(os.path.join(args.out, "final.bgf"), result.final)
    write_metric_log(os.path.join(args.out, "metrics.csv"), result.log)
    w = _writer()
    w.writerow(["checkpoint", "step", "k", "recall"])
    last = result.log[-1]
    best_row = next(r for r in result.log if r["step"] == result.best.step)
    for tag, row in (("best", best_row), ("final", last)):
        for k in RECALL_KS:
            w.writerow([tag, row["step"], k, repr(row[f"recall@{k}"])])


def _select_split(ds, cfg, split):
    if split == "all":
        return ds
    train, test = split_by_class(ds, cfg.train_fraction)
    return train if split == "train" else test


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    ds = _select_split(load_embeddings(args.data), ckpt.config, args.split)
    report = {}
    rec = recall_at_k(inference_embed(ds.features, model), ds.labels, args.ks, model.hem.c, report)
    if report["excluded"]:
        log.warning("%d queries without another same-class sample were skipped", report["excluded"])
    w = _writer()
    w.writerow(["k", "recall"])
    for k in args.ks:
        w.writerow([k, repr(rec[k])])


def cmd_graph(args):
    p, k_pc = args.batch
    ds = load_embeddings(args.data)
    batch = sample_batch(ds, p, k_pc, make_rng(args.seed))
    g = build_batch_graph(batch.features, batch.labels, args.k)
    write_graph_dump(args.out, g)
    w = _writer()
    w.writerow(["stat", "value"])
    for key, value in graph_stats(g).items():
        w.writerow([key, repr(value) if isinstance(value, float) else value])


def cmd_bench(args):
    rows = bench_mod.run_bench(args.batch_size, args.neighbors, args.dim, args.iters, args.seed, args.backends)
    w = _writer()
    w.writerow(bench_mod.COLUMNS)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in bench_mod.COLUMNS])
    for be, s in bench_mod.speedups(rows).items():
        log.info("%s: sparse aggregation %.1fx faster than dense", be, s)


# ---------------------------------------------------------------- parser


def _pair(text):
    vals = _int_list(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected 'p,k_pc', got {text!r}")
    return vals


def build_parser():
    ap = _Parser(prog="bgformer", description="Batch-graph metric learning on precomputed embeddings.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic Gaussian-cluster dataset")
    g.add_argument("--classes", type=int, required=True)
    g.add_argument("--per-class", type=int, required=True)
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--spread", type=float, default=0.25)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--format", choices=("csv", "binary"), default="csv")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train and write best/final checkpoints plus metrics.csv")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seed", type=int)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="Recall@K of a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--ks", type=_int_list, default=list(RECALL_KS))
    e.add_argument("--split", choices=("all", "train", "test"), default="all",
                   help="evaluate the whole file or one side of the class-disjoint split")
    e.set_defaults(func=cmd_eval)

    gr = sub.add_parser("graph", help="dump the batch graph of one sampled batch")
    gr.add_argument("--data", required=True)
    gr.add_argument("--k", type=int, required=True)
    gr.add_argument("--batch", type=_pair, required=True, metavar="P,K_PC")
    gr.add_argument("--seed", type=int, default=0)
    gr.add_argument("--out", required=True)
    gr.set_defaults(func=cmd_graph)

    b = sub.add_parser("bench", help="time sparse vs dense aggregation")
    b.add_argument("--batch-size", type=int, default=1024)
    b.add_argument("--neighbors", type=int, default=64)
    b.add_argument("--dim", type=int, default=128)
    b.add_argument("--iters", type=int, default=20)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--backends", type=lambda s: s.split(","), default=None,
                   help="comma-separated subset of numba,numpy")
    b.set_defaults(func=cmd_bench)
    return ap


def _fail(msg):
    print("error: " + " ".join(str(msg).split()), file=sys.stderr)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        _fail(exc)
        return 2
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(message)s",
    )
    try:
        args.func(args)
    except (BGFormerError, OSError, ValueError) as exc:
        _fail(exc)
        return 1
    return 0
