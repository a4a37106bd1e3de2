import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from bgformer.cli import main
from bgformer.config import TrainConfig
from bgformer.data import load_embeddings


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _rows(text):
    return list(csv.reader(io.StringIO(text)))


def _tiny_cfg(path, **kw):
    cfg = TrainConfig(p=4, k_pc=3, k_neighbors=4, embed_dim=4, epochs=2, eval_every=1,
                      lr_head=5e-3, lr_backbone=1e-3)
    for k, v in kw.items():
        setattr(cfg, k, v)
    path.write_text(cfg.to_text())
    return path


@pytest.fixture
def data_file(tmp_path, capsys):
    path = tmp_path / "d.csv"
    assert _run(capsys, "gen-data", "--classes", 10, "--per-class", 5, "--dim", 6,
                "--seed", 1, "--out", path)[0] == 0
    return path


@pytest.mark.parametrize("fmt", ["csv", "binary"])
def test_gen_data_deterministic_and_sized(tmp_path, capsys, fmt):
    a, b = tmp_path / "a", tmp_path / "b"
    for p in (a, b):
        code, out, _ = _run(capsys, "gen-data", "--classes", 20, "--per-class", 30, "--dim", 4,
                            "--seed", 3, "--format", fmt, "--out", p)
        assert code == 0 and out == ""
    assert a.read_bytes() == b.read_bytes()
    assert len(load_embeddings(a)) == 600


def test_train_then_eval_reproduces_best(tmp_path, capsys, data_file):
    cfg = _tiny_cfg(tmp_path / "c.cfg")
    out_dir = tmp_path / "run"
    code, out, _ = _run(capsys, "train", "--config", cfg, "--data", data_file, "--out", out_dir)
    assert code == 0
    rows = _rows(out)
    assert rows[0] == ["checkpoint", "step", "k", "recall"]
    best_r1 = next(r for r in rows if r[0] == "best" and r[2] == "1")[3]
    assert {p.name for p in out_dir.iterdir()} == {"best.bgf", "final.bgf", "metrics.csv"}
    assert _rows((out_dir / "metrics.csv").read_text())[0][-1] == "loss"

    code, out, _ = _run(capsys, "eval", "--checkpoint", out_dir / "best.bgf", "--data", data_file,
                        "--split", "test", "--ks", "1")
    assert code == 0
    assert _rows(out) == [["k", "recall"], ["1", best_r1]]


def test_train_seed_flag_overrides_config(tmp_path, capsys, data_file):
    cfg = _tiny_cfg(tmp_path / "c.cfg", epochs=1)
    outs = []
    for seed in (0, 0, 4):
        d = tmp_path / f"r{len(outs)}"
        _run(capsys, "train", "--config", cfg, "--data", data_file, "--out", d, "--seed", seed)
        outs.append((d / "final.bgf").read_bytes())
    assert outs[0] == outs[1] and outs[0] != outs[2]


def test_train_lists_all_config_problems(tmp_path, capsys, data_file):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("p = 0\nlambda = 2\n")
    code, out, err = _run(capsys, "train", "--config", cfg, "--data", data_file, "--out", tmp_path / "x")
    assert code != 0 and out == ""
    line = err.strip()
    assert line.startswith("error: ") and "\n" not in line
    assert "missing required keys" in line


def test_eval_dimension_mismatch(tmp_path, capsys, data_file):
    cfg = _tiny_cfg(tmp_path / "c.cfg", epochs=0)
    _run(capsys, "train", "--config", cfg, "--data", data_file, "--out", tmp_path / "r")
    other = tmp_path / "o.csv"
    _run(capsys, "gen-data", "--classes", 3, "--per-class", 3, "--dim", 5, "--out", other)
    code, _, err = _run(capsys, "eval", "--checkpoint", tmp_path / "r" / "best.bgf", "--data", other)
    assert code == 1 and err.startswith("error: ")


def test_eval_perfect_clusters(tmp_path, capsys):
    cfg = _tiny_cfg(tmp_path / "c.cfg", epochs=0)
    data = tmp_path / "d.csv"
    _run(capsys, "gen-data", "--classes", 10, "--per-class", 4, "--dim", 6, "--spread", 1e-9,
         "--seed", 2, "--out", data)
    _run(capsys, "train", "--config", cfg, "--data", data, "--out", tmp_path / "r")
    code, out, _ = _run(capsys, "eval", "--checkpoint", tmp_path / "r" / "best.bgf", "--data", data)
    assert code == 0
    assert [r[1] for r in _rows(out)[1:]] == ["1.0"] * 4


def test_graph_dump_and_stats(tmp_path, capsys, data_file):
    dump = tmp_path / "g.tsv"
    code, out, _ = _run(capsys, "graph", "--data", data_file, "--k", 5, "--batch", "3,4",
                        "--seed", 2, "--out", dump)
    assert code == 0
    lines = dump.read_text().splitlines()
    assert lines[0] == "# B=12 k=5"
    edges = [ln.split("\t") for ln in lines[1:]]
    assert len(edges) == 12 * 5
    assert all(0.0 <= float(e[3]) <= 1.0 for e in edges)
    stats = dict(_rows(out)[1:])
    assert stats["edges"] == "60"
    _run(capsys, "graph", "--data", data_file, "--k", 5, "--batch", "3,4", "--seed", 2, "--out", dump)
    code, again, _ = _run(capsys, "graph", "--data", data_file, "--k", 5, "--batch", "3,4",
                          "--seed", 2, "--out", dump)
    assert again == out


def test_graph_k_is_capped(tmp_path, capsys, data_file):
    dump = tmp_path / "g.tsv"
    _run(capsys, "graph", "--data", data_file, "--k", 50, "--batch", "2,3", "--out", dump)
    assert len(dump.read_text().splitlines()) - 1 == 6 * 5


def test_bench_output(capsys):
    code, out, _ = _run(capsys, "bench", "--batch-size", 64, "--neighbors", 8, "--dim", 16,
                        "--iters", 2, "--backends", "numpy")
    assert code == 0
    rows = _rows(out)
    head = rows[0]
    recs = [dict(zip(head, r)) for r in rows[1:]]
    assert [r["mode"] for r in recs] == ["dense", "sparse"]
    assert int(recs[1]["agg_madds"]) * 64 == int(recs[0]["agg_madds"]) * 8
    assert float(recs[0]["max_dev"]) < 1e-12


def test_bench_rejects_k_at_least_b(capsys):
    code, out, err = _run(capsys, "bench", "--batch-size", 8, "--neighbors", 8, "--iters", 1)
    assert code == 1 and out == "" and err.startswith("error: ")


def test_usage_errors_are_single_line(capsys):
    code, out, err = _run(capsys, "gen-data", "--classes", "x")
    assert code == 2 and out == ""
    assert err.startswith("error: ") and err.count("\n") == 1
    code, _, err = _run(capsys, "eval", "--checkpoint", "/nonexistent.bgf", "--data", "/nope.csv")
    assert code == 1 and err.startswith("error: ")


def test_module_entry_point(tmp_path):
    path = tmp_path / "d.bin"
    proc = subprocess.run(
        [sys.executable, "-m", "bgformer", "gen-data", "--classes", "2", "--per-class", "2",
         "--dim", "2", "--format", "binary", "--out", str(path)],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    np.testing.assert_array_equal(load_embeddings(path).labels, [0, 0, 1, 1])
