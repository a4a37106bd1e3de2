"""``BGF1`` checkpoint files.

Layout (little-endian): magic ``BGF1``; u32 tensor count; per tensor a u16
name length, the UTF-8 name, u32 rows, u32 cols and the row-major f64
payload; a u32-length-prefixed UTF-8 block of ``key=value`` config lines;
finally the u64 step count.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig, config_from_mapping, parse_kv_lines
from .errors import BGFormerError, ParseError

MAGIC = b"BGF1"


@dataclass
class Checkpoint:
    tensors: dict
    config: TrainConfig
    step: int = 0
    history: list = field(default_factory=list)

    def without_encoder(self):
        kept = {k: v for k, v in self.tensors.items() if not k.startswith("encoder.")}
        return Checkpoint(kept, self.config, self.step, list(self.history))


def encode_checkpoint(ckpt):
    out = [MAGIC, struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<II", *arr.shape))
        out.append(np.ascontiguousarray(arr).astype("<f8").tobytes())
    cfg = ckpt.config.to_text(sep="=").encode("utf-8")
    out.append(struct.pack("<I", len(cfg)) + cfg)
    out.append(struct.pack("<Q", ckpt.step))
    return b"".join(out)


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise ParseError(
                f"{self.path}: offset {self.pos}: truncated while reading {what} "
                f"({n} bytes needed, {len(self.blob) - self.pos} left)"
            )
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(blob, path="<bytes>"):
    r = _Reader(blob, path)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise ParseError(f"{path}: offset 0: bad magic {magic!r}, expected {MAGIC!r}")
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for i in range(count):
        (n,) = r.unpack("<H", f"name length of tensor {i}")
        start = r.pos
        try:
            name = r.take(n, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError(f"{path}: offset {start}: tensor {i} name is not UTF-8") from None
        if name in tensors:
            raise ParseError(f"{path}: offset {start}: duplicate tensor {name!r}")
        rows, cols = r.unpack("<II", f"shape of {name}")
        payload = r.take(8 * rows * cols, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)
    (n_cfg,) = r.unpack("<I", "config length")
    start = r.pos
    text = r.take(n_cfg, "config block").decode("utf-8")
    try:
        cfg = config_from_mapping(parse_kv_lines(text), require_all=False)
    except BGFormerError as exc:
        raise ParseError(f"{path}: offset {start}: bad config block: {exc}") from None
    (step,) = r.unpack("<Q", "step count")
    if r.pos != len(blob):
        raise ParseError(f"{path}: offset {r.pos}: {len(blob) - r.pos} trailing bytes")
    ckpt = Checkpoint(tensors, cfg, step)
    check_shapes(ckpt, path)
    return ckpt


def check_shapes(ckpt, path="<checkpoint>"):
    """Tensor shapes must agree with each other and with the stored config."""
    t = ckpt.tensors
    cfg = ckpt.config

    def fail(msg):
        raise ParseError(f"{path}: {msg}")

    for name in ("hem.fc_w", "hem.fc_b"):
        if name not in t:
            fail(f"missing tensor {name}")
    c, d = t["hem.fc_w"].shape
    if d != cfg.embed_dim:
        fail(f"hem.fc_w has {d} output columns but embed_dim={cfg.embed_dim}")
    expected = {"hem.fc_b": (1, d)}
    if "adapter.w" in t:
        expected["adapter.w"] = (t["adapter.w"].shape[0], c)
        expected["adapter.b"] = (1, c)
    hidden = int(round(cfg.ffn_ratio * c))
    for i in range(cfg.n_blocks):
        pre = f"encoder.block{i}"
        expected.update({
            f"{pre}.w_ssa": (c, c),
            f"{pre}.ffn_w1": (c, hidden),
            f"{pre}.ffn_b1": (1, hidden),
            f"{pre}.ffn_w2": (hidden, c),
            f"{pre}.ffn_b2": (1, c),
            f"{pre}.ln_gamma": (1, c),
            f"{pre}.ln_beta": (1, c),
        })
    for i in range(cfg.n_blocks - 1):
        expected[f"encoder.inter_ln{i}.gamma"] = (1, c)
        expected[f"encoder.inter_ln{i}.beta"] = (1, c)
    for name, arr in t.items():
        if name not in expected and name != "hem.fc_w":
            fail(f"unexpected tensor {name!r}")
        if name in expected and arr.shape != expected[name]:
            fail(f"tensor {name!r} has shape {arr.shape}, expected {expected[name]}")
    if "adapter.w" in t and "adapter.b" not in t:
        fail("adapter.w present without adapter.b")
    enc = [k for k in expected if k.startswith("encoder.")]
    present = [k for k in enc if k in t]
    if present and len(present) != len(enc):
        fail(f"partial encoder: {len(present)} of {len(enc)} tensors")


def save_checkpoint(path, ckpt):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(ckpt))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read(), str(path))
