"""Feature sources standing in for an image backbone, plus the PK sampler."""

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractError, ParseError, ShapeError
from .numerics import BACKBONE, ParamTensor, as_matrix

BINARY_MAGIC = b"BGE1"


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_index: dict = field(default=None)

    def __post_init__(self):
        self.features = as_matrix(self.features)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError(
                f"{self.labels.shape[0]} labels for {self.features.shape[0]} feature rows"
            )
        if self.class_index is None:
            self.class_index = {
                int(k): np.flatnonzero(self.labels == k) for k in np.unique(self.labels)
            }

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def classes(self):
        return sorted(self.class_index)

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.labels[rows])


@dataclass
class LabeledBatch:
    features: np.ndarray
    labels: np.ndarray
    p: int
    k_pc: int

    def __len__(self):
        return self.features.shape[0]


@dataclass
class AdapterParams:
    w: ParamTensor
    b: ParamTensor
    enabled: bool = True

    def tensors(self):
        return [self.w, self.b] if self.enabled else []


def gen_synthetic(rng, num_classes, per_class, c_in, spread):
    """Gaussian clusters around unit-norm random centres, rows grouped by class."""
    if spread <= 0:
        raise ContractError(f"spread must be positive, got {spread}")
    centers = rng.standard_normal((num_classes, c_in))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    noise = rng.standard_normal((num_classes * per_class, c_in))
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    return Dataset(centers[labels] + spread * noise, labels)


def split_by_class(ds, train_fraction=0.5):
    """Class-disjoint split: the first fraction of sorted class ids trains."""
    classes = ds.classes
    n_train = int(round(train_fraction * len(classes)))
    train_cls = set(classes[:n_train])
    mask = np.isin(ds.labels, list(train_cls))
    return ds.subset(np.flatnonzero(mask)), ds.subset(np.flatnonzero(~mask))


def sample_batch(ds, p, k_pc, rng):
    """P classes x K_pc members each, both drawn without replacement, rows shuffled."""
    classes = ds.classes
    if len(classes) < p:
        raise ContractError(f"batch needs {p} classes, dataset has {len(classes)}")
    eligible = [k for k in classes if ds.class_index[k].size >= k_pc]
    if len(eligible) < p:
        raise ContractError(
            f"batch needs {p} classes with >= {k_pc} members, only {len(eligible)} qualify"
        )
    chosen = rng.choice(np.asarray(eligible), size=p, replace=False)
    rows = np.concatenate(
        [rng.choice(ds.class_index[int(k)], size=k_pc, replace=False) for k in chosen]
    )
    rows = rows[rng.permutation(rows.size)]
    return LabeledBatch(ds.features[rows], ds.labels[rows], p, k_pc)


def init_adapter(c_in, c=None, enabled=True):
    """Identity-initialised linear map; ``enabled=False`` keeps it an exact identity."""
    c = c_in if c is None else c
    if not enabled and c != c_in:
        raise ContractError("a disabled adapter cannot change the feature width")
    w = np.eye(c_in, c)
    return AdapterParams(
        ParamTensor("adapter.w", w, BACKBONE),
        ParamTensor("adapter.b", np.zeros((1, c)), BACKBONE),
        enabled,
    )


def adapter_forward(x, a, tape=None):
    x = x if isinstance(x, ad.Node) else ad.const(x)
    if not a.enabled:
        return x
    tape = ad.Tape(record=False) if tape is None else tape
    if x.value.shape[1] != a.w.value.shape[0]:
        raise ShapeError(f"features have {x.value.shape[1]} columns, adapter expects {a.w.value.shape[0]}")
    return ad.add_bias(ad.matmul(x, tape.param(a.w)), tape.param(a.b))


# ---------------------------------------------------------------- files


def save_embeddings(path, ds, fmt="csv"):
    if fmt == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(["label"] + [f"f{i}" for i in range(ds.dim)]) + "\n")
            for lab, row in zip(ds.labels, ds.features):
                fh.write(",".join([str(int(lab))] + [repr(float(v)) for v in row]) + "\n")
    elif fmt == "binary":
        m, c = ds.features.shape
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC + struct.pack("<II", m, c))
            fh.write(ds.labels.astype("<i8").tobytes())
            fh.write(ds.features.astype("<f8").tobytes())
    else:
        raise ValueError(f"unknown format {fmt!r}")


def _load_csv(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    header = lines[0].split(",")
    c = len(header) - 1
    if header[0] != "label" or c < 1 or header[1:] != [f"f{i}" for i in range(c)]:
        raise ParseError(f"{path}: line 1: header must be label,f0,...,f{{C-1}}")
    labels, rows = [], []
    for n, line in enumerate(lines[1:], start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != c + 1:
            raise ParseError(
                f"{path}: row {n} (line {n + 1}): expected {c + 1} columns, got {len(parts)}"
            )
        try:
            labels.append(int(parts[0]))
            rows.append([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise ParseError(f"{path}: row {n} (line {n + 1}): {exc}") from None
    feats = np.array(rows, dtype=np.float64).reshape(len(rows), c)
    return Dataset(feats, np.array(labels, dtype=np.int64))


def _load_binary(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != BINARY_MAGIC:
        raise ParseError(f"{path}: offset 0: bad magic {blob[:4]!r}, expected {BINARY_MAGIC!r}")
    if len(blob) < 12:
        raise ParseError(f"{path}: offset 4: truncated header")
    m, c = struct.unpack_from("<II", blob, 4)
    need = 12 + 8 * m + 8 * m * c
    if len(blob) != need:
        raise ParseError(f"{path}: offset {len(blob)}: expected {need} bytes for M={m}, C={c}")
    labels = np.frombuffer(blob, dtype="<i8", count=m, offset=12).astype(np.int64)
    feats = np.frombuffer(blob, dtype="<f8", count=m * c, offset=12 + 8 * m)
    return Dataset(feats.reshape(m, c).astype(np.float64), labels)


def load_embeddings(path, fmt=None):
    """Read a CSV or ``BGE1`` binary embedding file; format sniffed when omitted."""
    if fmt is None:
        with open(path, "rb") as fh:
            fmt = "binary" if fh.read(4) == BINARY_MAGIC else "csv"
    if fmt == "csv":
        return _load_csv(path)
    if fmt == "binary":
        return _load_binary(path)
    raise ValueError(f"unknown format {fmt!r}")
