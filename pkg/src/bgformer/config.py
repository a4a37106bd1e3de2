"""Training configuration and its flat ``key = value`` file format."""

import dataclasses
from dataclasses import dataclass
from importlib import resources

from .errors import ContractError, ParseError


@dataclass
class TrainConfig:
    p: int = 100
    k_pc: int = 9
    k_neighbors: int = 100
    n_blocks: int = 2
    lambda_: float = 0.4
    alpha: float = 0.6
    lr_backbone: float = 3e-5
    lr_head: float = 7.5e-4
    weight_decay: float = 5e-5
    epochs: int = 400
    eval_every: int = 5
    embed_dim: int = 128
    ffn_ratio: float = 4.0
    curvature: float = 1.0
    tau: float = 0.2
    seed: int = 0
    # optional keys below; a config file may omit them
    adapter: bool = True
    norm_clip: float = 0.999
    train_fraction: float = 0.5

    @property
    def batch_size(self):
        return self.p * self.k_pc

    def validate(self):
        """Raise one :class:`ContractError` listing every violated invariant."""
        problems = []

        def need(ok, msg):
            if not ok:
                problems.append(msg)

        need(self.p >= 1, f"p must be >= 1 (got {self.p})")
        need(self.k_pc >= 2, f"k_pc must be >= 2 so every class has a positive pair (got {self.k_pc})")
        need(self.k_neighbors >= 1, f"k_neighbors must be >= 1 (got {self.k_neighbors})")
        need(self.n_blocks >= 1, f"n_blocks must be >= 1 (got {self.n_blocks})")
        need(0.0 <= self.lambda_ <= 1.0, f"lambda must lie in [0, 1] (got {self.lambda_})")
        need(0.0 <= self.alpha <= 1.0, f"alpha must lie in [0, 1] (got {self.alpha})")
        need(self.lr_backbone >= 0, f"lr_backbone must be >= 0 (got {self.lr_backbone})")
        need(self.lr_head >= 0, f"lr_head must be >= 0 (got {self.lr_head})")
        need(self.weight_decay >= 0, f"weight_decay must be >= 0 (got {self.weight_decay})")
        need(self.epochs >= 0, f"epochs must be >= 0 (got {self.epochs})")
        need(self.eval_every >= 1, f"eval_every must be >= 1 (got {self.eval_every})")
        need(self.embed_dim >= 1, f"embed_dim must be >= 1 (got {self.embed_dim})")
        need(self.ffn_ratio > 0, f"ffn_ratio must be > 0 (got {self.ffn_ratio})")
        need(self.curvature > 0, f"curvature must be > 0 (got {self.curvature})")
        need(self.tau > 0, f"tau must be > 0 (got {self.tau})")
        need(0.0 < self.norm_clip < 1.0, f"norm_clip must lie in (0, 1) (got {self.norm_clip})")
        need(
            0.0 < self.train_fraction < 1.0,
            f"train_fraction must lie in (0, 1) (got {self.train_fraction})",
        )
        if problems:
            raise ContractError("invalid config: " + "; ".join(problems))
        return self

    def to_dict(self):
        return {_key(f.name): getattr(self, f.name) for f in dataclasses.fields(self)}

    def to_text(self, sep=" = "):
        return "".join(f"{k}{sep}{_format(v)}\n" for k, v in self.to_dict().items())


def _key(field_name):
    return field_name.rstrip("_")


_FIELDS = {_key(f.name): f for f in dataclasses.fields(TrainConfig)}
OPTIONAL_KEYS = ("adapter", "norm_clip", "train_fraction")
REQUIRED_KEYS = tuple(k for k in _FIELDS if k not in OPTIONAL_KEYS)


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(key, raw):
    kind = _FIELDS[key].type
    if kind in (bool, "bool"):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"expected true/false, got {raw!r}")
    if kind in (int, "int"):
        return int(raw)
    return float(raw)


def parse_kv_lines(text):
    """``key = value`` pairs with ``#`` comments; returns an ordered dict."""
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"line {n}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in out:
            raise ParseError(f"line {n}: duplicate key {key!r}")
        out[key] = value
    return out


def config_from_mapping(values, require_all=True, base=None):
    """Build a validated config, reporting every problem in one error."""
    problems = []
    unknown = [k for k in values if k not in _FIELDS]
    if unknown:
        problems.append("unknown keys: " + ", ".join(unknown))
    if require_all:
        missing = [k for k in REQUIRED_KEYS if k not in values]
        if missing:
            problems.append("missing required keys: " + ", ".join(missing))
    kwargs = {}
    for key, raw in values.items():
        if key not in _FIELDS:
            continue
        try:
            kwargs[_FIELDS[key].name] = _convert(key, raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            problems.append(f"{key}: {exc}")
    if problems:
        raise ContractError("invalid config: " + "; ".join(problems))
    cfg = dataclasses.replace(base or TrainConfig(), **kwargs)
    return cfg.validate()


def parse_config(text):
    return config_from_mapping(parse_kv_lines(text))


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def with_overrides(cfg, **overrides):
    """Apply CLI flag overrides (flags beat config values)."""
    values = {k: v for k, v in overrides.items() if v is not None}
    return config_from_mapping(values, require_all=False, base=cfg)


def shipped_config_path(name="full_scale.cfg"):
    return resources.files("bgformer") / "configs" / name
