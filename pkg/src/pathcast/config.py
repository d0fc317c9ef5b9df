"""Run configuration: defaults, key=value config files, and overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .cig import MODES
from .static import SCHEMES

LR_GRID = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    alpha: float = 0.1
    c: float = 3.0
    lambda1: float = 1.0
    lambda2: float = 1e-3
    n_layers: int = 4
    dim: int = 64
    epochs: int = 10
    seed: int = 0
    aggregation: str = "mul"
    cig_mode: str = "influence"
    n_neighbors: int = 10
    max_seq_len: int = 50
    n_negatives: int = 100
    use_content: bool = True
    feature_file: str | None = None
    threshold_seconds: float | None = None
    lr_grid: tuple[float, ...] = field(default=LR_GRID)

    def validate(self) -> "TrainConfig":
        positive = ("lr", "batch_size", "n_layers", "dim", "n_neighbors", "max_seq_len", "n_negatives")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("c", "lambda1", "lambda2", "epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if self.aggregation not in SCHEMES:
            raise ValueError(f"aggregation must be one of {SCHEMES}")
        if self.cig_mode not in MODES:
            raise ValueError(f"cig_mode must be one of {MODES}")
        if self.threshold_seconds is not None and self.threshold_seconds <= 0:
            raise ValueError("threshold_seconds must be positive")
        return self

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["lr_grid"] = list(self.lr_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        d = dict(d)
        if "lr_grid" in d:
            d["lr_grid"] = tuple(d["lr_grid"])
        return cls(**d).validate()

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes).validate()


def _coerce(name: str, raw: str, kind) -> Any:
    raw = raw.strip()
    if raw.lower() in ("none", "null", ""):
        return None
    if name == "lr_grid":
        return tuple(float(x) for x in raw.replace(",", " ").split())
    if kind is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: not a boolean: {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


_KINDS = {
    f.name: (bool if f.type in ("bool",) else int if f.type in ("int",) else float if "float" in str(f.type) else str)
    for f in dataclasses.fields(TrainConfig)
}


def parse_overrides(pairs: dict[str, str]) -> dict[str, Any]:
    out = {}
    for k, v in pairs.items():
        key = k.strip().replace("-", "_")
        if key not in _KINDS:
            raise ValueError(f"unknown config key {k!r}")
        out[key] = _coerce(key, v, _KINDS[key])
    return out


def read_kv_file(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def load_config(path: str | Path | None = None, **overrides) -> TrainConfig:
    """Defaults, then the config file, then explicit overrides (non-None only)."""
    values: dict[str, Any] = {}
    if path is not None:
        values.update(parse_overrides(read_kv_file(path)))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values).validate()
