"""Named parameter storage, Adam, and the manifest + binary-blob checkpoint format."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterator

import numpy as np

from .autograd import Tensor, l2_norm_sq

CHECKPOINT_VERSION = 1


def xavier(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Glorot-uniform init; vectors are treated as (n, 1) matrices."""
    if len(shape) == 1:
        fan_in, fan_out = shape[0], 1
    else:
        fan_in, fan_out = shape[0], shape[1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class ParamStore:
    """Ordered name -> Tensor map with per-parameter Adam state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def l2(self) -> Tensor:
        """Sum of squared entries over all parameters."""
        if not self._params:
            return Tensor(0.0)
        return l2_norm_sq(*self._params.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self._params.items()}

    def copy_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self._params.items():
            if arrays[k].shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {arrays[k].shape} vs {p.shape}")
            p.data[...] = arrays[k]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k, p in self._params.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        return h.hexdigest()


def adam_step(
    store: ParamStore,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update; gradients are zeroed afterwards.

    Parameters without a gradient in this step are treated as having zero
    gradient. At least one gradient must be present.
    """
    if all(p.grad is None for _, p in store.items()):
        raise ValueError("adam_step called without any gradients")
    b1, b2 = betas
    store.step += 1
    t = store.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in store.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = store.m.get(name)
        if m is None:
            m = store.m[name] = np.zeros_like(p.data)
            store.v[name] = np.zeros_like(p.data)
        v = store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None


# ---------------------------------------------------------------- checkpoint files


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (little-endian float64 blob)."""
    path = Path(path)
    names, shapes, offsets = [], [], []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        names.append(name)
        shapes.append(list(arr.shape))
        offsets.append(offset)
        offset += len(buf)
        blobs.append(buf)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "names": names,
        "shapes": shapes,
        "offsets": offsets,
        "total_bytes": offset,
        "meta": meta or {},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(manifest_path(path), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    with open(blob_path(path), "wb") as fh:
        for b in blobs:
            fh.write(b)


def manifest_path(path: str | Path) -> Path:
    return Path(str(path) + ".json")


def blob_path(path: str | Path) -> Path:
    return Path(str(path) + ".bin")


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(manifest_path(path), encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')}")
    blob = blob_path(path).read_bytes()
    expected = 8 * sum(int(np.prod(s)) for s in manifest["shapes"])
    if len(blob) != expected or manifest.get("total_bytes", expected) != expected:
        raise ValueError(f"checkpoint blob has {len(blob)} bytes, manifest describes {expected}")
    arrays = {}
    for name, shape, off in zip(manifest["names"], manifest["shapes"], manifest["offsets"]):
        n = int(np.prod(shape))
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
    return arrays, manifest.get("meta", {})
