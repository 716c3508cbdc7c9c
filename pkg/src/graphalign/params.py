"""Named trainable parameters and their on-disk checkpoint format.

A checkpoint is a JSON manifest line (parameter names, shapes, model config)
followed by the raw little-endian float64 payloads in manifest order, so
identical parameter values always produce identical bytes.
"""
from __future__ import annotations

import json

import numpy as np

from .autodiff import Value


class CheckpointError(ValueError):
    pass


class ParamStore:
    """Ordered map of unique parameter names to trainable Values."""

    def __init__(self):
        self._params: dict[str, Value] = {}

    def create(self, name: str, shape: tuple[int, int], rng: np.random.Generator,
               fan_in: int | None = None) -> Value:
        """Allocate a parameter initialized uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
        if name in self._params:
            raise CheckpointError(f"duplicate parameter name {name!r}")
        if fan_in is None:
            fan_in = shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        value = Value(rng.uniform(-bound, bound, size=shape), kind="param")
        self._params[name] = value
        return value

    def __getitem__(self, name: str) -> Value:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for v in self._params.values():
            v.grad = np.zeros_like(v.data)

    def grads(self) -> dict[str, np.ndarray]:
        return {name: v.grad.copy() for name, v in self._params.items()}

    def n_scalars(self) -> int:
        return sum(v.data.size for v in self._params.values())

    def set_data(self, name: str, data: np.ndarray) -> None:
        param = self._params[name]
        if param.data.shape != data.shape:
            raise CheckpointError(
                f"parameter {name!r}: shape {data.shape} does not match {param.data.shape}"
            )
        param.data = np.asarray(data, dtype=np.float64)


def save_checkpoint(store: ParamStore, path: str, config: dict | None = None) -> None:
    manifest = {
        "format": "graphalign-params-v1",
        "config": config or {},
        "tensors": [{"name": n, "shape": list(v.shape)} for n, v in store.items()],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        for _, v in store.items():
            fh.write(np.ascontiguousarray(v.data, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    """Read tensors and the stored model config; validates sizes against the manifest."""
    with open(path, "rb") as fh:
        header = fh.readline()
        try:
            manifest = json.loads(header)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"bad checkpoint manifest: {exc.msg}") from exc
        if manifest.get("format") != "graphalign-params-v1":
            raise CheckpointError(f"unknown checkpoint format {manifest.get('format')!r}")
        tensors = {}
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            n_bytes = int(np.prod(shape)) * 8
            raw = fh.read(n_bytes)
            if len(raw) != n_bytes:
                raise CheckpointError(f"truncated payload for tensor {entry['name']!r}")
            tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError("trailing bytes after final tensor")
    return tensors, manifest.get("config", {})


def restore_into(store: ParamStore, tensors: dict[str, np.ndarray]) -> None:
    """Load tensors into an existing store; names and shapes must match exactly."""
    if set(tensors) != set(store.names()):
        missing = set(store.names()) - set(tensors)
        extra = set(tensors) - set(store.names())
        raise CheckpointError(f"parameter names differ (missing={missing}, extra={extra})")
    for name, data in tensors.items():
        store.set_data(name, data)
