"""Named parameter storage and the checkpoint file format.

A checkpoint is one JSON header line followed by the raw little-endian
float32 parameters, concatenated in name order.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ShapeError


class ParamStore:
    """Parameters keyed by name plus Adam moment buffers and step count."""

    def __init__(self, params=None, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> np.ndarray:
        if name in self.params:
            raise ConfigError(f"duplicate parameter {name!r}")
        arr = np.array(value, dtype=self.dtype)
        self.params[name] = arr
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        return arr

    def names(self) -> list[str]:
        return sorted(self.params)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __setitem__(self, name: str, value) -> None:
        arr = np.asarray(value, dtype=self.dtype)
        if arr.shape != self.params[name].shape:
            raise ShapeError(f"param {name}", self.params[name].shape, arr.shape)
        self.params[name] = arr

    def __contains__(self, name) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.names())

    def __len__(self) -> int:
        return len(self.params)

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {n: np.zeros_like(p) for n, p in self.params.items()}

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> "ParamStore":
        """Copy with every parameter cast to ``dtype`` (optimizer state reset)."""
        return ParamStore({n: self.params[n] for n in self.names()}, dtype=dtype)

    def copy(self) -> "ParamStore":
        out = ParamStore(dtype=self.dtype)
        for n in self.names():
            out.add(n, self.params[n].copy())
            out.m[n] = self.m[n].copy()
            out.v[n] = self.v[n].copy()
        out.step = self.step
        return out


def save_checkpoint(path, store: ParamStore, header: dict) -> None:
    names = store.names()
    meta = dict(header)
    meta["params"] = [{"name": n, "shape": list(store[n].shape)} for n in names]
    meta["dtype"] = "<f4"
    line = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(line + b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(store[n], dtype="<f4").tobytes())


def load_checkpoint(path, dtype=np.float32) -> tuple[ParamStore, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        payload = fh.read()
    flat = np.frombuffer(payload, dtype="<f4")
    expected = sum(int(np.prod(p["shape"])) for p in header["params"])
    if flat.size != expected:
        raise ConfigError(f"{Path(path).name}: payload has {flat.size} floats, header lists {expected}")
    store = ParamStore(dtype=dtype)
    offset = 0
    for p in header["params"]:
        size = int(np.prod(p["shape"]))
        store.add(p["name"], flat[offset:offset + size].reshape(p["shape"]))
        offset += size
    return store, header
