"""Checkpoint container.

Byte layout (all integers little-endian)::

    0   8 bytes   magic b"ACRCKPT\\0"
    8   uint32    format version (1)
    12  uint64    header length N
    20  N bytes   UTF-8 JSON header
    20+N          payload: float64 LE arrays, back to back

The JSON header has keys ``model`` (encoder config, vocabulary, labels,
bottleneck), ``tensors`` (list of ``{"name", "kind", "shape", "offset"}`` where
``kind`` is ``param``, ``adam_m`` or ``adam_v`` and ``offset`` is a byte
offset into the payload), ``optimizer`` (``null`` or ``{"step", "beta1",
"beta2", "eps"}``) and ``metadata``. Keys are sorted so identical
checkpoints serialize to identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff.params import ParameterStore
from .errors import CheckpointError
from .model import ModelConfig, param_shapes

MAGIC = b"ACRCKPT\0"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def copy(self) -> AdamState:
        return AdamState({k: a.copy() for k, a in self.m.items()}, {k: a.copy() for k, a in self.v.items()},
                         self.step, self.beta1, self.beta2, self.eps)


@dataclass
class Checkpoint:
    model: ModelConfig
    params: ParameterStore
    optimizer: AdamState | None = None
    metadata: dict = field(default_factory=dict)
    version: int = VERSION


def _tensor_list(ckpt: Checkpoint):
    items = [("param", name, ckpt.params[name]) for name in ckpt.params.names()]
    if ckpt.optimizer is not None:
        items += [("adam_m", n, ckpt.optimizer.m[n]) for n in sorted(ckpt.optimizer.m)]
        items += [("adam_v", n, ckpt.optimizer.v[n]) for n in sorted(ckpt.optimizer.v)]
    return items


def to_bytes(ckpt: Checkpoint) -> bytes:
    entries, chunks, offset = [], [], 0
    for kind, name, arr in _tensor_list(ckpt):
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "kind": kind, "shape": list(np.shape(arr)), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    opt = None
    if ckpt.optimizer is not None:
        o = ckpt.optimizer
        opt = {"step": o.step, "beta1": o.beta1, "beta2": o.beta2, "eps": o.eps}
    header = {"model": ckpt.model.to_dict(), "tensors": entries, "optimizer": opt, "metadata": ckpt.metadata}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + b"".join(chunks)


def from_bytes(raw: bytes) -> Checkpoint:
    if len(raw) < _PREFIX.size:
        raise CheckpointError("checkpoint truncated before header")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
        model = ModelConfig.from_dict(header["model"])
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"malformed checkpoint header: {e}") from e
    base = _PREFIX.size + hlen
    params = ParameterStore()
    m, v = {}, {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        start = base + e["offset"]
        if start + 8 * n > len(raw):
            raise CheckpointError(f"tensor {e['name']!r} runs past end of file")
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=start).reshape(e["shape"]).astype(np.float64)
        if e["kind"] not in ("param", "adam_m", "adam_v"):
            raise CheckpointError(f"tensor {e['name']!r} has unknown kind {e['kind']!r}")
        if e["kind"] == "param":
            params.add(e["name"], arr)
        elif e["kind"] == "adam_m":
            m[e["name"]] = arr
        else:
            v[e["name"]] = arr
    expected = param_shapes(model)
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise CheckpointError(f"checkpoint parameters do not match model (missing {missing}, unexpected {extra})")
    for name, shape in expected.items():
        if params[name].shape != tuple(shape):
            raise CheckpointError(f"parameter {name!r} has shape {params[name].shape}, expected {tuple(shape)}")
    opt = None
    if header.get("optimizer") is not None:
        o = header["optimizer"]
        opt = AdamState(m, v, int(o["step"]), o["beta1"], o["beta2"], o["eps"])
    return Checkpoint(model, params, opt, header.get("metadata", {}), version)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ckpt))
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes())
