"""Subsampling encoder and many-to-one recurrent integration.

The front end is ``k`` pool-and-mix stages (2x2 ceil max-pool over time x
frequency, then a pointwise channel mix with relu), a flatten of the pooled
grid into ``T'*D'`` descriptors, a linear projection to ``H`` and a
bidirectional GRU. Integration runs a second bidirectional GRU over the
descriptors and keeps the final state of each direction.

GRU cell, per direction with hidden size ``h = H/2``::

    z  = sigmoid(x Wz + h Uz + bz)
    r  = sigmoid(x Wr + h Ur + br)
    n  = tanh(x Wn + (r * h) Un + bn)
    h' = (1 - z) * h + z * n
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.params import ParameterStore
from .autodiff.tensor import Tensor
from .errors import ConfigurationError, InputError


def pooled_extent(x: int, k: int) -> int:
    for _ in range(k):
        x = (x + 1) // 2
    return x


def descriptor_count(T: int, D: int, k: int = 5) -> int:
    """Number of descriptors left after ``k`` ceil-halvings of both axes."""
    if min(T, D, k) < 1:
        raise InputError(f"descriptor_count needs T, D, k >= 1, got ({T}, {D}, {k})")
    return pooled_extent(T, k) * pooled_extent(D, k)


@dataclass(frozen=True)
class EncoderConfig:
    stages: int = 5
    channels: tuple[int, ...] = (16, 32, 64, 128, 256)
    hidden: int = 256
    gru_layers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.stages < 1:
            raise ConfigurationError(f"stages must be >= 1, got {self.stages}")
        if len(self.channels) != self.stages:
            raise ConfigurationError(
                f"channels has {len(self.channels)} entries but stages={self.stages}"
            )
        if any(c < 1 for c in self.channels):
            raise ConfigurationError(f"channels must be positive, got {self.channels}")
        if self.hidden < 2 or self.hidden % 2:
            raise ConfigurationError(f"hidden must be a positive even integer, got {self.hidden}")
        if self.gru_layers < 1:
            raise ConfigurationError(f"gru_layers must be >= 1, got {self.gru_layers}")

    @property
    def half(self) -> int:
        return self.hidden // 2

    def to_dict(self) -> dict:
        return {"stages": self.stages, "channels": list(self.channels), "hidden": self.hidden,
                "gru_layers": self.gru_layers}

    @classmethod
    def from_dict(cls, d: dict) -> EncoderConfig:
        return cls(stages=d["stages"], channels=tuple(d["channels"]), hidden=d["hidden"],
                   gru_layers=d.get("gru_layers", 1))


@dataclass
class FeatureSequence:
    frames: np.ndarray
    utt_id: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or min(self.frames.shape) < 1:
            raise InputError(f"utterance {self.utt_id!r}: frames must be T x D with T, D >= 1, "
                             f"got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise InputError(f"utterance {self.utt_id!r}: non-finite feature values")


@dataclass
class DescriptorSequence:
    descriptors: Tensor

    @property
    def count(self) -> int:
        return self.descriptors.shape[0]


@dataclass
class EmbeddingVector:
    values: Tensor
    label: int | None = None


# ------------------------------------------------------------------ parameters


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


def init_linear(store: ParameterStore, prefix: str, n_in: int, n_out: int, rng, bias: bool = True):
    store.add(f"{prefix}.weight", _uniform(rng, (n_in, n_out), math.sqrt(6.0 / (n_in + n_out))))
    if bias:
        store.add(f"{prefix}.bias", np.zeros(n_out))


def init_gru(store: ParameterStore, prefix: str, n_in: int, h: int, rng):
    bound = 1.0 / math.sqrt(h)
    store.add(f"{prefix}.Wx", _uniform(rng, (n_in, 3 * h), bound))
    store.add(f"{prefix}.Uzr", _uniform(rng, (h, 2 * h), bound))
    store.add(f"{prefix}.Un", _uniform(rng, (h, h), bound))
    store.add(f"{prefix}.b", np.zeros(3 * h))


def init_bigru(store: ParameterStore, prefix: str, n_in: int, h: int, rng):
    init_gru(store, f"{prefix}.fwd", n_in, h, rng)
    init_gru(store, f"{prefix}.bwd", n_in, h, rng)


def gru_shapes(prefix: str, n_in: int, h: int) -> dict[str, tuple]:
    return {f"{prefix}.Wx": (n_in, 3 * h), f"{prefix}.Uzr": (h, 2 * h), f"{prefix}.Un": (h, h),
            f"{prefix}.b": (3 * h,)}


def encoder_shapes(cfg: EncoderConfig, prefix: str = "encoder") -> dict[str, tuple]:
    shapes = {}
    c_in = 1
    for i, c in enumerate(cfg.channels):
        shapes[f"{prefix}.stage{i}.weight"] = (c_in, c)
        shapes[f"{prefix}.stage{i}.bias"] = (c,)
        c_in = c
    shapes[f"{prefix}.proj.weight"] = (c_in, cfg.hidden)
    shapes[f"{prefix}.proj.bias"] = (cfg.hidden,)
    for layer in range(cfg.gru_layers):
        for d in ("fwd", "bwd"):
            shapes.update(gru_shapes(f"{prefix}.gru{layer}.{d}", cfg.hidden, cfg.half))
    return shapes


def integrate_shapes(cfg: EncoderConfig, prefix: str = "integrate") -> dict[str, tuple]:
    shapes = {}
    for d in ("fwd", "bwd"):
        shapes.update(gru_shapes(f"{prefix}.gru.{d}", cfg.hidden, cfg.half))
    return shapes


def init_encoder(store: ParameterStore, cfg: EncoderConfig, rng, prefix: str = "encoder"):
    c_in = 1
    for i, c in enumerate(cfg.channels):
        init_linear(store, f"{prefix}.stage{i}", c_in, c, rng)
        c_in = c
    init_linear(store, f"{prefix}.proj", c_in, cfg.hidden, rng)
    for layer in range(cfg.gru_layers):
        init_bigru(store, f"{prefix}.gru{layer}", cfg.hidden, cfg.half, rng)


def init_integrate(store: ParameterStore, cfg: EncoderConfig, rng, prefix: str = "integrate"):
    init_bigru(store, f"{prefix}.gru", cfg.hidden, cfg.half, rng)


def check_shapes(params, expected: dict[str, tuple]) -> None:
    for name, shape in expected.items():
        if name not in params:
            raise ConfigurationError(f"missing parameter {name!r}")
        got = np.shape(params[name].data if isinstance(params[name], Tensor) else params[name])
        if tuple(got) != tuple(shape):
            raise ConfigurationError(f"parameter {name!r} has shape {tuple(got)}, expected {tuple(shape)}")


# ------------------------------------------------------------------ recurrences


def gru_run(X: Tensor, params, prefix: str, reverse: bool = False) -> list[Tensor]:
    """Hidden states of one GRU direction over the rows of ``X`` (in time order)."""
    Wx = ops.as_tensor(params[f"{prefix}.Wx"])
    Uzr = ops.as_tensor(params[f"{prefix}.Uzr"])
    Un = ops.as_tensor(params[f"{prefix}.Un"])
    h_size = Un.shape[0]
    xw = X @ Wx + ops.as_tensor(params[f"{prefix}.b"])
    xzr = xw[:, : 2 * h_size]
    xn = xw[:, 2 * h_size:]
    steps = range(X.shape[0] - 1, -1, -1) if reverse else range(X.shape[0])
    h = Tensor(np.zeros(h_size))
    states = [None] * X.shape[0]
    for t in steps:
        zr = ops.sigmoid(xzr[t] + h @ Uzr)
        z = zr[:h_size]
        r = zr[h_size:]
        n = ops.tanh(xn[t] + (r * h) @ Un)
        h = h + z * (n - h)
        states[t] = h
    return states


def bigru_sequence(X: Tensor, params, prefix: str) -> Tensor:
    fwd = gru_run(X, params, f"{prefix}.fwd")
    bwd = gru_run(X, params, f"{prefix}.bwd", reverse=True)
    return ops.concat([ops.stack(fwd), ops.stack(bwd)], axis=1)


def bigru_final(X: Tensor, params, prefix: str) -> Tensor:
    fwd = gru_run(X, params, f"{prefix}.fwd")
    bwd = gru_run(X, params, f"{prefix}.bwd", reverse=True)
    return ops.concat([fwd[-1], bwd[0]])


# ------------------------------------------------------------------ public ops


def encode_frames(x, cfg: EncoderConfig, params, prefix: str = "encoder", validate: bool = True) -> DescriptorSequence:
    """Frame grid ``T x D`` to descriptors ``C x H`` with ``C = descriptor_count(T, D, k)``."""
    if not isinstance(x, FeatureSequence):
        x = FeatureSequence(x)
    if validate:
        check_shapes(params, encoder_shapes(cfg, prefix))
    T, D = x.frames.shape
    grid = Tensor(x.frames.reshape(T, D, 1))
    for i in range(cfg.stages):
        grid = ops.maxpool2x2(grid)
        t2, d2, c = grid.shape
        flat = grid.reshape(t2 * d2, c)
        mixed = ops.relu(flat @ ops.as_tensor(params[f"{prefix}.stage{i}.weight"])
                         + ops.as_tensor(params[f"{prefix}.stage{i}.bias"]))
        grid = mixed.reshape(t2, d2, mixed.shape[1])
    t2, d2, c = grid.shape
    seq = grid.reshape(t2 * d2, c)
    seq = seq @ ops.as_tensor(params[f"{prefix}.proj.weight"]) + ops.as_tensor(params[f"{prefix}.proj.bias"])
    for layer in range(cfg.gru_layers):
        seq = bigru_sequence(seq, params, f"{prefix}.gru{layer}")
    return DescriptorSequence(seq)


def integrate(d, params, prefix: str = "integrate") -> EmbeddingVector:
    """Many-to-one BiGRU: concat(last forward state, last backward state)."""
    desc = d.descriptors if isinstance(d, DescriptorSequence) else ops.as_tensor(d)
    if desc.ndim != 2 or desc.shape[0] < 1:
        raise InputError(f"integrate needs a non-empty C x H descriptor sequence, got shape {desc.shape}")
    return EmbeddingVector(bigru_final(desc, params, f"{prefix}.gru"))
