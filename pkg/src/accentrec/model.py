"""Model assembly: parameter layout, initialization and the per-utterance forward pass.

Parameter paths::

    encoder.stage{i}.{weight,bias}    pointwise channel mix after each pool
    encoder.proj.{weight,bias}        descriptor projection to H
    encoder.gru{l}.{fwd,bwd}.*        many-to-many BiGRU layers
    integrate.gru.{fwd,bwd}.*         many-to-one BiGRU
    asr.gru.{fwd,bwd}.*, asr.out.*    CTC head
    bottleneck.{weight,bias}          optional 2/3-dim bottleneck on the embedding
    metric.weight                     class weight vectors for the discriminative loss (C x E)
    classifier.{weight,bias}          prediction head (E x C)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.params import ParameterStore
from .autodiff.tensor import Tensor
from .ctc import PosteriorGrid, Vocabulary, asr_head, asr_shapes, init_asr
from .encoder import (
    EncoderConfig,
    check_shapes,
    encode_frames,
    encoder_shapes,
    init_encoder,
    init_integrate,
    init_linear,
    integrate,
    integrate_shapes,
)
from .errors import ConfigurationError


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    vocabulary: Vocabulary = field(default_factory=lambda: Vocabulary.of_size(16))
    labels: tuple[str, ...] = ("class0", "class1", "class2", "class3")
    bottleneck: int = 0

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.bottleneck not in (0, 2, 3):
            raise ConfigurationError(f"bottleneck must be 0, 2 or 3, got {self.bottleneck}")
        if len(self.labels) < 2:
            raise ConfigurationError("need at least 2 classes")

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    @property
    def feature_dim(self) -> int:
        """Width of the vector fed to the losses and the classifier."""
        return self.bottleneck or self.encoder.hidden

    def to_dict(self) -> dict:
        return {"encoder": self.encoder.to_dict(), "vocabulary": list(self.vocabulary.tokens),
                "labels": list(self.labels), "bottleneck": self.bottleneck}

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(EncoderConfig.from_dict(d["encoder"]), Vocabulary(tuple(d["vocabulary"])),
                   tuple(d["labels"]), int(d.get("bottleneck", 0)))


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    shapes = {}
    shapes.update(encoder_shapes(cfg.encoder))
    shapes.update(integrate_shapes(cfg.encoder))
    shapes.update(asr_shapes(cfg.encoder.hidden, len(cfg.vocabulary)))
    if cfg.bottleneck:
        shapes["bottleneck.weight"] = (cfg.encoder.hidden, cfg.bottleneck)
        shapes["bottleneck.bias"] = (cfg.bottleneck,)
    shapes["metric.weight"] = (cfg.num_classes, cfg.feature_dim)
    shapes["classifier.weight"] = (cfg.feature_dim, cfg.num_classes)
    shapes["classifier.bias"] = (cfg.num_classes,)
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> ParameterStore:
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    init_encoder(store, cfg.encoder, rng)
    init_integrate(store, cfg.encoder, rng)
    init_asr(store, cfg.encoder.hidden, len(cfg.vocabulary), rng)
    if cfg.bottleneck:
        init_linear(store, "bottleneck", cfg.encoder.hidden, cfg.bottleneck, rng)
    store.add("metric.weight", rng.standard_normal((cfg.num_classes, cfg.feature_dim)))
    init_linear(store, "classifier", cfg.feature_dim, cfg.num_classes, rng)
    return store


def validate_params(cfg: ModelConfig, params) -> None:
    check_shapes(params, param_shapes(cfg))


@dataclass
class UtteranceOutput:
    embedding: Tensor  # H-dim integration output
    feature: Tensor  # bottleneck output when configured, else the embedding
    posteriors: PosteriorGrid | None


def forward_utterance(x, cfg: ModelConfig, params, with_asr: bool = True, with_ar: bool = True) -> UtteranceOutput:
    desc = encode_frames(x, cfg.encoder, params, validate=False)
    grid = asr_head(desc, cfg.vocabulary, params) if with_asr else None
    g = feature = None
    if with_ar:
        g = integrate(desc, params).values
        feature = g
        if cfg.bottleneck:
            feature = g @ ops.as_tensor(params["bottleneck.weight"]) + ops.as_tensor(params["bottleneck.bias"])
    return UtteranceOutput(g, feature, grid)


def classifier_logits(features: Tensor, params) -> Tensor:
    return features @ ops.as_tensor(params["classifier.weight"]) + ops.as_tensor(params["classifier.bias"])
