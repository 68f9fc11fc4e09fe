"""Discriminative losses over utterance embeddings and class weight vectors.

Every loss takes a batch of embeddings ``G`` (``N x E``, or a single ``E``
vector) with integer labels and returns the batch-mean scalar. Margin losses
work on cosines: embeddings and class weights are L2-normalized at every call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor
from .errors import ConfigurationError, ContractError, DimensionError

LOSS_KINDS = ("softmax", "cosface", "arcface", "circle")
DEFAULT_SCALE = {"softmax": 1.0, "cosface": 30.0, "arcface": 30.0, "circle": 256.0}
ARC_CLAMP = 1e-7


@dataclass(frozen=True)
class MarginConfig:
    """Loss family selector.

    ``scale=None`` picks the family default (30 for cosface/arcface, 256 for
    circle). ``literal`` applies the scale to the target logit only, leaving
    the negative-class exponents unscaled. ``score_mode`` chooses how circle
    scores are formed: ``proxy`` (against class weights) or ``pair`` (within
    the batch).
    """

    kind: str = "circle"
    scale: float | None = None
    margin: float = 0.2
    literal: bool = False
    score_mode: str = "proxy"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigurationError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if self.scale is None:
            object.__setattr__(self, "scale", DEFAULT_SCALE[self.kind])
        if not self.scale > 0:
            raise ConfigurationError(f"scale must be positive, got {self.scale}")
        if not 0.0 <= self.margin < 1.0:
            raise ConfigurationError(f"margin must lie in [0, 1), got {self.margin}")
        if self.score_mode not in ("proxy", "pair"):
            raise ConfigurationError(f"score_mode must be 'proxy' or 'pair', got {self.score_mode!r}")


@dataclass
class SimilarityScores:
    """Intra-class (``sp``, last axis K) and inter-class (``sn``, last axis L) cosines."""

    sp: Tensor
    sn: Tensor

    @property
    def K(self) -> int:
        return self.sp.shape[-1]

    @property
    def L(self) -> int:
        return self.sn.shape[-1]


def _batch(G, labels):
    G = ops.as_tensor(G)
    if G.ndim == 1:
        G = G.reshape(1, G.shape[0])
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if G.ndim != 2 or len(labels) != G.shape[0]:
        raise DimensionError(f"embeddings {G.shape} do not match {len(labels)} labels")
    if len(labels) == 0:
        raise ContractError("loss needs a non-empty batch")
    return G, labels


def _check_labels(labels, num_classes):
    if num_classes < 2:
        raise ConfigurationError(f"need at least 2 classes, got {num_classes}")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ContractError(f"labels must lie in [0, {num_classes}), got {labels.tolist()}")


def cosine_matrix(G, W) -> Tensor:
    """Cosines between every embedding row and every class weight row (``N x C``)."""
    return ops.l2_normalize(G) @ ops.l2_normalize(W).T


def _negative_index(labels, num_classes):
    rows = np.repeat(np.arange(len(labels)), num_classes - 1)
    cols = np.array([k for y in labels for k in range(num_classes) if k != y], dtype=np.int64)
    return rows, cols


def class_similarities(g, label, W) -> SimilarityScores:
    """Proxy scores: ``sp = [cos(g, W_label)]`` and ``sn = cos(g, W_k)`` for ``k != label``.

    Accepts a single embedding (``sp`` shape ``(1,)``) or a batch (``N x 1``).
    """
    single = ops.as_tensor(g).ndim == 1
    G, labels = _batch(g, label)
    W = ops.as_tensor(W)
    _check_labels(labels, W.shape[0])
    cos = cosine_matrix(G, W)
    n = len(labels)
    sp = cos[np.arange(n), labels].reshape(n, 1)
    rows, cols = _negative_index(labels, W.shape[0])
    sn = cos[rows, cols].reshape(n, W.shape[0] - 1)
    if single:
        sp, sn = sp.reshape(1), sn.reshape(W.shape[0] - 1)
    return SimilarityScores(sp, sn)


def pair_similarities(G, labels) -> SimilarityScores:
    """Within-batch scores: same-label pairs give ``sp``, cross-label pairs give ``sn``."""
    G, labels = _batch(G, labels)
    Gn = ops.l2_normalize(G)
    cos = Gn @ Gn.T
    iu, ju = np.triu_indices(len(labels), k=1)
    same = labels[iu] == labels[ju]
    if not same.any() or same.all():
        raise ContractError("pair mode needs at least one same-label and one cross-label pair")
    return SimilarityScores(cos[iu[same], ju[same]], cos[iu[~same], ju[~same]])


def cross_entropy(logits: Tensor, labels) -> Tensor:
    n = len(labels)
    logp = ops.log_softmax(logits)
    return -(logp[np.arange(n), labels].mean())


def softmax_loss(G, labels, W, bias=None) -> Tensor:
    """Cross-entropy over raw logits ``W_k . g`` (no normalization)."""
    G, labels = _batch(G, labels)
    W = ops.as_tensor(W)
    _check_labels(labels, W.shape[0])
    logits = G @ W.T
    if bias is not None:
        logits = logits + ops.as_tensor(bias)
    return cross_entropy(logits, labels)


def normalized_softmax_loss(G, labels, W, scale: float = 1.0) -> Tensor:
    G, labels = _batch(G, labels)
    W = ops.as_tensor(W)
    _check_labels(labels, W.shape[0])
    return cross_entropy(cosine_matrix(G, W) * scale, labels)


def _margin_logits(cos: Tensor, target: Tensor, labels, cfg: MarginConfig) -> Tensor:
    """Replace the label column of ``cos`` by ``target`` and apply the scale."""
    n, c = cos.shape
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    spread = target.reshape(n, 1) @ Tensor(np.ones((1, c)))
    placed = cos * (1.0 - onehot) + spread * onehot
    if cfg.literal:
        return placed * (onehot * (cfg.scale - 1.0) + 1.0)
    return placed * cfg.scale


def cosface_loss(G, labels, W, cfg: MarginConfig) -> Tensor:
    """Additive cosine margin: target logit ``scale * (cos_y - m)``."""
    G, labels = _batch(G, labels)
    W = ops.as_tensor(W)
    _check_labels(labels, W.shape[0])
    cos = cosine_matrix(G, W)
    target = cos[np.arange(len(labels)), labels] - cfg.margin
    return cross_entropy(_margin_logits(cos, target, labels, cfg), labels)


def arcface_loss(G, labels, W, cfg: MarginConfig) -> Tensor:
    """Additive angular margin: target logit ``scale * cos(theta_y + m)``.

    ``cos(theta + m)`` is expanded as ``c cos m - sqrt(1 - c^2) sin m`` with
    ``c`` clamped to ``[-1 + 1e-7, 1 - 1e-7]`` so the gradient stays finite.
    """
    G, labels = _batch(G, labels)
    W = ops.as_tensor(W)
    _check_labels(labels, W.shape[0])
    cos = cosine_matrix(G, W)
    c = ops.clip(cos[np.arange(len(labels)), labels], -1.0 + ARC_CLAMP, 1.0 - ARC_CLAMP)
    if cfg.margin == 0.0:
        target = c
    else:
        s = ops.sqrt(1.0 - c * c)
        target = c * math.cos(cfg.margin) - s * math.sin(cfg.margin)
    return cross_entropy(_margin_logits(cos, target, labels, cfg), labels)


def _log1p_product(log_a: Tensor, log_b: Tensor) -> Tensor:
    """``log(1 + sum(e^a) * sum(e^b))`` over the last axis, in log space."""
    return ops.softplus(ops.logsumexp(log_a) + ops.logsumexp(log_b))


def unified_pair_loss(scores: SimilarityScores, scale: float, margin: float) -> Tensor:
    """``log(1 + sum_j e^{scale (sn_j + m)} * sum_i e^{-scale sp_i})``, batch-mean if batched."""
    sp, sn = ops.as_tensor(scores.sp), ops.as_tensor(scores.sn)
    loss = _log1p_product((sn + margin) * scale, sp * (-scale))
    return loss.mean() if loss.ndim else loss


def circle_weights(scores: SimilarityScores, margin: float) -> tuple[np.ndarray, np.ndarray]:
    """Self-paced weights ``[1 + m - sp]+`` and ``[sn + m]+`` as plain arrays."""
    sp = ops.as_tensor(scores.sp).data
    sn = ops.as_tensor(scores.sn).data
    return np.maximum(1.0 + margin - sp, 0.0), np.maximum(sn + margin, 0.0)


def circle_loss(scores: SimilarityScores, scale: float, margin: float, *,
                alphas=None, delta_p: float | None = None, delta_n: float | None = None) -> Tensor:
    """Circle loss with single-margin settings ``Op=1+m, On=-m, Δp=1-m, Δn=m``.

    The self-paced weights are constants (no gradient flows into them).
    ``alphas=(alpha_p, alpha_n)`` freezes them at given values and
    ``delta_p``/``delta_n`` override the decision margins; both exist for
    gradient checking and for reducing to :func:`unified_pair_loss`.
    """
    sp, sn = ops.as_tensor(scores.sp), ops.as_tensor(scores.sn)
    if sp.shape[-1] < 1 or sn.shape[-1] < 1:
        raise ContractError("circle loss needs K >= 1 and L >= 1")
    if alphas is None:
        alphas = circle_weights(scores, margin)
    alpha_p, alpha_n = (np.broadcast_to(np.asarray(a, dtype=np.float64), s.shape) for a, s in zip(alphas, (sp, sn)))
    dp = 1.0 - margin if delta_p is None else delta_p
    dn = margin if delta_n is None else delta_n
    logit_n = (sn - dn) * (alpha_n * scale)
    logit_p = (sp - dp) * (alpha_p * -scale)
    loss = _log1p_product(logit_n, logit_p)
    return loss.mean() if loss.ndim else loss


def discriminative_loss(G, labels, W, cfg: MarginConfig, alphas=None) -> Tensor:
    """Dispatch on ``cfg.kind``; ``W`` holds one weight row per class."""
    if cfg.kind == "softmax":
        return softmax_loss(G, labels, W)
    if cfg.kind == "cosface":
        return cosface_loss(G, labels, W, cfg)
    if cfg.kind == "arcface":
        return arcface_loss(G, labels, W, cfg)
    if cfg.score_mode == "pair":
        scores = pair_similarities(G, labels)
    else:
        scores = class_similarities(G, labels, W)
    return circle_loss(scores, cfg.scale, cfg.margin, alphas=alphas)
