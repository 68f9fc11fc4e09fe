"""Multitask training (CTC + discriminative loss + classifier) and evaluation."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.params import ParameterStore
from .autodiff.tensor import Tape, Tensor, backward
from .checkpoint import AdamState, Checkpoint
from .ctc import ctc_loss, required_frames
from .data import Manifest, batch_assemble
from .errors import ContractError, DataError, NonFiniteError
from .losses import MarginConfig, discriminative_loss, cross_entropy
from .model import ModelConfig, classifier_logits, forward_utterance, init_params

log = logging.getLogger(__name__)

MODES = ("joint", "ctc-pretrain", "ar-only")
METRICS_HEADER = "epoch,train_loss,ctc_loss,disc_loss,clf_loss,dev_accuracy,lr,ctc_skipped"


@dataclass(frozen=True)
class MtlWeights:
    alpha: float = 0.4
    beta: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0.0:
            raise ContractError(f"beta must be non-negative, got {self.beta}")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    decay: float = 0.3
    patience: int = 3
    max_epochs: int = 100
    batch_size: int = 16
    max_frames: int = 1200
    seed: int = 7
    loss: MarginConfig = field(default_factory=MarginConfig)
    weights: MtlWeights = field(default_factory=MtlWeights)
    mode: str = "joint"

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ContractError(f"decay must lie in (0, 1), got {self.decay}")
        if self.patience < 1:
            raise ContractError(f"patience must be >= 1, got {self.patience}")
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.max_frames < 1:
            raise ContractError("lr, batch_size, max_epochs and max_frames must be positive")


def _check_branch(name: str, value) -> None:
    v = value.data if isinstance(value, Tensor) else np.asarray(value)
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"non-finite {name} loss: {float(v)!r}")


def mtl_loss(ctc, disc, clf, w: MtlWeights) -> Tensor:
    """``alpha * ctc + (1 - alpha) * disc + beta * clf``, refusing non-finite branches."""
    _check_branch("ctc", ctc)
    _check_branch("disc", disc)
    _check_branch("clf", clf)
    return ops.as_tensor(ctc) * w.alpha + ops.as_tensor(disc) * (1.0 - w.alpha) + ops.as_tensor(clf) * w.beta


def adam_step(params: ParameterStore, grads, state: AdamState, lr: float):
    """Bias-corrected Adam update, applied in sorted parameter-name order."""
    names = params.names()
    missing = [n for n in names if n not in grads]
    if missing:
        raise ContractError(f"no gradient for parameters {missing}")
    state.step += 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name in names:
        p = params[name]
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ContractError(f"gradient for {name!r} has shape {g.shape}, parameter is {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


class PlateauSchedule:
    """Monitor-driven decay: the first exhausted patience window decays the
    learning rate, the second one stops training."""

    def __init__(self, lr: float, patience: int = 3, decay: float = 0.3, max_windows: int = 2):
        self.lr = lr
        self.patience = patience
        self.decay = decay
        self.max_windows = max_windows
        self.best = -np.inf
        self.wait = 0
        self.windows = 0

    def step(self, metric: float) -> str:
        """Returns ``improved``, ``wait``, ``decay`` or ``stop``."""
        if metric > self.best:
            self.best = metric
            self.wait = 0
            return "improved"
        self.wait += 1
        if self.wait < self.patience:
            return "wait"
        self.wait = 0
        self.windows += 1
        if self.windows >= self.max_windows:
            return "stop"
        self.lr *= self.decay
        return "decay"


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    ctc_loss: float
    disc_loss: float
    clf_loss: float
    dev_accuracy: float
    lr: float
    ctc_skipped: int

    def csv(self) -> str:
        return (f"{self.epoch},{self.train_loss:.10g},{self.ctc_loss:.10g},{self.disc_loss:.10g},"
                f"{self.clf_loss:.10g},{self.dev_accuracy:.10g},{self.lr:.10g},{self.ctc_skipped}")


def write_metrics(path, metrics) -> None:
    with open(path, "w") as f:
        f.write(METRICS_HEADER + "\n")
        for m in metrics:
            f.write(m.csv() + "\n")


@dataclass
class BatchLoss:
    total: Tensor
    ctc: float
    disc: float
    clf: float
    skipped: int


def batch_loss(batch, model: ModelConfig, cfg: TrainConfig, params) -> BatchLoss:
    """Forward all heads over one batch and combine them according to ``cfg.mode``."""
    use_ctc = cfg.mode != "ar-only"
    use_ar = cfg.mode != "ctc-pretrain"
    feats, ctc_terms, skipped = [], [], 0
    for i in range(len(batch)):
        out = forward_utterance(batch.utterance(i), model, params, with_asr=use_ctc, with_ar=use_ar)
        if use_ar:
            feats.append(out.feature)
        if use_ctc:
            target = batch.transcripts[i]
            if out.posteriors.frames < required_frames(target):
                skipped += 1
            else:
                ctc_terms.append(ctc_loss(out.posteriors, target))
    ctc = ops.stack(ctc_terms).mean() if ctc_terms else Tensor(0.0)
    if not use_ar:
        _check_branch("ctc", ctc)
        return BatchLoss(ctc, ctc.item(), 0.0, 0.0, skipped)
    F = ops.stack(feats)
    disc = discriminative_loss(F, batch.labels, params["metric.weight"], cfg.loss)
    clf = cross_entropy(classifier_logits(F, params), batch.labels)
    total = mtl_loss(ctc, disc, clf, cfg.weights)
    return BatchLoss(total, ctc.item(), disc.item(), clf.item(), skipped)


def predict(model: ModelConfig, params, records, max_frames: int = 1200, cache=None) -> np.ndarray:
    preds = []
    for batch in batch_assemble(records, 32, max_frames, cache=cache):
        for i in range(len(batch)):
            out = forward_utterance(batch.utterance(i), model, params, with_asr=False)
            preds.append(int(np.argmax(classifier_logits(out.feature, params).data)))
    return np.array(preds, dtype=np.int64)


def _dev_ctc(model, params, records, max_frames, cache) -> float:
    losses = []
    for batch in batch_assemble(records, 32, max_frames, cache=cache):
        for i in range(len(batch)):
            out = forward_utterance(batch.utterance(i), model, params, with_asr=True, with_ar=False)
            if out.posteriors.frames >= required_frames(batch.transcripts[i]):
                losses.append(ctc_loss(out.posteriors, batch.transcripts[i]).item())
    return float(np.mean(losses)) if losses else float("inf")


def warm_start(params: ParameterStore, init: Checkpoint) -> list[str]:
    """Copy every parameter of ``init`` whose name and shape match; returns the copied names."""
    copied = []
    for name in params.names():
        if name in init.params and init.params[name].shape == params[name].shape:
            params[name] = init.params[name].copy()
            copied.append(name)
    return copied


def train(train_set: Manifest, dev_set: Manifest, model: ModelConfig, cfg: TrainConfig,
          init: Checkpoint | None = None, on_epoch=None):
    """Run the training schedule; returns ``(best_checkpoint, metrics)``.

    Each epoch shuffles with a generator derived from ``cfg.seed``, takes one
    Adam step per batch and scores the dev split. The monitor is dev accuracy
    (negative dev CTC loss in ``ctc-pretrain`` mode). The checkpoint holds the
    parameters of the best monitored epoch.
    """
    if len(train_set) == 0 or len(dev_set) == 0:
        raise DataError("training needs non-empty train and dev splits")
    if cfg.mode == "joint":
        empty = [r.id for r in train_set if not r.transcript]
        if empty:
            raise DataError(f"joint mode needs transcripts; record {empty[0]!r} has none")
    for r in list(train_set) + list(dev_set):
        if r.label >= model.num_classes:
            raise DataError(f"record {r.id!r}: label {r.label} outside {model.num_classes} classes")

    params = init_params(model, cfg.seed)
    if init is not None:
        copied = warm_start(params, init)
        log.info("warm start copied %d tensors", len(copied))
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    state = AdamState()
    schedule = PlateauSchedule(cfg.lr, cfg.patience, cfg.decay)
    cache, dev_cache = {}, {}
    metrics = []
    best = None

    for epoch in range(1, cfg.max_epochs + 1):
        lr = schedule.lr
        sums = np.zeros(4)
        n_batches, skipped = 0, 0
        for batch in batch_assemble(train_set.records, cfg.batch_size, cfg.max_frames, rng=shuffle_rng, cache=cache):
            tape = Tape()
            leaves = tape.watch(params)
            out = batch_loss(batch, model, cfg, leaves)
            grads = backward(tape, out.total)
            adam_step(params, grads, state, lr)
            sums += (out.total.item(), out.ctc, out.disc, out.clf)
            n_batches += 1
            skipped += out.skipped
        if skipped:
            log.warning("epoch %d: skipped %d utterances with infeasible CTC targets", epoch, skipped)

        preds = predict(model, params, dev_set.records, cfg.max_frames, dev_cache)
        labels = np.array([r.label for r in dev_set], dtype=np.int64)
        dev_acc = float(np.mean(preds == labels))
        monitor = dev_acc if cfg.mode != "ctc-pretrain" else -_dev_ctc(model, params, dev_set.records,
                                                                        cfg.max_frames, dev_cache)
        avg = sums / max(n_batches, 1)
        m = EpochMetrics(epoch, *avg.tolist(), dev_acc, lr, skipped)
        metrics.append(m)
        if on_epoch is not None:
            on_epoch(m)

        action = schedule.step(monitor)
        if action == "improved":
            best = Checkpoint(model, params.copy(), state.copy(),
                              {"epoch": epoch, "dev_accuracy": dev_acc, "monitor": monitor,
                               "mode": cfg.mode, "seed": cfg.seed, "loss": asdict(cfg.loss),
                               "weights": asdict(cfg.weights)})
        elif action == "stop":
            break
    return best, metrics


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray
    predictions: np.ndarray


def evaluate(ckpt: Checkpoint, data, max_frames: int = 1200) -> EvalResult:
    """Classifier-head accuracy and confusion matrix (rows = true class)."""
    records = list(data)
    k = ckpt.model.num_classes
    for r in records:
        if not 0 <= r.label < k:
            raise DataError(f"record {r.id!r}: label {r.label} outside the checkpoint's {k} classes")
    if not records:
        return EvalResult(float("nan"), np.zeros((k, k), dtype=np.int64), np.zeros(0, dtype=np.int64))
    preds = predict(ckpt.model, ckpt.params, records, max_frames)
    labels = np.array([r.label for r in records], dtype=np.int64)
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    return EvalResult(float(np.mean(preds == labels)), confusion, preds)
