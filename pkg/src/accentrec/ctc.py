"""CTC auxiliary branch: posterior head, loss, brute-force oracle, greedy decoding."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor
from .encoder import DescriptorSequence, bigru_sequence, gru_shapes, init_bigru, init_linear
from .errors import ConfigurationError, InfeasibleTargetError, SizeError

BLANK_MARKER = "<b>"
BRUTEFORCE_LIMIT = 10**6


@dataclass(frozen=True)
class Vocabulary:
    """Ordered tokens; the blank takes the extra last index ``len(tokens)``."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if BLANK_MARKER in self.tokens:
            raise ConfigurationError(f"token {BLANK_MARKER!r} is reserved for the blank")
        if len(set(self.tokens)) != len(self.tokens):
            raise ConfigurationError("vocabulary tokens must be distinct")

    @classmethod
    def of_size(cls, n: int) -> Vocabulary:
        return cls(tuple(f"t{i}" for i in range(n)))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def blank(self) -> int:
        return len(self.tokens)

    @property
    def width(self) -> int:
        return len(self.tokens) + 1

    def encode(self, text) -> tuple[int, ...]:
        index = {t: i for i, t in enumerate(self.tokens)}
        return tuple(index[t] for t in text)

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids]


@dataclass
class PosteriorGrid:
    """Framewise distributions over ``|U|+1`` symbols, held as log-probabilities."""

    log_probs: Tensor

    @classmethod
    def from_probs(cls, probs) -> PosteriorGrid:
        return cls(ops.log(probs))

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs.data)

    @property
    def frames(self) -> int:
        return self.log_probs.shape[0]

    @property
    def width(self) -> int:
        return self.log_probs.shape[1]


def asr_shapes(hidden: int, vocab_size: int, prefix: str = "asr") -> dict[str, tuple]:
    shapes = {}
    for d in ("fwd", "bwd"):
        shapes.update(gru_shapes(f"{prefix}.gru.{d}", hidden, hidden // 2))
    shapes[f"{prefix}.out.weight"] = (hidden, vocab_size + 1)
    shapes[f"{prefix}.out.bias"] = (vocab_size + 1,)
    return shapes


def init_asr(store, hidden: int, vocab_size: int, rng, prefix: str = "asr"):
    init_bigru(store, f"{prefix}.gru", hidden, hidden // 2, rng)
    init_linear(store, f"{prefix}.out", hidden, vocab_size + 1, rng)


def asr_head(d, vocab: Vocabulary, params, prefix: str = "asr") -> PosteriorGrid:
    """Dedicated BiGRU over shared descriptors, then linear to ``|U|+1`` and log-softmax."""
    if len(vocab) == 0:
        raise ConfigurationError("ASR head needs a non-empty vocabulary")
    desc = d.descriptors if isinstance(d, DescriptorSequence) else ops.as_tensor(d)
    W = ops.as_tensor(params[f"{prefix}.out.weight"])
    if W.shape[1] != vocab.width:
        raise ConfigurationError(
            f"parameter {prefix}.out.weight has width {W.shape[1]}, vocabulary needs {vocab.width}"
        )
    h = bigru_sequence(desc, params, f"{prefix}.gru")
    logits = h @ W + ops.as_tensor(params[f"{prefix}.out.bias"])
    return PosteriorGrid(ops.log_softmax(logits))


def required_frames(target) -> int:
    """Minimum frames for ``target``: one per token plus a blank between repeats."""
    target = list(target)
    return len(target) + sum(1 for a, b in zip(target, target[1:]) if a == b)


def check_feasible(frames: int, target) -> None:
    need = required_frames(target)
    if frames < need:
        raise InfeasibleTargetError(frames, len(target), need)


def _as_grid(grid) -> Tensor:
    if isinstance(grid, PosteriorGrid):
        return grid.log_probs
    return ops.log(grid)


def ctc_loss(grid, target) -> Tensor:
    """``-log p_ctc(target | grid)`` by log-space forward-backward.

    ``grid`` is a :class:`PosteriorGrid` (differentiable through its
    log-probabilities) or a plain probability array. The blank is the last column.
    """
    log_probs = _as_grid(grid)
    target = [int(t) for t in target]
    check_feasible(log_probs.shape[0], target)
    blank = log_probs.shape[1] - 1
    if any(t < 0 or t >= blank for t in target):
        raise ConfigurationError(f"target ids must lie in [0, {blank}), got {target}")
    return ops.ctc_nll(log_probs, np.asarray(target, dtype=np.int64), blank)


def collapse(path, blank: int) -> tuple[int, ...]:
    """Merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for z in path:
        if z != prev and z != blank:
            out.append(int(z))
        prev = z
    return tuple(out)


@lru_cache(maxsize=512)
def _matching_paths(frames: int, width: int, target: tuple[int, ...]) -> np.ndarray:
    blank = width - 1
    paths = [z for z in itertools.product(range(width), repeat=frames) if collapse(z, blank) == target]
    return np.asarray(paths, dtype=np.int64).reshape(len(paths), frames)


def ctc_loss_bruteforce(grid, target) -> float:
    """Exhaustive sum over every framewise path that collapses to ``target``."""
    probs = grid.probs if isinstance(grid, PosteriorGrid) else np.asarray(grid, dtype=np.float64)
    frames, width = probs.shape
    if width ** frames > BRUTEFORCE_LIMIT:
        raise SizeError(f"brute force over {width}^{frames} paths exceeds {BRUTEFORCE_LIMIT}")
    paths = _matching_paths(frames, width, tuple(int(t) for t in target))
    if len(paths) == 0:
        return math.inf
    total = probs[np.arange(frames), paths].prod(axis=1).sum()
    return -math.log(total)


def greedy_decode(grid, vocab: Vocabulary | None = None) -> tuple[int, ...]:
    """Best-path decoding: framewise argmax, merge repeats, drop blanks."""
    lp = grid.log_probs.data if isinstance(grid, PosteriorGrid) else np.asarray(grid)
    blank = vocab.blank if vocab is not None else lp.shape[1] - 1
    return collapse(lp.argmax(axis=1), blank)
