"""Embedding-space diagnostics and plot-ready export.

Export file: CSV with a header row ``id,label,e0,...,e{n-1}`` and one row per
utterance. Coordinates are written with 17 significant digits, so a
write/read roundtrip is exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .data import batch_assemble
from .errors import ConfigurationError, DomainError, InputError
from .model import forward_utterance

_BLOCK = 1024


@dataclass
class EmbeddingSet:
    matrix: np.ndarray
    labels: np.ndarray
    ids: list[str]

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.ids = list(self.ids)
        n = self.matrix.shape[0]
        if n < 1 or len(self.labels) != n or len(self.ids) != n:
            raise InputError(f"embedding set needs N >= 1 rows with N labels and ids, got "
                             f"{self.matrix.shape}, {len(self.labels)}, {len(self.ids)}")
        if np.isnan(self.matrix).any():
            raise InputError("embedding set contains NaN")

    def __len__(self) -> int:
        return self.matrix.shape[0]


@dataclass
class SimilarityReport:
    intra_mean_by_class: dict[int, float | None]
    intra_min_by_class: dict[int, float | None]
    intra_mean: float | None
    inter_mean: float | None
    inter_max: float | None
    n_intra: int
    n_inter: int
    bin_edges: np.ndarray = field(repr=False)
    hist_sp: np.ndarray = field(repr=False)
    hist_sn: np.ndarray = field(repr=False)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DomainError("cosine statistics undefined for zero embeddings")
    return x / norms


def similarity_stats(e: EmbeddingSet, bins: int = 20) -> SimilarityReport:
    """Exact all-pairs cosine statistics. Classes with one member report ``None``."""
    X = _unit_rows(e.matrix)
    y = e.labels
    classes = np.unique(y)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    hist_sp = np.zeros(bins, dtype=np.int64)
    hist_sn = np.zeros(bins, dtype=np.int64)
    sums = {int(c): 0.0 for c in classes}
    mins = {int(c): np.inf for c in classes}
    counts = {int(c): 0 for c in classes}
    inter_sum, inter_max, n_inter = 0.0, -np.inf, 0

    n = len(X)
    for start in range(0, n, _BLOCK):
        rows = np.arange(start, min(start + _BLOCK, n))
        cos = np.clip(X[rows] @ X.T, -1.0, 1.0)
        # keep pairs (i, j) with j > i only
        mask = np.arange(n)[None, :] > rows[:, None]
        same = (y[rows][:, None] == y[None, :]) & mask
        diff = (y[rows][:, None] != y[None, :]) & mask
        sp, sn = cos[same], cos[diff]
        hist_sp += np.histogram(sp, edges)[0]
        hist_sn += np.histogram(sn, edges)[0]
        if sn.size:
            inter_sum += sn.sum()
            inter_max = max(inter_max, sn.max())
            n_inter += sn.size
        pair_class = np.broadcast_to(y[rows][:, None], cos.shape)[same]
        for c in np.unique(pair_class):
            vals = sp[pair_class == c]
            c = int(c)
            sums[c] += vals.sum()
            mins[c] = min(mins[c], vals.min())
            counts[c] += vals.size

    intra_mean = {c: (sums[c] / counts[c] if counts[c] else None) for c in sums}
    intra_min = {c: (float(mins[c]) if counts[c] else None) for c in sums}
    n_intra = sum(counts.values())
    return SimilarityReport(
        intra_mean_by_class=intra_mean,
        intra_min_by_class=intra_min,
        intra_mean=(sum(sums.values()) / n_intra) if n_intra else None,
        inter_mean=(inter_sum / n_inter) if n_inter else None,
        inter_max=float(inter_max) if n_inter else None,
        n_intra=n_intra,
        n_inter=n_inter,
        bin_edges=edges,
        hist_sp=hist_sp,
        hist_sn=hist_sn,
    )


def compute_embeddings(ckpt: Checkpoint, records, dim: int = 0, max_frames: int = 1200) -> EmbeddingSet:
    """Integration output (``dim=0``) or the trained bottleneck feature (``dim`` 2/3)."""
    if dim not in (0, 2, 3):
        raise ConfigurationError(f"bottleneck dim must be 0, 2 or 3, got {dim}")
    if dim and ckpt.model.bottleneck != dim:
        raise ConfigurationError(
            f"checkpoint has bottleneck={ckpt.model.bottleneck}; a {dim}-dim export needs a "
            f"checkpoint trained with bottleneck={dim}"
        )
    records = list(records)
    rows, labels, ids = [], [], []
    for batch in batch_assemble(records, 32, max_frames):
        for i in range(len(batch)):
            out = forward_utterance(batch.utterance(i), ckpt.model, ckpt.params, with_asr=False)
            rows.append((out.feature if dim else out.embedding).data)
            labels.append(int(batch.labels[i]))
            ids.append(batch.ids[i])
    X = np.stack(rows)
    if dim == 3:
        X = _unit_rows(X)
    return EmbeddingSet(X, labels, ids)


def write_embeddings(path, e: EmbeddingSet) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "label"] + [f"e{j}" for j in range(e.matrix.shape[1])])
        for uid, lab, row in zip(e.ids, e.labels, e.matrix):
            w.writerow([uid, int(lab)] + [format(float(v), ".17g") for v in row])
    return path


def read_embeddings(path) -> EmbeddingSet:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][:2] != ["id", "label"]:
        raise InputError(f"{path}: not an embedding export (bad header)")
    body = rows[1:]
    return EmbeddingSet(np.array([[float(v) for v in r[2:]] for r in body]),
                        [int(r[1]) for r in body], [r[0] for r in body])


def export_embeddings(ckpt: Checkpoint, data, dim: int, path, max_frames: int = 1200) -> EmbeddingSet:
    e = compute_embeddings(ckpt, data, dim, max_frames)
    write_embeddings(path, e)
    return e
