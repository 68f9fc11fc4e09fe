"""Synthetic corpus generation, manifest/feature file I/O and batch assembly.

On-disk layout of a corpus directory::

    header.json       labels, vocabulary tokens, feature dim, format version
    train.jsonl       one UtteranceRecord per line
    dev.jsonl
    feats/<id>.bin    uint32 LE T, uint32 LE D, then T*D float64 LE (row-major)

A record is a JSON object with keys ``id``, ``features`` (path relative to the
manifest's directory) or ``inline`` (list of T rows), ``frames``, ``dim``,
``label`` and ``transcript`` (list of token ids).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ctc import Vocabulary
from .errors import (
    DataError,
    InputError,
    LabelRangeError,
    MalformedRecordError,
    ManifestNotFoundError,
    TokenRangeError,
)

FORMAT_VERSION = 1
HEADER_NAME = "header.json"
_FEAT_HEADER = struct.Struct("<II")


# ------------------------------------------------------------------ feature files


def write_features(path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f8")
    T, D = frames.shape
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(_FEAT_HEADER.pack(T, D))
            f.write(frames.tobytes())
    except OSError as e:
        raise DataError(f"cannot write feature file {path}: {e}") from e


def read_features(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read feature file {path}: {e}") from e
    if len(raw) < _FEAT_HEADER.size:
        raise DataError(f"feature file {path} is truncated")
    T, D = _FEAT_HEADER.unpack_from(raw)
    if len(raw) != _FEAT_HEADER.size + 8 * T * D:
        raise DataError(f"feature file {path}: header says {T}x{D} but payload is {len(raw) - 8} bytes")
    return np.frombuffer(raw, dtype="<f8", offset=_FEAT_HEADER.size).reshape(T, D).astype(np.float64)


# ------------------------------------------------------------------ records


@dataclass
class UtteranceRecord:
    id: str
    frames: int
    dim: int
    label: int
    transcript: tuple[int, ...] = ()
    features: str | None = None
    inline: np.ndarray | None = field(default=None, repr=False)
    root: Path | None = field(default=None, repr=False, compare=False)

    def load(self) -> np.ndarray:
        if self.inline is not None:
            return np.asarray(self.inline, dtype=np.float64)
        path = Path(self.features)
        if self.root is not None and not path.is_absolute():
            path = self.root / path
        x = read_features(path)
        if x.shape != (self.frames, self.dim):
            raise DataError(f"record {self.id!r}: feature file is {x.shape}, manifest says "
                            f"{(self.frames, self.dim)}")
        return x

    def to_json(self) -> dict:
        d = {"id": self.id, "frames": self.frames, "dim": self.dim, "label": self.label,
             "transcript": list(self.transcript)}
        if self.inline is not None:
            d["inline"] = np.asarray(self.inline).tolist()
        else:
            d["features"] = self.features
        return d

    def __eq__(self, other):
        if not isinstance(other, UtteranceRecord):
            return NotImplemented
        same_inline = (self.inline is None and other.inline is None) or (
            self.inline is not None and other.inline is not None
            and np.array_equal(self.inline, other.inline))
        return (self.id, self.frames, self.dim, self.label, tuple(self.transcript), self.features) == (
            other.id, other.frames, other.dim, other.label, tuple(other.transcript), other.features
        ) and same_inline


@dataclass
class Manifest:
    """Records of one split plus the label and vocabulary tables."""

    records: list[UtteranceRecord]
    labels: tuple[str, ...]
    vocabulary: Vocabulary
    dim: int | None = None
    path: Path | None = None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    def class_counts(self) -> np.ndarray:
        counts = np.zeros(self.num_classes, dtype=np.int64)
        for r in self.records:
            counts[r.label] += 1
        return counts


def write_header(directory, labels, vocabulary: Vocabulary, dim: int) -> Path:
    path = Path(directory) / HEADER_NAME
    header = {"format_version": FORMAT_VERSION, "labels": list(labels),
              "vocabulary": list(vocabulary.tokens), "feature_dim": dim}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(header, sort_keys=True, indent=1) + "\n")
    return path


def read_header(directory) -> dict:
    path = Path(directory) / HEADER_NAME
    if not path.exists():
        raise ManifestNotFoundError(f"label/vocabulary header not found: {path}")
    try:
        header = json.loads(path.read_text())
        header["labels"], header["vocabulary"]
    except (ValueError, KeyError) as e:
        raise MalformedRecordError(f"malformed header {path}: {e}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise MalformedRecordError(f"header {path}: unsupported format_version {header.get('format_version')!r}")
    return header


def write_manifest(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def _parse_record(obj, lineno, num_classes, vocab_size, root) -> UtteranceRecord:
    rid = obj.get("id") if isinstance(obj, dict) else None
    where = f"record {rid!r}" if rid is not None else f"line {lineno}"
    if not isinstance(obj, dict) or not isinstance(rid, str):
        raise MalformedRecordError(f"{where}: expected an object with a string 'id'")
    try:
        frames, dim, label = int(obj["frames"]), int(obj["dim"]), int(obj["label"])
        transcript = tuple(int(t) for t in obj.get("transcript", []))
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedRecordError(f"{where}: missing or invalid field ({e})") from e
    if frames < 1 or dim < 1:
        raise MalformedRecordError(f"{where}: frames and dim must be >= 1, got {frames}, {dim}")
    if ("features" in obj) == ("inline" in obj):
        raise MalformedRecordError(f"{where}: exactly one of 'features' or 'inline' is required")
    inline = None
    if "inline" in obj:
        inline = np.asarray(obj["inline"], dtype=np.float64)
        if inline.shape != (frames, dim):
            raise MalformedRecordError(f"{where}: inline payload {inline.shape} != {(frames, dim)}")
    if not 0 <= label < num_classes:
        raise LabelRangeError(f"{where}: label {label} out of range for {num_classes} classes")
    bad = [t for t in transcript if not 0 <= t < vocab_size]
    if bad:
        raise TokenRangeError(f"{where}: transcript tokens {bad} outside vocabulary of size {vocab_size}")
    return UtteranceRecord(rid, frames, dim, label, transcript, obj.get("features"), inline, root)


def load_manifest(path) -> Manifest:
    """Parse and validate a JSON-lines manifest and its sibling header."""
    path = Path(path)
    if not path.exists():
        raise ManifestNotFoundError(f"manifest not found: {path}")
    header = read_header(path.parent)
    labels = tuple(header["labels"])
    vocab = Vocabulary(tuple(header["vocabulary"]))
    records = []
    seen = set()
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except ValueError as e:
            raise MalformedRecordError(f"line {lineno}: not valid JSON ({e})") from e
        rec = _parse_record(obj, lineno, len(labels), len(vocab), path.parent)
        if rec.id in seen:
            raise MalformedRecordError(f"record {rec.id!r}: duplicate id")
        seen.add(rec.id)
        records.append(rec)
    return Manifest(records, labels, vocab, header.get("feature_dim"), path)


# ------------------------------------------------------------------ synthetic corpus


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 4
    utts_per_class: int = 60
    speakers_per_class: int = 6
    dev_speakers_per_class: int = 2
    min_frames: int = 320
    max_frames: int = 640
    dim: int = 20
    components: int = 2
    noise: float = 0.3
    vocab_size: int = 16
    transcript_min: int = 3
    transcript_max: int = 10
    seed: int = 7

    def __post_init__(self):
        if self.num_classes < 2:
            raise InputError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.noise < 0:
            raise InputError(f"noise must be >= 0, got {self.noise}")
        if not 1 <= self.min_frames <= self.max_frames:
            raise InputError(f"need 1 <= min_frames <= max_frames, got {self.min_frames}, {self.max_frames}")
        if not 0 < self.dev_speakers_per_class < self.speakers_per_class:
            raise InputError("dev_speakers_per_class must be in [1, speakers_per_class)")
        if self.utts_per_class < self.speakers_per_class:
            raise InputError("utts_per_class must be >= speakers_per_class")
        if not 0 <= self.transcript_min <= self.transcript_max:
            raise InputError("need 0 <= transcript_min <= transcript_max")
        if self.dim < 1 or self.vocab_size < 1 or self.components < 1:
            raise InputError("dim, vocab_size and components must be >= 1")


@dataclass
class ClassProfile:
    """Bin-axis sinusoids (cycles across D, phase, amplitude) and their temporal modulation rate."""

    freqs: np.ndarray
    phases: np.ndarray
    amps: np.ndarray
    rates: np.ndarray


def class_profiles(spec: SyntheticSpec, rng) -> list[ClassProfile]:
    pool = np.arange(1, 2 * spec.num_classes * spec.components + 1) * 0.5
    order = rng.permutation(len(pool))
    profiles = []
    for c in range(spec.num_classes):
        pick = np.sort(pool[order[c * spec.components:(c + 1) * spec.components]])
        profiles.append(ClassProfile(
            freqs=pick,
            phases=rng.uniform(0, 2 * math.pi, spec.components),
            amps=0.6 + 0.8 * (c + rng.uniform(0, 1, spec.components)) / spec.num_classes,
            rates=rng.uniform(0.5, 3.0, spec.components),
        ))
    return profiles


def synth_frames(profile: ClassProfile, T: int, D: int, noise: float, speaker_offset, rng) -> np.ndarray:
    t = np.arange(T)[:, None] / 100.0
    d = np.arange(D)[None, :] / D
    x = np.zeros((T, D))
    for f, ph, a, nu in zip(profile.freqs, profile.phases, profile.amps, profile.rates):
        envelope = 1.0 + 0.5 * np.sin(2 * math.pi * nu * t)
        x += a * envelope * np.sin(2 * math.pi * f * d + ph)
    if noise > 0:
        x += noise * (speaker_offset[None, :] + rng.standard_normal((T, D)))
    return x


def generate_synthetic(spec: SyntheticSpec, out_dir) -> tuple[Manifest, Manifest]:
    """Write a train/dev corpus to ``out_dir``; dev speakers are disjoint from train speakers."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(spec.seed)
    profiles = class_profiles(spec, rng)
    labels = tuple(f"class{c}" for c in range(spec.num_classes))
    vocab = Vocabulary.of_size(spec.vocab_size)
    splits = {"train": [], "dev": []}
    for c, profile in enumerate(profiles):
        speakers = [0.5 * rng.standard_normal(spec.dim) for _ in range(spec.speakers_per_class)]
        for u in range(spec.utts_per_class):
            s = u % spec.speakers_per_class
            T = int(rng.integers(spec.min_frames, spec.max_frames + 1))
            frames = synth_frames(profile, T, spec.dim, spec.noise, speakers[s], rng)
            n_tok = int(rng.integers(spec.transcript_min, spec.transcript_max + 1))
            transcript = tuple(int(i) for i in rng.integers(0, spec.vocab_size, n_tok))
            uid = f"c{c}_s{s}_u{u:03d}"
            rel = f"feats/{uid}.bin"
            write_features(out_dir / rel, frames)
            split = "dev" if s >= spec.speakers_per_class - spec.dev_speakers_per_class else "train"
            splits[split].append(UtteranceRecord(uid, T, spec.dim, c, transcript, rel, None, out_dir))
    write_header(out_dir, labels, vocab, spec.dim)
    for name, recs in splits.items():
        write_manifest(out_dir / f"{name}.jsonl", recs)
    return tuple(Manifest(splits[n], labels, vocab, spec.dim, out_dir / f"{n}.jsonl") for n in ("train", "dev"))


# ------------------------------------------------------------------ batching


@dataclass
class Batch:
    features: np.ndarray  # (B, max_frames, D), zero padded
    lengths: np.ndarray
    labels: np.ndarray
    transcripts: list[tuple[int, ...]]
    ids: list[str]

    def __len__(self) -> int:
        return len(self.ids)

    def utterance(self, i: int) -> np.ndarray:
        return self.features[i, : self.lengths[i]]


def batch_assemble(records, batch_size: int, max_frames: int = 1200, rng=None, cache=None) -> list[Batch]:
    """Shuffle (when ``rng`` is given), group in order, pad or truncate to ``max_frames``.

    ``cache`` is an optional dict id -> frames reused across calls.
    """
    records = list(records)
    if not records:
        raise InputError("batch_assemble needs at least one record")
    if batch_size < 1 or max_frames < 1:
        raise InputError(f"batch_size and max_frames must be >= 1, got {batch_size}, {max_frames}")
    order = np.arange(len(records)) if rng is None else rng.permutation(len(records))
    dims = {r.dim for r in records}
    if len(dims) != 1:
        raise InputError(f"records mix feature dims {sorted(dims)}")
    D = dims.pop()
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = [records[i] for i in order[start:start + batch_size]]
        feats = np.zeros((len(chunk), max_frames, D))
        lengths = np.zeros(len(chunk), dtype=np.int64)
        for j, r in enumerate(chunk):
            if cache is not None and r.id in cache:
                x = cache[r.id]
            else:
                x = r.load()
                if cache is not None:
                    cache[r.id] = x
            n = min(len(x), max_frames)
            feats[j, :n] = x[:n]
            lengths[j] = n
        batches.append(Batch(feats, lengths, np.array([r.label for r in chunk], dtype=np.int64),
                             [tuple(r.transcript) for r in chunk], [r.id for r in chunk]))
    return batches
