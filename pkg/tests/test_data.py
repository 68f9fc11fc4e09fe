import json

import numpy as np
import pytest

from accentrec.ctc import Vocabulary
from accentrec.data import (
    SyntheticSpec,
    UtteranceRecord,
    batch_assemble,
    generate_synthetic,
    load_manifest,
    read_features,
    write_features,
    write_header,
    write_manifest,
)
from accentrec.encoder import descriptor_count
from accentrec.errors import (
    DataError,
    InputError,
    LabelRangeError,
    MalformedRecordError,
    ManifestNotFoundError,
    TokenRangeError,
)

SMALL = SyntheticSpec(num_classes=3, utts_per_class=8, speakers_per_class=4, dev_speakers_per_class=1,
                      min_frames=40, max_frames=80, dim=8)


def corpus_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def make_dir(tmp_path, records, labels=("a", "b"), vocab=3):
    write_header(tmp_path, labels, Vocabulary.of_size(vocab), 2)
    path = tmp_path / "split.jsonl"
    write_manifest(path, records)
    return path


def inline_record(uid, label=0, T=3, transcript=(0, 1)):
    return UtteranceRecord(uid, T, 2, label, transcript, inline=np.arange(T * 2.0).reshape(T, 2))


class TestSynthetic:
    def test_byte_identical_regeneration(self, tmp_path):
        generate_synthetic(SMALL, tmp_path / "a")
        generate_synthetic(SMALL, tmp_path / "b")
        assert corpus_bytes(tmp_path / "a") == corpus_bytes(tmp_path / "b")

    def test_noiseless_same_class_same_length_identical(self, tmp_path):
        spec = SyntheticSpec(num_classes=2, utts_per_class=4, speakers_per_class=2, dev_speakers_per_class=1,
                             min_frames=50, max_frames=50, dim=6, noise=0.0)
        train, dev = generate_synthetic(spec, tmp_path)
        by_class = {}
        for r in list(train) + list(dev):
            by_class.setdefault(r.label, []).append(r.load())
        for xs in by_class.values():
            for x in xs[1:]:
                np.testing.assert_array_equal(x, xs[0])
        assert not np.array_equal(by_class[0][0], by_class[1][0])

    def test_default_corpus_linear_probe(self, tmp_path):
        train, dev = generate_synthetic(SyntheticSpec(), tmp_path)

        def pooled(split):
            X = np.stack([r.load().mean(axis=0) for r in split])
            return np.hstack([X, np.ones((len(X), 1))]), np.array([r.label for r in split])

        Xtr, ytr = pooled(train)
        Xdv, ydv = pooled(dev)
        W, *_ = np.linalg.lstsq(Xtr, np.eye(4)[ytr], rcond=None)
        assert np.mean(np.argmax(Xdv @ W, axis=1) == ydv) >= 0.9

    def test_balance_and_disjoint_splits(self, tmp_path):
        spec = SyntheticSpec()
        train, dev = generate_synthetic(spec, tmp_path)
        counts = train.class_counts() + dev.class_counts()
        assert counts.tolist() == [spec.utts_per_class] * spec.num_classes
        assert not {r.id for r in train} & {r.id for r in dev}
        speakers = lambda split: {r.id.split("_u")[0] for r in split}
        assert not speakers(train) & speakers(dev)

    def test_transcripts_in_range(self, tmp_path):
        train, _ = generate_synthetic(SMALL, tmp_path)
        for r in train:
            assert SMALL.transcript_min <= len(r.transcript) <= SMALL.transcript_max
            assert all(0 <= t < SMALL.vocab_size for t in r.transcript)

    def test_invalid_spec(self):
        with pytest.raises(InputError):
            SyntheticSpec(noise=-1.0)
        with pytest.raises(InputError):
            SyntheticSpec(dev_speakers_per_class=6)


class TestFiles:
    def test_feature_roundtrip(self, tmp_path):
        x = np.random.default_rng(0).standard_normal((7, 3))
        write_features(tmp_path / "f.bin", x)
        raw = (tmp_path / "f.bin").read_bytes()
        assert raw[:8] == (7).to_bytes(4, "little") + (3).to_bytes(4, "little")
        np.testing.assert_array_equal(read_features(tmp_path / "f.bin"), x)

    def test_truncated_feature_file(self, tmp_path):
        write_features(tmp_path / "f.bin", np.ones((4, 2)))
        (tmp_path / "f.bin").write_bytes((tmp_path / "f.bin").read_bytes()[:-8])
        with pytest.raises(DataError):
            read_features(tmp_path / "f.bin")

    def test_manifest_roundtrip(self, tmp_path):
        train, dev = generate_synthetic(SMALL, tmp_path)
        loaded = load_manifest(tmp_path / "train.jsonl")
        assert loaded.records == train.records
        assert loaded.labels == train.labels and loaded.vocabulary == train.vocabulary
        np.testing.assert_array_equal(loaded[0].load(), train[0].load())

    def test_inline_roundtrip(self, tmp_path):
        recs = [inline_record("u1"), inline_record("u2", label=1, T=4, transcript=())]
        assert load_manifest(make_dir(tmp_path, recs)).records == recs

    def test_empty_manifest(self, tmp_path):
        assert len(load_manifest(make_dir(tmp_path, []))) == 0

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestNotFoundError):
            load_manifest(tmp_path / "nope.jsonl")

    def test_label_out_of_range_names_record(self, tmp_path):
        path = make_dir(tmp_path, [inline_record("good"), inline_record("bad_one", label=9)],
                        labels=tuple(f"c{i}" for i in range(8)))
        with pytest.raises(LabelRangeError, match="bad_one"):
            load_manifest(path)

    def test_token_out_of_range(self, tmp_path):
        with pytest.raises(TokenRangeError, match="u9"):
            load_manifest(make_dir(tmp_path, [inline_record("u9", transcript=(5,))]))

    def test_malformed_lines(self, tmp_path):
        path = make_dir(tmp_path, [inline_record("u1")])
        with open(path, "a") as f:
            f.write("{not json\n")
        with pytest.raises(MalformedRecordError, match="line 2"):
            load_manifest(path)
        path.write_text(json.dumps({"id": "x", "frames": 2, "dim": 2, "label": 0}) + "\n")
        with pytest.raises(MalformedRecordError, match="'x'"):
            load_manifest(path)

    def test_duplicate_ids(self, tmp_path):
        with pytest.raises(MalformedRecordError, match="duplicate"):
            load_manifest(make_dir(tmp_path, [inline_record("u1"), inline_record("u1")]))


class TestBatching:
    def _rec(self, uid, T, D=4):
        x = np.random.default_rng(T).standard_normal((T, D)) + 1.0
        return UtteranceRecord(uid, T, D, 0, (), inline=x)

    def test_pad(self):
        b = batch_assemble([self._rec("a", 700)], 4, 1200)[0]
        assert b.features.shape == (1, 1200, 4) and b.lengths[0] == 700
        assert not b.features[0, 700:].any()
        np.testing.assert_array_equal(b.utterance(0), self._rec("a", 700).load())

    def test_truncate(self):
        b = batch_assemble([self._rec("a", 1500)], 4, 1200)[0]
        assert b.lengths[0] == 1200
        np.testing.assert_array_equal(b.utterance(0), self._rec("a", 1500).load()[:1200])

    def test_grouping_and_shuffle(self):
        recs = [self._rec(f"u{i}", 10 + i) for i in range(10)]
        batches = batch_assemble(recs, 4, 50)
        assert [len(b) for b in batches] == [4, 4, 2]
        shuffled = batch_assemble(recs, 4, 50, rng=np.random.default_rng(0))
        ids = [i for b in shuffled for i in b.ids]
        assert sorted(ids) == sorted(r.id for r in recs) and ids != [r.id for r in recs]

    def test_descriptor_count_from_valid_length(self):
        b = batch_assemble([self._rec("a", 700)], 1, 1200)[0]
        assert descriptor_count(*b.utterance(0).shape) == descriptor_count(700, 4)

    def test_invalid(self):
        with pytest.raises(InputError):
            batch_assemble([], 4)
        with pytest.raises(InputError):
            batch_assemble([self._rec("a", 5), self._rec("b", 5, D=3)], 4)
