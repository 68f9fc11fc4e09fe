import math

import numpy as np
import pytest

from accentrec.autodiff import ops
from accentrec.autodiff.params import ParameterStore
from accentrec.autodiff.tensor import Tape, backward
from accentrec.checkpoint import AdamState, Checkpoint, MAGIC, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from accentrec.ctc import Vocabulary
from accentrec.data import SyntheticSpec, UtteranceRecord, generate_synthetic
from accentrec.encoder import EncoderConfig
from accentrec.errors import CheckpointError, ContractError, DataError, NonFiniteError
from accentrec.losses import MarginConfig
from accentrec.model import ModelConfig, init_params
from accentrec.trainer import (
    METRICS_HEADER,
    MtlWeights,
    PlateauSchedule,
    TrainConfig,
    adam_step,
    evaluate,
    mtl_loss,
    train,
    warm_start,
    write_metrics,
)

SMALL = SyntheticSpec(num_classes=3, utts_per_class=8, speakers_per_class=4, dev_speakers_per_class=1,
                      min_frames=40, max_frames=80, dim=8)
TINY = EncoderConfig(stages=3, channels=(2, 3, 4), hidden=4)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return generate_synthetic(SMALL, tmp_path_factory.mktemp("corpus"))


def model_for(train_set, bottleneck=0):
    return ModelConfig(TINY, train_set.vocabulary, train_set.labels, bottleneck)


def quick(**kw):
    base = dict(max_epochs=3, batch_size=8, loss=MarginConfig("circle", 4.0, 0.2))
    base.update(kw)
    return TrainConfig(**base)


class TestMtlLoss:
    def test_default_weights(self):
        assert mtl_loss(2.0, 1.0, 3.0, MtlWeights(0.4, 0.01)).item() == 1.43

    def test_boundary_weights(self):
        assert mtl_loss(2.0, 1.0, 3.0, MtlWeights(1.0, 0.0)).item() == 2.0
        assert mtl_loss(2.0, 1.0, 3.0, MtlWeights(0.0, 0.0)).item() == 1.0

    @pytest.mark.parametrize("branch", ["ctc", "disc", "clf"])
    def test_nan_guard_names_branch(self, branch):
        vals = {"ctc": 1.0, "disc": 1.0, "clf": 1.0, branch: float("nan")}
        with pytest.raises(NonFiniteError, match=branch):
            mtl_loss(vals["ctc"], vals["disc"], vals["clf"], MtlWeights())

    def test_invalid_weights(self):
        with pytest.raises(ContractError):
            MtlWeights(1.5, 0.0)

    def test_gradient_is_weighted_sum(self):
        rng = np.random.default_rng(0)
        x0 = rng.standard_normal(4)
        branches = [lambda x: ops.sum(ops.tanh(x)), lambda x: ops.sum(x * x), lambda x: ops.logsumexp(x)]

        def grad(f):
            tape = Tape()
            x = tape.leaf(x0, "x")
            return backward(tape, f(x))["x"]

        w = MtlWeights(0.4, 0.01)
        total = grad(lambda x: mtl_loss(*(b(x) for b in branches), w))
        parts = [grad(b) for b in branches]
        np.testing.assert_allclose(total, 0.4 * parts[0] + 0.6 * parts[1] + 0.01 * parts[2], rtol=1e-14)


class TestAdam:
    def test_first_step_magnitude(self):
        p = ParameterStore({"w": np.zeros(5)})
        g = {"w": np.array([1e-3, -2.0, 5.0, 1e4, -7e-6])}
        adam_step(p, g, AdamState(), 0.01)
        np.testing.assert_array_equal(np.sign(p["w"]), -np.sign(g["w"]))
        # the step is lr * |g| / (|g| + eps), so it only reaches lr once |g| >> eps
        big = np.abs(g["w"]) >= 1e-3
        np.testing.assert_allclose(np.abs(p["w"][big]), 0.01, atol=1e-6)
        assert np.abs(p["w"][4]) == pytest.approx(0.01 * 7e-6 / (7e-6 + 1e-8), rel=1e-6)

    def test_zero_gradient(self):
        p = ParameterStore({"w": np.arange(3.0)})
        adam_step(p, {"w": np.zeros(3)}, AdamState(), 0.01)
        np.testing.assert_array_equal(p["w"], np.arange(3.0))

    def test_two_steps_by_hand(self):
        p = ParameterStore({"w": np.array([1.0])})
        state = AdamState()
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        g1, g2 = 0.5, -0.25
        adam_step(p, {"w": np.array([g1])}, state, lr)
        adam_step(p, {"w": np.array([g2])}, state, lr)
        m1, v1 = (1 - b1) * g1, (1 - b2) * g1 ** 2
        w1 = 1.0 - lr * (m1 / (1 - b1)) / (math.sqrt(v1 / (1 - b2)) + eps)
        m2, v2 = b1 * m1 + (1 - b1) * g2, b2 * v1 + (1 - b2) * g2 ** 2
        w2 = w1 - lr * (m2 / (1 - b1 ** 2)) / (math.sqrt(v2 / (1 - b2 ** 2)) + eps)
        assert p["w"][0] == pytest.approx(w2, abs=1e-12)
        assert state.step == 2

    def test_missing_gradient(self):
        with pytest.raises(ContractError):
            adam_step(ParameterStore({"w": np.zeros(1)}), {}, AdamState(), 0.1)


class TestSchedule:
    def test_flat_monitor_decays_once(self):
        s = PlateauSchedule(0.01, patience=2, decay=0.3)
        actions = [s.step(m) for m in (0.5, 0.5, 0.5)]
        assert actions == ["improved", "wait", "decay"]
        assert s.lr == pytest.approx(0.003, abs=1e-15)

    def test_second_window_stops(self):
        s = PlateauSchedule(0.01, patience=2, decay=0.3)
        actions = [s.step(m) for m in (0.5, 0.4, 0.4, 0.4, 0.4)]
        assert actions == ["improved", "wait", "decay", "wait", "stop"]

    def test_improvement_resets_wait(self):
        s = PlateauSchedule(0.01, patience=2)
        assert [s.step(m) for m in (0.1, 0.1, 0.2, 0.2, 0.3)] == ["improved", "wait", "improved", "wait", "improved"]
        assert s.lr == 0.01

    def test_config_validation(self):
        with pytest.raises(ContractError):
            TrainConfig(decay=1.5)
        with pytest.raises(ContractError):
            TrainConfig(mode="other")


class TestTrain:
    def test_deterministic_checkpoints(self, corpus):
        train_set, dev_set = corpus
        a, ma = train(train_set, dev_set, model_for(train_set), quick())
        b, mb = train(train_set, dev_set, model_for(train_set), quick())
        assert to_bytes(a) == to_bytes(b)
        assert [m.csv() for m in ma] == [m.csv() for m in mb]

    def test_metrics_and_lr(self, corpus, tmp_path):
        train_set, dev_set = corpus
        ckpt, metrics = train(train_set, dev_set, model_for(train_set), quick(max_epochs=6, patience=1))
        lrs = [m.lr for m in metrics]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))
        write_metrics(tmp_path / "m.csv", metrics)
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0] == METRICS_HEADER and len(lines) == len(metrics) + 1
        assert all(len(line.split(",")) == 8 for line in lines)
        assert ckpt.metadata["epoch"] <= len(metrics)

    def test_training_loss_decreases(self, corpus):
        train_set, dev_set = corpus
        _, metrics = train(train_set, dev_set, model_for(train_set), quick(max_epochs=5, patience=10))
        assert metrics[-1].train_loss < metrics[0].train_loss

    def test_infeasible_targets_are_skipped(self, corpus):
        train_set, dev_set = corpus
        # 40-80 frames pool to 5-10 descriptors; transcripts run up to 10 tokens
        _, metrics = train(train_set, dev_set, model_for(train_set), quick(max_epochs=1))
        assert metrics[0].ctc_skipped > 0

    def test_ar_only_matches_joint_at_zero_alpha(self, corpus):
        train_set, dev_set = corpus
        w = MtlWeights(0.0, 0.01)
        a, _ = train(train_set, dev_set, model_for(train_set), quick(weights=w, mode="joint"))
        b, _ = train(train_set, dev_set, model_for(train_set), quick(weights=w, mode="ar-only"))
        for name in a.params.names():
            assert a.params[name].tobytes() == b.params[name].tobytes(), name

    def test_ctc_pretrain_then_warm_start(self, corpus):
        train_set, dev_set = corpus
        pre, metrics = train(train_set, dev_set, model_for(train_set), quick(mode="ctc-pretrain", max_epochs=2))
        assert pre.metadata["monitor"] < 0  # negative dev CTC loss
        assert all(m.disc_loss == 0.0 for m in metrics)
        fresh = init_params(model_for(train_set, bottleneck=2), 7)
        copied = warm_start(fresh, pre)
        assert "encoder.proj.weight" in copied and "bottleneck.weight" not in copied
        np.testing.assert_array_equal(fresh["asr.out.weight"], pre.params["asr.out.weight"])

    def test_joint_needs_transcripts(self, corpus):
        train_set, dev_set = corpus
        bare = type(train_set)([UtteranceRecord("x", 50, 8, 0, (), inline=np.ones((50, 8)))],
                               train_set.labels, train_set.vocabulary, 8)
        with pytest.raises(DataError, match="'x'"):
            train(bare, dev_set, model_for(train_set), quick())
        train(bare, dev_set, model_for(train_set), quick(mode="ar-only", max_epochs=1))

    @pytest.mark.parametrize("kind", ["softmax", "cosface", "arcface"])
    def test_other_losses_run(self, corpus, kind):
        train_set, dev_set = corpus
        ckpt, metrics = train(train_set, dev_set, model_for(train_set),
                              quick(max_epochs=1, loss=MarginConfig(kind)))
        assert np.isfinite(metrics[0].train_loss) and ckpt is not None


class TestEvaluate:
    def test_chance_level_on_balanced_classes(self):
        rng = np.random.default_rng(0)
        labels = tuple(f"c{i}" for i in range(8))
        model = ModelConfig(EncoderConfig(stages=2, channels=(2, 2), hidden=4), Vocabulary.of_size(3), labels)
        ckpt = Checkpoint(model, init_params(model, 3))
        recs = [UtteranceRecord(f"u{i}", 20, 6, i % 8, (), inline=rng.standard_normal((20, 6))) for i in range(1000)]
        res = evaluate(ckpt, recs)
        assert abs(res.accuracy - 1 / 8) <= 0.05
        assert res.confusion.sum(axis=1).tolist() == [125] * 8

    def test_perfect_predictions(self, corpus):
        train_set, _ = corpus
        model = model_for(train_set)
        params = init_params(model, 0)
        params["classifier.bias"] = np.array([1e6, 0.0, 0.0])
        recs = [r for r in train_set if r.label == 0]
        res = evaluate(Checkpoint(model, params), recs)
        assert res.accuracy == 1.0 and res.confusion[0, 0] == len(recs)

    def test_label_outside_checkpoint(self, corpus):
        train_set, _ = corpus
        model = model_for(train_set)
        bad = [UtteranceRecord("far", 20, 8, 7, (), inline=np.ones((20, 8)))]
        with pytest.raises(DataError, match="far"):
            evaluate(Checkpoint(model, init_params(model, 0)), bad)


class TestCheckpoint:
    def _ckpt(self, bottleneck=0):
        model = ModelConfig(TINY, Vocabulary.of_size(5), ("a", "b", "c"), bottleneck)
        params = init_params(model, 1)
        state = AdamState({k: np.ones_like(v) for k, v in params.items()},
                          {k: np.full_like(v, 2.0) for k, v in params.items()}, step=3)
        return Checkpoint(model, params, state, {"epoch": 2})

    def test_roundtrip(self, tmp_path):
        ckpt = self._ckpt(bottleneck=3)
        path = save_checkpoint(ckpt, tmp_path / "m.ckpt")
        back = load_checkpoint(path)
        assert back.model == ckpt.model and back.metadata == {"epoch": 2}
        for name in ckpt.params.names():
            np.testing.assert_array_equal(back.params[name], ckpt.params[name])
        assert back.optimizer.step == 3
        assert to_bytes(back) == to_bytes(ckpt)

    def test_layout_prefix(self):
        raw = to_bytes(self._ckpt())
        assert raw[:8] == MAGIC and int.from_bytes(raw[8:12], "little") == 1

    def test_corruptions(self):
        raw = to_bytes(self._ckpt())
        with pytest.raises(CheckpointError):
            from_bytes(b"NOTACKPT" + raw[8:])
        with pytest.raises(CheckpointError):
            from_bytes(raw[:-16])
        with pytest.raises(CheckpointError):
            from_bytes(raw[:10])
        with pytest.raises(CheckpointError):
            load_checkpoint("/nonexistent/model.ckpt")

    def test_shape_mismatch(self):
        ckpt = self._ckpt()
        wrong = ModelConfig(EncoderConfig(stages=3, channels=(2, 3, 4), hidden=6), ckpt.model.vocabulary,
                            ckpt.model.labels)
        with pytest.raises(CheckpointError):
            from_bytes(to_bytes(Checkpoint(wrong, ckpt.params)))
