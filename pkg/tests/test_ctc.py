import math

import numpy as np
import pytest

from accentrec import _kernels
from accentrec.autodiff import ops
from accentrec.autodiff.gradcheck import finite_difference_check
from accentrec.autodiff.params import ParameterStore
from accentrec.checks import ctc_oracle_sweep
from accentrec.ctc import (
    PosteriorGrid,
    Vocabulary,
    asr_head,
    asr_shapes,
    collapse,
    ctc_loss,
    ctc_loss_bruteforce,
    greedy_decode,
    init_asr,
    required_frames,
)
from accentrec.errors import ConfigurationError, InfeasibleTargetError, SizeError


def random_probs(rng, T, width):
    z = rng.standard_normal((T, width)) * 2.0
    p = np.exp(z - z.max(axis=1, keepdims=True))
    return p / p.sum(axis=1, keepdims=True)


def onehot_path(path, width, hi=0.9):
    lo = (1.0 - hi) / (width - 1)
    p = np.full((len(path), width), lo)
    p[np.arange(len(path)), path] = hi
    return np.log(p)


class TestVocabulary:
    def test_blank_is_last(self):
        v = Vocabulary(("a", "b"))
        assert v.blank == 2 and v.width == 3
        assert v.decode(v.encode("ba")) == ["b", "a"]

    def test_reserved_blank_marker(self):
        with pytest.raises(ConfigurationError):
            Vocabulary(("a", "<b>"))


class TestCtcLossExamples:
    def test_two_frames_single_token(self):
        grid = np.array([[0.6, 0.4], [0.6, 0.4]])
        assert ctc_loss(grid, (0,)).item() == pytest.approx(-math.log(0.84), abs=1e-12)
        assert ctc_loss(grid, (0,)).item() == pytest.approx(0.17435, abs=1e-5)

    def test_single_frame(self):
        assert ctc_loss(np.array([[0.7, 0.3]]), (0,)).item() == pytest.approx(-math.log(0.7), abs=1e-12)

    def test_repeat_needs_blank(self):
        with pytest.raises(InfeasibleTargetError):
            ctc_loss(np.full((2, 2), 0.5), (0, 0))
        assert required_frames((0, 0)) == 3
        assert required_frames((0, 1, 1, 1)) == 6

    def test_out_of_range_token(self):
        with pytest.raises(ConfigurationError):
            ctc_loss(np.full((3, 2), 0.5), (1,))

    def test_long_sequence_is_finite(self):
        rng = np.random.default_rng(0)
        probs = random_probs(rng, 500, 17)
        loss = ctc_loss(probs, rng.integers(0, 16, 120)).item()
        assert np.isfinite(loss) and loss > 0


class TestBruteForce:
    def test_uniform_two_frames(self):
        assert ctc_loss_bruteforce(np.full((2, 2), 0.5), (0,)) == pytest.approx(-math.log(0.75), abs=1e-12)

    def test_empty_target(self):
        probs = random_probs(np.random.default_rng(1), 4, 3)
        expected = -np.log(probs[:, 2]).sum()
        assert ctc_loss_bruteforce(probs, ()) == pytest.approx(expected, abs=1e-12)
        assert ctc_loss(probs, ()).item() == pytest.approx(expected, abs=1e-12)

    def test_size_guard(self):
        with pytest.raises(SizeError):
            ctc_loss_bruteforce(np.full((20, 5), 0.2), (0,))

    def test_collapse(self):
        assert collapse((2, 0, 0, 2, 1, 1), blank=2) == (0, 1)
        assert collapse((0, 2, 0), blank=2) == (0, 0)

    def test_small_sweep(self):
        res = ctc_oracle_sweep(grids_per_config=10, seed=3)
        assert res["max_abs_diff"] <= 1e-10
        assert res["configs"] > 50


class TestCtcGradient:
    @pytest.mark.parametrize("seed", range(10))
    def test_pre_softmax_logits(self, seed):
        rng = np.random.default_rng(seed)
        T, V = int(rng.integers(2, 9)), int(rng.integers(1, 5))
        target = tuple(int(t) for t in rng.integers(0, V, int(rng.integers(0, (T + 1) // 2 + 1))))
        if required_frames(target) > T:
            target = target[:1]
        p = {"z": rng.standard_normal((T, V + 1))}
        f = lambda q: ctc_loss(PosteriorGrid(ops.log_softmax(q["z"])), target)
        assert max(finite_difference_check(f, p).values()) <= 1e-4

    def test_permutation_of_non_target_tokens(self):
        rng = np.random.default_rng(4)
        probs = random_probs(rng, 7, 6)  # tokens 0..4, blank 5
        target = (0, 1, 0)
        perm = np.array([0, 1, 4, 2, 3, 5])  # shuffles tokens 2, 3, 4 only
        a = ctc_loss(probs, target).item()
        b = ctc_loss(probs[:, perm], target).item()
        assert a == pytest.approx(b, abs=1e-13)

    def test_relabel_target_tokens_with_columns(self):
        rng = np.random.default_rng(5)
        probs = random_probs(rng, 6, 4)
        perm = np.array([2, 0, 1, 3])  # new column j holds old column perm[j]
        inverse = np.argsort(perm)
        target = (0, 2)
        a = ctc_loss(probs, target).item()
        b = ctc_loss(probs[:, perm], tuple(int(inverse[t]) for t in target)).item()
        assert a == pytest.approx(b, abs=1e-13)


@pytest.mark.skipif(_kernels.compiled_backend is None, reason="extension not built")
class TestBackends:
    @pytest.mark.parametrize("seed", range(20))
    def test_ctc_backends_agree(self, seed):
        rng = np.random.default_rng(seed)
        T, V = int(rng.integers(1, 60)), int(rng.integers(1, 10))
        labels = rng.integers(0, V, int(rng.integers(0, (T + 1) // 2 + 1))).astype(np.int64)
        if required_frames(labels) > T:
            labels = labels[:0]
        logp = np.log(random_probs(rng, T, V + 1))
        nc, gc = _kernels.compiled_backend.ctc_forward_backward(logp, labels, V)
        npy, gp = _kernels.python_backend.ctc_forward_backward(logp, labels, V)
        assert abs(nc - npy) <= 1e-10 * max(1.0, abs(nc))
        np.testing.assert_allclose(gc, gp, rtol=0, atol=1e-10)

    @pytest.mark.parametrize("seed", range(10))
    def test_maxpool_backends_bitwise(self, seed):
        rng = np.random.default_rng(seed)
        T, D, C = (int(s) for s in rng.integers(1, 30, 3))
        x = np.round(rng.standard_normal((T, D, C)), 1)  # rounding creates ties
        oc, ic = _kernels.compiled_backend.maxpool2x2_forward(x)
        op, ip = _kernels.python_backend.maxpool2x2_forward(x)
        assert oc.tobytes() == op.tobytes() and ic.tobytes() == ip.tobytes()
        g = rng.standard_normal(oc.shape)
        assert (_kernels.compiled_backend.maxpool2x2_backward(g, ic, T, D).tobytes()
                == _kernels.python_backend.maxpool2x2_backward(g, ip, T, D).tobytes())


class TestGreedyDecode:
    def test_examples(self):
        v = Vocabulary(("a",))
        b = v.blank
        assert v.decode(greedy_decode(onehot_path([b, 0, 0, b], 2), v)) == ["a"]
        assert v.decode(greedy_decode(onehot_path([0, b, 0], 2), v)) == ["a", "a"]
        assert greedy_decode(onehot_path([b, b, b], 2), v) == ()


class TestAsrHead:
    def _params(self, hidden, vocab, zero=False):
        store = ParameterStore()
        init_asr(store, hidden, vocab, np.random.default_rng(0))
        if zero:
            return {k: np.zeros(s) for k, s in asr_shapes(hidden, vocab).items()}
        return store

    def test_rows_are_distributions(self):
        v = Vocabulary.of_size(5)
        grid = asr_head(np.random.default_rng(1).standard_normal((9, 8)), v, self._params(8, 5))
        assert grid.width == 6 and grid.frames == 9
        np.testing.assert_allclose(grid.probs.sum(axis=1), 1.0, atol=1e-9)

    def test_zero_weights_uniform(self):
        v = Vocabulary.of_size(3)
        grid = asr_head(np.ones((4, 6)), v, self._params(6, 3, zero=True))
        np.testing.assert_allclose(grid.probs, 0.25, atol=1e-15)

    def test_width_mismatch(self):
        with pytest.raises(ConfigurationError):
            asr_head(np.ones((4, 6)), Vocabulary.of_size(4), self._params(6, 3))

    def test_empty_vocabulary(self):
        with pytest.raises(ConfigurationError):
            asr_head(np.ones((4, 6)), Vocabulary(()), self._params(6, 3))


class TestBackendSelection:
    def _backend(self, value):
        import os
        import subprocess
        import sys

        env = {**os.environ, "ACCENTREC_PURE_PYTHON": value}
        code = "from accentrec import _kernels; print(_kernels.BACKEND)"
        return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True).stdout.strip()

    def test_environment_forces_fallback(self):
        assert self._backend("1") == "python"

    def test_default_prefers_extension(self):
        import importlib.util

        built = importlib.util.find_spec("accentrec._kernels._ckernels") is not None
        expected = "compiled" if built else "python"
        assert self._backend("0") == expected
