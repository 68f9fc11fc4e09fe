"""Numerical verification suites shared by the CLI and the test-suite.

Circle-loss cases freeze the self-paced weights at their base-point values
for every probe, which is the function whose gradient the tape computes.

Random cases draw the scale from [1, 8]. At production scales (30, 256) the
softmax saturates and many gradient entries fall below the resolution of a
central difference, roughly ``|f| * 1e-16 / eps``, so the relative error on
those entries measures roundoff rather than the gradient.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.gradcheck import finite_difference_check, tape_gradients
from .ctc import PosteriorGrid, ctc_loss, ctc_loss_bruteforce, required_frames
from .encoder import EncoderConfig, encode_frames, init_encoder, init_integrate, integrate
from .autodiff.params import ParameterStore
from .losses import (
    MarginConfig,
    SimilarityScores,
    arcface_loss,
    circle_loss,
    circle_weights,
    class_similarities,
    cosface_loss,
    softmax_loss,
    unified_pair_loss,
)

GRAD_TOL = 1e-4
CTC_TOL = 1e-10


@dataclass
class GradCase:
    name: str
    f: object
    params: dict


def _embed_case(rng, n=4, e=5, c=4):
    return {"G": rng.standard_normal((n, e)), "W": rng.standard_normal((c, e))}, rng.integers(0, c, n)


def _scale(rng) -> float:
    return float(rng.uniform(1.0, 8.0))


def _margin(rng) -> float:
    return float(rng.uniform(0.0, 0.4))


def loss_cases(seed: int) -> list[GradCase]:
    rng = np.random.default_rng(seed)
    cases = []

    p, y = _embed_case(rng)
    cases.append(GradCase("softmax", lambda q, y=y: softmax_loss(q["G"], y, q["W"]), p))

    p, y = _embed_case(rng)
    cfg = MarginConfig("cosface", _scale(rng), _margin(rng))
    cases.append(GradCase("cosface", lambda q, y=y, cfg=cfg: cosface_loss(q["G"], y, q["W"], cfg), p))

    p, y = _embed_case(rng)
    cfg = MarginConfig("arcface", _scale(rng), _margin(rng))
    cases.append(GradCase("arcface", lambda q, y=y, cfg=cfg: arcface_loss(q["G"], y, q["W"], cfg), p))

    K, L = int(rng.integers(1, 4)), int(rng.integers(1, 6))
    p = {"sp": rng.uniform(-1, 1, K), "sn": rng.uniform(-1, 1, L)}
    gamma, m = _scale(rng), _margin(rng)
    cases.append(GradCase("unified",
                          lambda q, g=gamma, m=m: unified_pair_loss(SimilarityScores(q["sp"], q["sn"]), g, m), p))

    p, y = _embed_case(rng)
    gamma, m = _scale(rng), _margin(rng)
    alphas = circle_weights(class_similarities(p["G"], y, p["W"]), m)

    def circle_f(q, y=y, g=gamma, m=m, alphas=alphas):
        return circle_loss(class_similarities(q["G"], y, q["W"]), g, m, alphas=alphas)

    cases.append(GradCase("circle", circle_f, p))
    return cases


TINY_ENCODER = EncoderConfig(stages=2, channels=(3, 4), hidden=4)

# smallest stack that keeps five pooling stages and trains in about a minute per run
DESK_ENCODER = EncoderConfig(stages=5, channels=(8, 8, 16, 16, 16), hidden=32)


def end_to_end_case(seed: int, cfg: EncoderConfig = TINY_ENCODER, n_utts: int = 3, n_classes: int = 3,
                    margin: float = 0.2, scale: float = 4.0) -> GradCase:
    """Encoder + integration + circle loss over a small batch of random utterances."""
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    init_encoder(store, cfg, rng)
    init_integrate(store, cfg, rng)
    for name in store:
        if name.endswith("bias") or name.endswith(".b"):
            store[name] = 0.1 * rng.standard_normal(store[name].shape)
    store.add("metric.weight", rng.standard_normal((n_classes, cfg.hidden)))
    params = {k: store[k] for k in store}
    utts = [rng.standard_normal((int(rng.integers(6, 14)), int(rng.integers(4, 9)))) for _ in range(n_utts)]
    labels = rng.integers(0, n_classes, n_utts)

    def embed(q):
        return ops.stack([integrate(encode_frames(x, cfg, q, validate=False), q).values for x in utts])

    base = embed(params)
    alphas = circle_weights(class_similarities(base, labels, params["metric.weight"]), margin)

    def f(q):
        return circle_loss(class_similarities(embed(q), labels, q["metric.weight"]), scale, margin, alphas=alphas)

    return GradCase("end_to_end", f, params)


def run_case(case: GradCase, epsilon: float = 1e-5, corrupt: bool = False) -> float:
    grads = None
    if corrupt:
        grads = tape_gradients(case.f, case.params)
        name = max(grads, key=lambda k: np.abs(grads[k]).max())
        g = grads[name]
        g[np.unravel_index(np.argmax(np.abs(g)), g.shape)] *= 2.0
    worst = finite_difference_check(case.f, case.params, epsilon, grads=grads)
    return max(worst.values())


def gradcheck_suite(seeds, include_end_to_end: bool = True, corrupt: bool = False, epsilon: float = 1e-5):
    """Worst relative error per case name over all seeds."""
    worst: dict[str, float] = {}
    for seed in seeds:
        cases = loss_cases(seed)
        if include_end_to_end:
            cases.append(end_to_end_case(seed))
        for case in cases:
            err = run_case(case, epsilon, corrupt=corrupt)
            worst[case.name] = max(worst.get(case.name, 0.0), err)
    return worst


def ctc_oracle_sweep(grids_per_config: int = 100, seed: int = 0, max_frames: int = 6, max_vocab: int = 3,
                     max_len: int = 3) -> dict:
    """Compare the forward-backward loss against exhaustive enumeration on every
    feasible (T', |U|, L) with random grids and random targets."""
    rng = np.random.default_rng(seed)
    worst, n_checked, n_configs = 0.0, 0, 0
    for T, U, L in itertools.product(range(1, max_frames + 1), range(1, max_vocab + 1), range(0, max_len + 1)):
        feasible = [t for t in itertools.product(range(U), repeat=L) if required_frames(t) <= T]
        if not feasible:
            continue
        n_configs += 1
        for _ in range(grids_per_config):
            target = feasible[int(rng.integers(len(feasible)))]
            logits = rng.standard_normal((T, U + 1)) * 2.0
            probs = np.exp(logits - logits.max(axis=1, keepdims=True))
            probs /= probs.sum(axis=1, keepdims=True)
            grid = PosteriorGrid(ops.as_tensor(np.log(probs)))
            fast = ctc_loss(grid, target).item()
            slow = ctc_loss_bruteforce(probs, target)
            worst = max(worst, abs(fast - slow))
            n_checked += 1
    return {"max_abs_diff": worst, "instances": n_checked, "configs": n_configs}
