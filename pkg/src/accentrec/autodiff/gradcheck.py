"""Central finite-difference gradient checking."""

from __future__ import annotations

from collections.abc import Callable, Mapping

import numpy as np

from ..errors import ContractError, EvaluationError
from .tensor import Tape, Tensor, backward


def relative_error(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def tape_gradients(f: Callable, params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    tape = Tape()
    leaves = tape.watch(params)
    out = f(leaves)
    return backward(tape, out)


def numerical_gradients(f: Callable, params: Mapping[str, np.ndarray], epsilon: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences ``(f(θ+ε) - f(θ-ε)) / 2ε`` for every entry of every parameter."""
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def probe():
        value = f({k: Tensor(v) for k, v in work.items()})
        value = float(value.data) if isinstance(value, Tensor) else float(value)
        if not np.isfinite(value):
            raise EvaluationError(f"function returned non-finite value {value!r} at a probe point")
        return value

    out = {}
    for name, arr in work.items():
        grad = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = probe()
            flat[i] = orig - epsilon
            down = probe()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * epsilon)
        out[name] = grad
    return out


def finite_difference_check(
    f: Callable,
    params: Mapping[str, np.ndarray],
    epsilon: float = 1e-5,
    grads: Mapping[str, np.ndarray] | None = None,
    detail: bool = False,
):
    """Compare tape gradients of a scalar function against central differences.

    ``f`` takes a name->Tensor mapping and returns a scalar Tensor. It is run
    once on a tape for the analytic gradient (unless ``grads`` is supplied,
    which lets a caller inject a corrupted gradient as a negative control) and
    twice per parameter entry on constants. Returns the max relative error per
    parameter; with ``detail=True`` also the elementwise error arrays.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ContractError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    if grads is None:
        grads = tape_gradients(f, params)
    numeric = numerical_gradients(f, params, epsilon)
    errors = {name: relative_error(grads[name], numeric[name]) for name in params}
    worst = {name: float(e.max()) if e.size else 0.0 for name, e in errors.items()}
    return (worst, errors) if detail else worst
