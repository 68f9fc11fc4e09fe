"""Minimal reverse-mode differentiation over float64 numpy arrays."""

from . import ops
from .gradcheck import finite_difference_check, numerical_gradients, relative_error, tape_gradients
from .params import ParameterStore
from .tensor import Tape, Tensor, backward, node_gradients

__all__ = [
    "ops",
    "Tape",
    "Tensor",
    "backward",
    "node_gradients",
    "ParameterStore",
    "finite_difference_check",
    "numerical_gradients",
    "relative_error",
    "tape_gradients",
]
