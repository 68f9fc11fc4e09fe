"""Tensors, the computation tape and the reverse sweep."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError


class Tensor:
    """A dense float64 array, optionally bound to a node on a :class:`Tape`.

    Constants have ``tape is None``; operations on constants only are evaluated
    eagerly without being recorded.
    """

    __slots__ = ("data", "tape", "node")
    __array_priority__ = 100.0

    def __init__(self, data, tape: Tape | None = None, node: int | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def __repr__(self) -> str:
        tag = "const" if self.tape is None else f"node={self.node}"
        return f"Tensor(shape={self.shape}, {tag})"

    def __len__(self) -> int:
        return len(self.data)

    def __add__(self, other):
        return ops.add(self, other)

    def __radd__(self, other):
        return ops.add(other, self)

    def __sub__(self, other):
        return ops.sub(self, other)

    def __rsub__(self, other):
        return ops.sub(other, self)

    def __mul__(self, other):
        return ops.mul(self, other)

    def __rmul__(self, other):
        return ops.mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division by a Tensor is not a primitive; use mul with a constant")
        return ops.mul(self, 1.0 / float(other))

    def __neg__(self):
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        return ops.matmul(other, self)

    def __getitem__(self, idx):
        return ops.getitem(self, idx)

    @property
    def T(self):
        return ops.transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None):
        return ops.sum(self, axis)

    def mean(self, axis=None):
        return ops.mean(self, axis)


class _Entry:
    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op, inputs, backward):
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of primitive applications.

    Node ids are positions in the record, so every input id precedes its
    consumer by construction. A tape is not thread-safe; use one per thread.
    """

    def __init__(self):
        self._entries: list[_Entry] = []
        self.leaves: dict[int, str] = {}
        self.leaf_shapes: dict[int, tuple] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def op_names(self) -> list[str]:
        return [e.op for e in self._entries]

    def leaf(self, data, name: str | None = None) -> Tensor:
        node = len(self._entries)
        self._entries.append(_Entry("leaf", (), None))
        self.leaves[node] = name if name is not None else f"leaf{node}"
        t = Tensor(data, self, node)
        self.leaf_shapes[node] = t.data.shape
        return t

    def watch(self, params) -> dict[str, Tensor]:
        """Register every array of a name->array mapping as a named leaf."""
        return {name: self.leaf(params[name], name) for name in params}

    def push(self, op: str, data, inputs: tuple, backward) -> Tensor:
        node = len(self._entries)
        self._entries.append(_Entry(op, inputs, backward))
        return Tensor(data, self, node)

    def entry(self, node: int) -> _Entry:
        return self._entries[node]


def backward(tape: Tape, root: Tensor, seed=None) -> dict[str, np.ndarray]:
    """Reverse sweep from a scalar ``root``; returns gradients keyed by leaf name.

    Contributions accumulate by summation in reverse tape order, so repeated
    sweeps over the same tape are bitwise identical. Leaves that the root does
    not depend on get zero gradients.
    """
    if not isinstance(root, Tensor) or root.tape is not tape:
        raise ContractError("backward root must be a Tensor recorded on the given tape")
    if root.data.shape != ():
        raise ContractError(f"backward root must be a scalar, got shape {root.data.shape}")
    grads = node_gradients(tape, root, seed)
    out = {}
    for node, name in tape.leaves.items():
        g = grads[node]
        if g is None:
            g = np.zeros(tape.leaf_shapes[node])
        out[name] = np.array(g, dtype=np.float64)
    return out


def node_gradients(tape: Tape, root: Tensor, seed=None) -> list:
    """Gradient of ``root`` with respect to every node (``None`` where unreachable)."""
    entries = tape._entries
    grads: list = [None] * len(entries)
    grads[root.node] = np.ones(root.data.shape) if seed is None else np.asarray(seed, dtype=np.float64)
    for node in range(root.node, -1, -1):
        g = grads[node]
        if g is None:
            continue
        entry = entries[node]
        if entry.backward is None:
            continue
        parts = entry.backward(g)
        for parent, pg in zip(entry.inputs, parts):
            if parent is None or pg is None:
                continue
            prev = grads[parent]
            grads[parent] = pg if prev is None else prev + pg
    return grads


from . import ops  # noqa: E402  (ops needs Tensor defined)
