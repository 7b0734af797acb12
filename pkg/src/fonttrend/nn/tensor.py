"""Dense tensors with a reverse-mode gradient tape.

Every differentiable operation returns a new :class:`Tensor` that remembers
its parents and a closure that pushes the upstream gradient back to them.
:meth:`Tensor.backward` walks that graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

DTYPE = np.float64

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes are inadmissible for an operation."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (evaluation passes)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A float64 array plus an optional gradient slot.

    ``requires_grad`` marks leaves whose gradient should be kept (model
    weights, or inputs in a gradient check). Interior nodes always receive a
    gradient during :meth:`backward` while the graph is alive.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: Sequence["Tensor"] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = tuple(_parents)
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate ``grad`` on every tensor reachable from this scalar."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar output, got shape {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if not node.requires_grad:
                    # interior node: release memory once consumed
                    node.grad = None

    # minimal arithmetic, enough for scalar test functions and loss glue
    def __add__(self, other) -> "Tensor":
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return mul(self, as_tensor(-1.0))

    def __sub__(self, other) -> "Tensor":
        return add(self, -as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return add(as_tensor(other), -self)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return mul(tensor_sum(self), as_tensor(1.0 / self.data.size))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def wants_grad(t: Tensor) -> bool:
    return t.requires_grad or bool(t._parents)


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Wrap an op result, recording the tape entry only when needed."""
    if _grad_enabled and any(wants_grad(p) for p in parents):
        return Tensor(data, _parents=parents, _backward=backward)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if wants_grad(a):
            a._accumulate(_unbroadcast(g, a.shape))
        if wants_grad(b):
            b._accumulate(_unbroadcast(g, b.shape))

    return make_node(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if wants_grad(a):
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if wants_grad(b):
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return make_node(a.data * b.data, (a, b), backward)


def tensor_sum(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(np.broadcast_to(g, a.shape))

    return make_node(np.asarray(a.data.sum()), (a,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return make_node(a.data.reshape(shape), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along ``axis``; gradient is split back by extent."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat() of an empty sequence")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            if wants_grad(t):
                t._accumulate(piece)

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)
