"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operations the folding autoencoder needs. Non-smooth selections
(max pooling, the directed-mean maximum in the loss) route gradient to
the argmax/argmin entry, first index on ties.
"""

from __future__ import annotations

import contextlib

import numpy as np


class NumericError(ArithmeticError):
    pass


class BranchTape:
    """Records the branch every piecewise operation takes (ReLU masks,
    argmax indices, scalar-max picks) during a first forward pass and
    replays those exact branches on later passes.

    A finite-difference probe of a piecewise function can cross a kink
    between the two evaluation points, in which case the difference
    quotient belongs to no single branch and disagrees with the analytic
    subgradient. Replaying the recorded branches keeps every probe on
    the smooth piece the gradient was computed for.
    """

    __slots__ = ("_entries", "_cursor")

    def __init__(self):
        self._entries: list = []
        self._cursor = 0

    def _take(self, fresh):
        if self._cursor < len(self._entries):
            value = self._entries[self._cursor]
        else:
            self._entries.append(fresh)
            value = fresh
        self._cursor += 1
        return value


_TAPE: BranchTape | None = None


@contextlib.contextmanager
def frozen_branches(tape: BranchTape):
    """Route piecewise selections through `tape` for the duration of the
    block. The first block records; later blocks replay."""
    global _TAPE
    prev = _TAPE
    _TAPE = tape
    tape._cursor = 0
    try:
        yield tape
    finally:
        _TAPE = prev


def branch_value(fresh):
    """A data-dependent selection made outside the op set (for example a
    nearest-neighbor pairing). Recorded and replayed like any other
    branch when a tape is active."""
    if _TAPE is None:
        return fresh
    return _TAPE._take(fresh)


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar root")
        order = []
        seen = set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            order.append(node)

        visit(self)
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def item(self) -> float:
        return float(self.data)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data @ b.data, (a, b))

    def backward():
        a.grad += out.grad @ b.data.T
        b.grad += a.data.T @ out.grad

    out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, (a, b))

    def backward():
        a.grad += _unbroadcast(out.grad, a.data.shape)
        b.grad += _unbroadcast(out.grad, b.data.shape)

    out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data, (a, b))

    def backward():
        a.grad += _unbroadcast(out.grad, a.data.shape)
        b.grad -= _unbroadcast(out.grad, b.data.shape)

    out._backward = backward
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def relu(a: Tensor) -> Tensor:
    mask = branch_value(a.data > 0)
    out = Tensor(np.where(mask, a.data, 0.0), (a,))

    def backward():
        a.grad += out.grad * mask

    out._backward = backward
    return out


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data * a.data, (a,))

    def backward():
        a.grad += 2.0 * a.data * out.grad

    out._backward = backward
    return out


def sqrt(a: Tensor) -> Tensor:
    root = np.sqrt(a.data)
    out = Tensor(root, (a,))

    def backward():
        a.grad += out.grad / (2.0 * root)

    out._backward = backward
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), (a,))

    def backward():
        a.grad += out.grad.reshape(a.data.shape)

    out._backward = backward
    return out


def take_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of a 2D tensor; `indices` may be any shape, output is
    indices.shape + (columns,)."""
    out = Tensor(a.data[indices], (a,))

    def backward():
        np.add.at(a.grad, indices, out.grad)

    out._backward = backward
    return out


def max_along(a: Tensor, axis: int) -> Tensor:
    """Max over one axis; gradient to the first argmax."""
    idx = branch_value(np.argmax(a.data, axis=axis))
    out = Tensor(np.take_along_axis(a.data, np.expand_dims(idx, axis), axis).squeeze(axis), (a,))

    def backward():
        expanded = np.zeros_like(a.data)
        np.put_along_axis(
            expanded, np.expand_dims(idx, axis), np.expand_dims(out.grad, axis), axis
        )
        a.grad += expanded

    out._backward = backward
    return out


def sum_along(a: Tensor, axis: int) -> Tensor:
    out = Tensor(a.data.sum(axis=axis), (a,))

    def backward():
        a.grad += np.expand_dims(out.grad, axis)

    out._backward = backward
    return out


def mean_all(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.data.mean()), (a,))

    def backward():
        a.grad += out.grad / a.data.size

    out._backward = backward
    return out


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    na = a.data.shape[1]
    out = Tensor(np.concatenate([a.data, b.data], axis=1), (a, b))

    def backward():
        a.grad += out.grad[:, :na]
        b.grad += out.grad[:, na:]

    out._backward = backward
    return out


def maximum_scalar(a: Tensor, b: Tensor) -> Tensor:
    """Max of two scalars; ties route gradient to the first argument."""
    pick_a = branch_value(float(a.data) >= float(b.data))
    out = Tensor(a.data if pick_a else b.data, (a, b))

    def backward():
        if pick_a:
            a.grad += out.grad
        else:
            b.grad += out.grad

    out._backward = backward
    return out


def scale(a: Tensor, factor: float) -> Tensor:
    out = Tensor(a.data * factor, (a,))

    def backward():
        a.grad += out.grad * factor

    out._backward = backward
    return out


def check_finite(a: Tensor, where: str) -> Tensor:
    if not np.isfinite(a.data).all():
        raise NumericError(f"non-finite values in {where}")
    return a
