"""Reverse-mode differentiable arrays.

A :class:`Value` wraps a numpy array. Every operation on values that require
gradients records its inputs and a closure that pushes the output gradient back
to them; :meth:`Value.backward` walks that tape in reverse topological order.
"""

from __future__ import annotations

import threading
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from typing import Any

import numpy as np
from scipy.special import log_softmax as _log_softmax
from scipy.special import logsumexp as _logsumexp
from scipy.special import softmax as _softmax

from sxextract.core.errors import ShapeError

__all__ = [
    "Value",
    "no_grad",
    "is_grad_enabled",
    "as_value",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "tanh",
    "sigmoid",
    "relu",
    "exp",
    "log",
    "concat",
    "stack",
    "reshape",
    "transpose",
    "take",
    "sum",
    "mean",
    "softmax",
    "log_softmax",
    "logsumexp",
    "embedding",
    "dropout",
]

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Run forward computations without recording a tape (per thread)."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def _float_array(data: Any, dtype: Any = None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Value:
    """An n-dimensional real array participating in reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data: Any, requires_grad: bool = False, name: str | None = None, dtype: Any = None) -> None:
        self.data: np.ndarray = _float_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Value, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

    # -- graph plumbing -------------------------------------------------

    @classmethod
    def _result(
        cls,
        data: np.ndarray,
        parents: Sequence[Value],
        op: str,
        backward: Callable[[np.ndarray], None],
    ) -> Value:
        out = cls(data)
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        grad = _unbroadcast(np.asarray(grad, dtype=self.data.dtype), self.data.shape).reshape(self.data.shape)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    @property
    def creator(self) -> tuple[str, tuple[Value, ...]]:
        """Producing operation name and its inputs (``("leaf", ())`` for leaves)."""
        return self._op, self._parents

    def _topological_order(self) -> list[Value]:
        order: list[Value] = []
        visited: set[int] = set()
        stack: list[tuple[Value, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self, grad: np.ndarray | None = None, retain_graph: bool = False) -> None:
        """Populate ``grad`` on every value this one depends on.

        The tape is released afterwards unless ``retain_graph`` is set.
        """
        if not self.requires_grad:
            return
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward", self.shape, detail="implicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = self._topological_order()
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        if not retain_graph:
            for node in order:
                if node._parents:
                    node._parents = ()
                    node._backward = None

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Value:
        return Value(self.data)

    # -- array protocol -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def T(self) -> Value:  # noqa: N802
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape, detail="only single-element values convert to float")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __len__(self) -> int:
        return int(self.data.shape[0])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Value(shape={self.shape}{label}, op={self._op})"

    # -- operators --------------------------------------------------------

    def __add__(self, other: Any) -> Value:
        return add(self, other)

    def __radd__(self, other: Any) -> Value:
        return add(other, self)

    def __sub__(self, other: Any) -> Value:
        return sub(self, other)

    def __rsub__(self, other: Any) -> Value:
        return sub(other, self)

    def __mul__(self, other: Any) -> Value:
        return mul(self, other)

    def __rmul__(self, other: Any) -> Value:
        return mul(other, self)

    def __truediv__(self, other: Any) -> Value:
        return div(self, other)

    def __neg__(self) -> Value:
        return neg(self)

    def __matmul__(self, other: Any) -> Value:
        return matmul(self, other)

    def __getitem__(self, index: Any) -> Value:
        return take(self, index)

    def sum(self, axis: int | None = None, keepdims: bool = False) -> Value:
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> Value:
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> Value:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, tuple(shape))


def as_value(x: Any, like: Value | None = None) -> Value:
    """Wrap constants so they can enter an operation."""
    if isinstance(x, Value):
        return x
    dtype = like.data.dtype if like is not None else None
    return Value(x, dtype=dtype)


def _pair(a: Any, b: Any) -> tuple[Value, Value]:
    if isinstance(a, Value):
        return a, as_value(b, a)
    b = as_value(b)
    return as_value(a, b), b


def _broadcast_shape(op: str, a: Value, b: Value) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(op, a.shape, b.shape) from exc


# -- elementwise arithmetic ---------------------------------------------------


def add(a: Any, b: Any) -> Value:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)

    def backward(g: np.ndarray) -> None:
        a._accumulate(g)
        b._accumulate(g)

    return Value._result(a.data + b.data, (a, b), "add", backward)


def sub(a: Any, b: Any) -> Value:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)

    def backward(g: np.ndarray) -> None:
        a._accumulate(g)
        b._accumulate(-g)

    return Value._result(a.data - b.data, (a, b), "sub", backward)


def mul(a: Any, b: Any) -> Value:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)

    def backward(g: np.ndarray) -> None:
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)

    return Value._result(a.data * b.data, (a, b), "mul", backward)


def div(a: Any, b: Any) -> Value:
    a, b = _pair(a, b)
    _broadcast_shape("div", a, b)

    def backward(g: np.ndarray) -> None:
        a._accumulate(g / b.data)
        b._accumulate(-g * a.data / (b.data * b.data))

    return Value._result(a.data / b.data, (a, b), "div", backward)


def neg(a: Value) -> Value:
    def backward(g: np.ndarray) -> None:
        a._accumulate(-g)

    return Value._result(-a.data, (a,), "neg", backward)


def matmul(a: Any, b: Any) -> Value:
    """Matrix/vector products for 1-D and 2-D operands."""
    a, b = _pair(a, b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward(g: np.ndarray) -> None:
        if a.ndim == 2 and b.ndim == 2:
            a._accumulate(g @ b.data.T)
            b._accumulate(a.data.T @ g)
        elif a.ndim == 1 and b.ndim == 2:
            a._accumulate(b.data @ g)
            b._accumulate(np.outer(a.data, g))
        elif a.ndim == 2 and b.ndim == 1:
            a._accumulate(np.outer(g, b.data))
            b._accumulate(a.data.T @ g)
        else:
            a._accumulate(g * b.data)
            b._accumulate(g * a.data)

    return Value._result(np.matmul(a.data, b.data), (a, b), "matmul", backward)


# -- nonlinearities ---------------------------------------------------------


def tanh(a: Value) -> Value:
    out = np.tanh(a.data)

    def backward(g: np.ndarray) -> None:
        a._accumulate(g * (1.0 - out * out))

    return Value._result(out, (a,), "tanh", backward)


def sigmoid(a: Value) -> Value:
    x = a.data
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g: np.ndarray) -> None:
        a._accumulate(g * out * (1.0 - out))

    return Value._result(out, (a,), "sigmoid", backward)


def relu(a: Value) -> Value:
    out = np.maximum(a.data, 0.0)

    def backward(g: np.ndarray) -> None:
        a._accumulate(g * (a.data > 0))

    return Value._result(out, (a,), "relu", backward)


def exp(a: Value) -> Value:
    out = np.exp(a.data)

    def backward(g: np.ndarray) -> None:
        a._accumulate(g * out)

    return Value._result(out, (a,), "exp", backward)


def log(a: Value) -> Value:
    def backward(g: np.ndarray) -> None:
        a._accumulate(g / a.data)

    return Value._result(np.log(a.data), (a,), "log", backward)


# -- structure ----------------------------------------------------------------


def concat(values: Sequence[Value], axis: int = 0) -> Value:
    values = [as_value(v) for v in values]
    if not values:
        raise ShapeError("concat", (0,), detail="nothing to concatenate")
    try:
        out = np.concatenate([v.data for v in values], axis=axis)
    except ValueError as exc:
        raise ShapeError("concat", *(v.shape for v in values)) from exc
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def backward(g: np.ndarray) -> None:
        for v, part in zip(values, np.split(g, bounds, axis=axis)):
            v._accumulate(part)

    return Value._result(out, values, "concat", backward)


def stack(values: Sequence[Value], axis: int = 0) -> Value:
    values = [as_value(v) for v in values]
    if not values:
        raise ShapeError("stack", (0,), detail="nothing to stack")
    try:
        out = np.stack([v.data for v in values], axis=axis)
    except ValueError as exc:
        raise ShapeError("stack", *(v.shape for v in values)) from exc

    def backward(g: np.ndarray) -> None:
        for i, v in enumerate(values):
            v._accumulate(np.take(g, i, axis=axis))

    return Value._result(out, values, "stack", backward)


def reshape(a: Value, shape: tuple[int, ...]) -> Value:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError("reshape", a.shape, shape) from exc

    def backward(g: np.ndarray) -> None:
        a._accumulate(g.reshape(a.shape))

    return Value._result(out, (a,), "reshape", backward)


def transpose(a: Value) -> Value:
    def backward(g: np.ndarray) -> None:
        a._accumulate(g.T)

    return Value._result(a.data.T, (a,), "transpose", backward)


def take(a: Value, index: Any) -> Value:
    """Slice or gather; repeated indices accumulate their gradients."""
    if isinstance(index, list):
        index = np.asarray(index)
    try:
        out = a.data[index]
    except IndexError as exc:
        raise ShapeError("take", a.shape, detail=f"index {index!r} out of range") from exc

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        a._accumulate(full)

    return Value._result(np.array(out, copy=True), (a,), "take", backward)


# -- reductions ---------------------------------------------------------------


def sum(a: Value, axis: int | None = None, keepdims: bool = False) -> Value:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray) -> None:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return Value._result(np.asarray(out), (a,), "sum", backward)


def mean(a: Value, axis: int | None = None, keepdims: bool = False) -> Value:
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(a: Value, axis: int = -1) -> Value:
    out = _softmax(a.data, axis=axis)

    def backward(g: np.ndarray) -> None:
        a._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return Value._result(out, (a,), "softmax", backward)


def log_softmax(a: Value, axis: int = -1) -> Value:
    out = _log_softmax(a.data, axis=axis)

    def backward(g: np.ndarray) -> None:
        a._accumulate(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return Value._result(out, (a,), "log_softmax", backward)


def logsumexp(a: Value, axis: int | None = -1, keepdims: bool = False) -> Value:
    """Overflow-safe log of summed exponentials over ``axis``."""
    out = np.asarray(_logsumexp(a.data, axis=axis, keepdims=keepdims))

    def backward(g: np.ndarray) -> None:
        lse = out if keepdims or axis is None else np.expand_dims(out, axis)
        gg = g if keepdims or axis is None else np.expand_dims(g, axis)
        a._accumulate(gg * np.exp(a.data - lse))

    return Value._result(out, (a,), "logsumexp", backward)


# -- lookup and regularization --------------------------------------------


def embedding(table: Value, ids: Sequence[int] | np.ndarray) -> Value:
    """Gather rows of ``table``; returns shape ``(len(ids), dim)``."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError("embedding", table.shape, detail="table must be 2-D")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError("embedding", table.shape, ids.shape, detail="id outside table")
    return take(table, ids)


def dropout(a: Value, rate: float, rng: np.random.Generator, training: bool) -> Value:
    """Inverted dropout: Bernoulli keep-mask scaled by ``1 / (1 - rate)``."""
    if not training or rate == 0.0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype) / (1.0 - rate)
    return mul(a, Value(keep))
