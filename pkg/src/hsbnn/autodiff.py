"""Minimal reverse-mode differentiation over numpy arrays.

Only the primitives the variational objective is assembled from are
supported.  Every helper accepts either a :class:`Tensor` or a plain
array/float; plain inputs are evaluated eagerly with numpy so the same
formula code serves both the differentiable objective and ordinary
numerical evaluation.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Tensor:
    """Array value recorded on an implicit tape (its parent graph)."""

    __slots__ = ("value", "grad", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, value, parents: Sequence["Tensor"] = (), backward: Callable | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor({self.value!r})"

    def __len__(self):
        return len(self.value)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        if exponent == 2:
            return square(self)
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    # reverse sweep --------------------------------------------------------
    def backward(self, seed=None) -> None:
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
            for p in reversed(node._parents):
                if id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value) if seed is None else np.asarray(seed, dtype=np.float64)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def value(x):
    return x.value if isinstance(x, Tensor) else x


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _binary(a, b, fwd, grad_a, grad_b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        return fwd(a, b)
    ta, tb = _wrap(a), _wrap(b)
    out_val = fwd(ta.value, tb.value)

    def backward(g):
        return (
            _unbroadcast(grad_a(g, ta.value, tb.value, out_val), ta.shape),
            _unbroadcast(grad_b(g, ta.value, tb.value, out_val), tb.shape),
        )

    return Tensor(out_val, (ta, tb), backward)


def _unary(x, fwd, grad):
    if not isinstance(x, Tensor):
        return fwd(x)
    out_val = fwd(x.value)
    return Tensor(out_val, (x,), lambda g: (grad(g, x.value, out_val),))


def add(a, b):
    return _binary(a, b, np.add, lambda g, *_: g, lambda g, *_: g)


def mul(a, b):
    return _binary(a, b, np.multiply, lambda g, x, y, _: g * y, lambda g, x, y, _: g * x)


def div(a, b):
    return _binary(
        a, b, np.divide,
        lambda g, x, y, _: g / y,
        lambda g, x, y, out: -g * out / y,
    )


def neg(x):
    return _unary(x, np.negative, lambda g, *_: -g)


def square(x):
    return _unary(x, np.square, lambda g, v, _: 2.0 * g * v)


def power(x, p: float):
    return _unary(x, lambda v: np.power(v, p), lambda g, v, _: g * p * np.power(v, p - 1.0))


def sqrt(x):
    return _unary(x, np.sqrt, lambda g, v, out: 0.5 * g / out)


def exp(x):
    return _unary(x, np.exp, lambda g, v, out: g * out)


def log(x):
    return _unary(x, np.log, lambda g, v, _: g / v)


def tanh(x):
    return _unary(x, np.tanh, lambda g, v, out: g * (1.0 - out * out))


def relu(x):
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda g, v, _: g * (v > 0.0))


def softplus(x):
    return _unary(x, lambda v: np.logaddexp(0.0, v), lambda g, v, _: g * _sigmoid(v))


def _sigmoid(v):
    return np.exp(-np.logaddexp(0.0, -v))


def logaddexp(a, b):
    return _binary(
        a, b, np.logaddexp,
        lambda g, x, y, out: g * np.exp(x - out),
        lambda g, x, y, out: g * np.exp(y - out),
    )


def matmul(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        return np.matmul(a, b)
    ta, tb = _wrap(a), _wrap(b)
    out_val = ta.value @ tb.value

    def backward(g):
        x, y = ta.value, tb.value
        if y.ndim == 1:
            ga = np.multiply.outer(g, y) if x.ndim > 1 else g * y
            gb = x.T @ g if x.ndim > 1 else g * x
        elif x.ndim == 1:
            ga = y @ g
            gb = np.outer(x, g)
        else:
            ga = g @ y.T
            gb = x.T @ g
        return ga, gb

    return Tensor(out_val, (ta, tb), backward)


def sum_(x, axis=None, keepdims=False):
    if not isinstance(x, Tensor):
        return np.sum(x, axis=axis, keepdims=keepdims)
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor(np.sum(x.value, axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None):
    n = value(x).size if axis is None else value(x).shape[axis]
    return sum_(x, axis=axis) / n


def getitem(x, idx):
    if not isinstance(x, Tensor):
        return x[idx]
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor(x.value[idx], (x,), backward)


def transpose(x):
    return _unary(x, np.transpose, lambda g, *_: np.transpose(g))


def reshape(x, shape):
    if not isinstance(x, Tensor):
        return np.reshape(x, shape)
    orig = x.shape
    return Tensor(np.reshape(x.value, shape), (x,), lambda g: (np.reshape(g, orig),))


def append_ones(x):
    """Append a constant-one column along the last axis (bias input)."""
    if not isinstance(x, Tensor):
        x = np.asarray(x, dtype=np.float64)
        return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)
    val = np.concatenate([x.value, np.ones(x.shape[:-1] + (1,))], axis=-1)
    return Tensor(val, (x,), lambda g: (g[..., :-1],))


def total(items):
    """Sum scalar terms with a single tape node."""
    items = list(items)
    tensors = [t for t in items if isinstance(t, Tensor)]
    val = float(sum(float(np.sum(value(t))) for t in items))
    if not tensors:
        return val
    for t in tensors:
        if t.value.ndim != 0:
            raise ValueError("total() expects scalar terms")
    return Tensor(val, tensors, lambda g: (g,) * len(tensors))
