"""Tiny reverse-mode autodiff over numpy float64 arrays.

Implements exactly the operations needed by the actor, critic, encoder and
KL losses. Graphs are built eagerly and discarded after ``backward``.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "as_tensor", "backward",
    "add", "sub", "mul", "neg", "matmul", "relu", "tanh", "exp", "log",
    "sqrt", "square", "reciprocal", "softplus", "clip", "minimum",
    "concat_cols", "slice_cols", "broadcast_rows",
    "sum_all", "mean_all", "sum_rows", "sum_cols",
]


class Tensor:
    """A node in the computation graph.

    Leaf tensors created with ``requires_grad=True`` accumulate gradients
    in ``.grad`` after ``backward``; constants never do.
    """

    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad", "name")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False,
                 name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self._backward = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / other)
        return mul(self, reciprocal(other))

    def __repr__(self):
        tag = self.name or ("param" if self.requires_grad and not self.parents else "node")
        return f"Tensor({tag}, shape={self.value.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape``, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    def bw(g):
        return (_unbroadcast(g, a.value.shape) if a.requires_grad else None,
                _unbroadcast(g, b.value.shape) if b.requires_grad else None)
    return Tensor(a.value + b.value, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    def bw(g):
        return (_unbroadcast(g, a.value.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.value.shape) if b.requires_grad else None)
    return Tensor(a.value - b.value, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    def bw(g):
        return (_unbroadcast(g * b.value, a.value.shape) if a.requires_grad else None,
                _unbroadcast(g * a.value, b.value.shape) if b.requires_grad else None)
    return Tensor(a.value * b.value, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(-a.value, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    def bw(g):
        return (g @ b.value.T if a.requires_grad else None,
                a.value.T @ g if b.requires_grad else None)
    return Tensor(a.value @ b.value, (a, b), bw)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0.0
    return Tensor(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.value)
    return Tensor(t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.value)
    return Tensor(e, (a,), lambda g: (g * e,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    s = np.sqrt(a.value)
    return Tensor(s, (a,), lambda g: (g * 0.5 / s,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.value * a.value, (a,), lambda g: (g * 2.0 * a.value,))


def reciprocal(a) -> Tensor:
    a = as_tensor(a)
    r = 1.0 / a.value
    return Tensor(r, (a,), lambda g: (-g * r * r,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.logaddexp(0.0, a.value), (a,),
                  lambda g: (g * _sigmoid(a.value),))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    mask = (a.value > lo) & (a.value < hi)
    return Tensor(np.clip(a.value, lo, hi), (a,), lambda g: (g * mask,))


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.value <= b.value
    def bw(g):
        return (g * take_a if a.requires_grad else None,
                g * ~take_a if b.requires_grad else None)
    return Tensor(np.minimum(a.value, b.value), (a, b), bw)


def concat_cols(tensors) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    widths = [t.value.shape[1] for t in tensors]
    def bw(g):
        grads, j = [], 0
        for t, w in zip(tensors, widths):
            grads.append(g[:, j:j + w] if t.requires_grad else None)
            j += w
        return tuple(grads)
    return Tensor(np.concatenate([t.value for t in tensors], axis=1),
                  tuple(tensors), bw)


def slice_cols(a, j0: int, j1: int) -> Tensor:
    a = as_tensor(a)
    def bw(g):
        full = np.zeros_like(a.value)
        full[:, j0:j1] = g
        return (full,)
    return Tensor(a.value[:, j0:j1], (a,), bw)


def broadcast_rows(a, n: int) -> Tensor:
    """Repeat a (1, d) row to (n, d); gradient sums back over the rows."""
    a = as_tensor(a)
    return Tensor(np.broadcast_to(a.value, (n, a.value.shape[1])).copy(), (a,),
                  lambda g: (g.sum(axis=0, keepdims=True),))


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.value.sum(), (a,),
                  lambda g: (np.full_like(a.value, float(g)),))


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.value.size
    return Tensor(a.value.mean(), (a,),
                  lambda g: (np.full_like(a.value, float(g) / n),))


def sum_rows(a) -> Tensor:
    """Sum over axis 0, keeping a (1, d) row."""
    a = as_tensor(a)
    return Tensor(a.value.sum(axis=0, keepdims=True), (a,),
                  lambda g: (np.broadcast_to(g, a.value.shape).copy(),))


def sum_cols(a) -> Tensor:
    """Sum over axis 1, keeping an (n, 1) column."""
    a = as_tensor(a)
    return Tensor(a.value.sum(axis=1, keepdims=True), (a,),
                  lambda g: (np.broadcast_to(g, a.value.shape).copy(),))


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.value.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.value.shape}")
    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node._backward(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
