"""Minimal reverse-mode automatic differentiation on numpy arrays.

A :class:`Tensor` wraps a float64 array. Every operation on tensors records
the parents it was computed from together with a vector-Jacobian product
(vjp) for each of them. :meth:`Tensor.backward` walks the recorded graph in
reverse topological order and accumulates gradients additively, so fan-out
is handled without special casing.

Complex numbers are not supported directly; callers carry real and
imaginary parts as separate tensors.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (undo numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Array node in a reverse-mode differentiation graph.

    Attributes
    ----------
    value : np.ndarray
        Forward value.
    grad : np.ndarray or None
        Accumulated gradient of the last backward pass (same shape as
        ``value``); ``None`` until a backward pass reaches the node.
    requires_grad : bool
        Whether gradients flow into this node.
    """

    __slots__ = ("value", "grad", "requires_grad", "_edges")
    __array_priority__ = 100.0

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._edges: tuple = ()

    # -- construction -------------------------------------------------
    @staticmethod
    def _from_op(value: np.ndarray, edges: Iterable[tuple["Tensor", Callable]]) -> "Tensor":
        out = Tensor(value)
        if _grad_enabled:
            live = tuple((p, fn) for p, fn in edges if p.requires_grad)
            if live:
                out.requires_grad = True
                out._edges = live
        return out

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        return f"Tensor({self.value!r}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.value

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    # -- backward -----------------------------------------------------
    def backward(self, grad=None) -> None:
        """Backpropagate from this node.

        ``grad`` defaults to 1 and may only be omitted for scalar outputs.
        """
        if grad is None:
            if self.value.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.value)
        grad = np.broadcast_to(np.asarray(grad, dtype=np.float64), self.shape)

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
            for parent, _ in node._edges:
                if id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.array(grad)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None or node._edges else node.grad + g
            for parent, vjp in node._edges:
                contribution = _unbroadcast(np.asarray(vjp(g)), parent.shape)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + contribution
                else:
                    grads[key] = contribution

    # -- operators ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- elementwise --------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._from_op(a.value + b.value, ((a, lambda g: g), (b, lambda g: g)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._from_op(a.value - b.value, ((a, lambda g: g), (b, lambda g: -g)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(-a.value, ((a, lambda g: -g),))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return Tensor._from_op(av * bv, ((a, lambda g: g * bv), (b, lambda g: g * av)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv
    return Tensor._from_op(out, ((a, lambda g: g / bv), (b, lambda g: -g * out / bv)))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return Tensor._from_op(av**exponent, ((a, lambda g: g * exponent * av ** (exponent - 1)),))


def square(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return Tensor._from_op(av * av, ((a, lambda g: 2.0 * g * av),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return Tensor._from_op(out, ((a, lambda g: 0.5 * g / out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return Tensor._from_op(out, ((a, lambda g: g * out),))


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return Tensor._from_op(np.log(av), ((a, lambda g: g / av),))


def sin(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return Tensor._from_op(np.sin(av), ((a, lambda g: g * np.cos(av)),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return Tensor._from_op(np.cos(av), ((a, lambda g: -g * np.sin(av)),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    active = a.value > 0
    return Tensor._from_op(np.where(active, a.value, 0.0), ((a, lambda g: g * active),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _logistic(a.value)
    return Tensor._from_op(out, ((a, lambda g: g * out * (1.0 - out)),))


def _logistic(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; zero gradient where clamping is active."""
    a = as_tensor(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return Tensor._from_op(np.clip(a.value, lo, hi), ((a, lambda g: g * inside),))


def where(cond: np.ndarray, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    return Tensor._from_op(
        np.where(cond, a.value, b.value),
        ((a, lambda g: np.where(cond, g, 0.0)), (b, lambda g: np.where(cond, 0.0, g))),
    )


# -- reductions ---------------------------------------------------------
def _expand(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return Tensor._from_op(
        a.value.sum(axis=axis, keepdims=keepdims),
        ((a, lambda g: _expand(g, shape, axis, keepdims)),),
    )


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    count = a.value.size if axis is None else np.prod([shape[i] for i in np.atleast_1d(axis)])
    return Tensor._from_op(
        a.value.mean(axis=axis, keepdims=keepdims),
        ((a, lambda g: _expand(g, shape, axis, keepdims) / count),),
    )


def tmin(a, axis: int) -> Tensor:
    """Minimum along ``axis``; the gradient goes to the first minimizer."""
    a = as_tensor(a)
    idx = np.expand_dims(np.argmin(a.value, axis=axis), axis)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.put_along_axis(out, idx, np.expand_dims(g, axis), axis=axis)
        return out

    return Tensor._from_op(np.take_along_axis(a.value, idx, axis=axis).squeeze(axis), ((a, vjp),))


# -- linear algebra and shape ------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return Tensor._from_op(
        av @ bv,
        ((a, lambda g: g @ np.swapaxes(bv, -1, -2)), (b, lambda g: np.swapaxes(av, -1, -2) @ g)),
    )


def reshape(a, *shape) -> Tensor:
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    orig = a.shape
    return Tensor._from_op(a.value.reshape(shape), ((a, lambda g: g.reshape(orig)),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inverse = None if axes is None else np.argsort(axes)
    return Tensor._from_op(np.transpose(a.value, axes), ((a, lambda g: np.transpose(g, inverse)),))


def getitem(a, index) -> Tensor:
    """Indexing, including integer-array gathers; repeated indices accumulate."""
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return out

    return Tensor._from_op(a.value[index], ((a, vjp),))


def take(a, indices: np.ndarray, axis: int = 0) -> Tensor:
    """Gather along ``axis`` (``np.take`` semantics), scatter-add on backward."""
    a = as_tensor(a)
    indices = np.asarray(indices)
    shape = a.shape

    def vjp(g):
        if len(shape) == 1:
            return np.bincount(indices.ravel(), weights=np.ravel(g), minlength=shape[0])
        out = np.zeros(shape)
        moved = np.moveaxis(out, axis, 0)
        gm = np.moveaxis(g, tuple(range(axis, axis + indices.ndim)), tuple(range(indices.ndim)))
        np.add.at(moved, indices, gm)
        return out

    return Tensor._from_op(np.take(a.value, indices, axis=axis), ((a, vjp),))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    edges = []
    for i, t in enumerate(tensors):
        edges.append((t, lambda g, i=i: np.take(g, i, axis=axis)))
    return Tensor._from_op(np.stack([t.value for t in tensors], axis=axis), edges)


def custom(value: np.ndarray, *edges: tuple[Tensor, Callable]) -> Tensor:
    """Build a node from a forward value and explicit ``(parent, vjp)`` pairs."""
    return Tensor._from_op(np.asarray(value, dtype=np.float64), edges)


# -- checking -----------------------------------------------------------
def numerical_gradient(fn: Callable[[], float], param: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` w.r.t. ``param`` (perturbed in place)."""
    grad = np.zeros_like(param)
    flat = param.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        plus = float(fn())
        flat[i] = orig - eps
        minus = float(fn())
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise relative error ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
