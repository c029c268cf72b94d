"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ndarray and records, per operation, the parent
tensors and one vector-Jacobian-product closure per parent. ``backward()``
walks the recorded graph in reverse topological order. Only the primitives
here carry handwritten VJPs; every layer in :mod:`wurstkit.nn` is composed
from them, so a finite-difference check of the primitives covers the rest
by construction.

Graph recording is thread-local state free: tensors are immutable once
created and graphs are per-forward-pass, so concurrent read-only use of
shared parameters is safe.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjps")

    # opt out of numpy ufunc dispatch so ndarray <op> Tensor defers to the
    # reflected operators below instead of element-wise object semantics
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjps: tuple[Callable | None, ...] = ()

    # -- introspection ----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    # -- graph ------------------------------------------------------------
    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = grad
        for node in reversed(topo):
            g = node.grad
            if g is None:
                continue
            for parent, vjp in zip(node._parents, node._vjps):
                if vjp is None or not parent.requires_grad:
                    continue
                pg = vjp(g)
                parent.grad = pg if parent.grad is None else parent.grad + pg
            if node._parents:
                # interior node: release the closure graph and its gradient
                node.grad = None
                node._parents = ()
                node._vjps = ()

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, k):
        return power(self, k)

    def __abs__(self):
        return absolute(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take_slice(self, key)

    # -- method sugar ------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def abs(self):
        return absolute(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data: np.ndarray, parents: Sequence[Tensor], vjps: Sequence[Callable | None]) -> Tensor:
    """Wrap an op result; records the graph only when gradients are live."""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = tuple(parents)
        out._vjps = tuple(vjps)
        return out
    return Tensor(data)


# -- arithmetic -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        a.data + b.data,
        (a, b),
        (lambda g: _unbroadcast(g, a.data.shape), lambda g: _unbroadcast(g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        a.data * b.data,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.data, a.data.shape),
            lambda g: _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        a.data / b.data,
        (a, b),
        (
            lambda g: _unbroadcast(g / b.data, a.data.shape),
            lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def power(a, k: float) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data**k, (a,), (lambda g: g * k * a.data ** (k - 1),))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.abs(a.data), (a,), (lambda g: g * np.sign(a.data),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return make_op(y, (a,), (lambda g: g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.log(a.data), (a,), (lambda g: g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    y = np.sqrt(a.data)
    return make_op(y, (a,), (lambda g: g * 0.5 / y,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return make_op(y, (a,), (lambda g: g * (1.0 - y * y),))


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(a) -> Tensor:
    """tanh-approximation GELU; smooth, so friendly to finite-difference checks."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)

    return make_op(0.5 * x * (1.0 + t), (a,), (vjp,))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return y * (g - (g * y).sum(axis=axis, keepdims=True))

    return make_op(y, (a,), (vjp,))


# -- shape ops ------------------------------------------------------------


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape
    return make_op(a.data.reshape(shape), (a,), (lambda g: g.reshape(old),))


def transpose(a, axes: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return make_op(np.ascontiguousarray(a.data.transpose(axes)), (a,), (lambda g: g.transpose(inv),))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            return np.ascontiguousarray(g[tuple(sl)])

        return vjp

    return make_op(np.concatenate([p.data for p in parts], axis=axis), parts, tuple(make_vjp(i) for i in range(len(parts))))


def take_slice(a, key) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        out = np.zeros_like(a.data)
        out[key] = g
        return out

    return make_op(np.ascontiguousarray(a.data[key]), (a,), (vjp,))


def gather_rows(table, idx: np.ndarray) -> Tensor:
    """Row lookup `table[idx]` (embedding/codebook fetch)."""
    table = as_tensor(table)
    idx = np.asarray(idx)

    def vjp(g):
        out = np.zeros_like(table.data)
        np.add.at(out, idx.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        return out

    return make_op(table.data[idx], (table,), (vjp,))


# -- reductions -----------------------------------------------------------


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy() if np.ndim(g) == 0 or g.shape != shape else g
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, shape).copy()

    return make_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), (vjp,))


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([shape[ax] for ax in axes]))
    return mul(reduce_sum(a, axis, keepdims), 1.0 / count)


# -- linear algebra -------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp_a(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if b.data.ndim >= 2 else np.outer(g, b.data)
        return _unbroadcast(ga, a.data.shape)

    def vjp_b(g):
        gb = np.swapaxes(a.data, -1, -2) @ g if a.data.ndim >= 2 else np.outer(a.data, g)
        return _unbroadcast(gb, b.data.shape)

    return make_op(a.data @ b.data, (a, b), (vjp_a, vjp_b))


# -- routing --------------------------------------------------------------


def straight_through(target: np.ndarray, src: Tensor) -> Tensor:
    """Emit `target` values while passing gradients straight to `src`."""
    src = as_tensor(src)
    if target.shape != src.data.shape:
        raise ValueError("straight_through requires matching shapes")
    return make_op(target, (src,), (lambda g: g,))


def where_mask(mask: np.ndarray, a, b) -> Tensor:
    """Elementwise select with a constant boolean mask (no gradient to mask)."""
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        np.where(mask, a.data, b.data),
        (a, b),
        (
            lambda g: _unbroadcast(np.where(mask, g, 0.0), a.data.shape),
            lambda g: _unbroadcast(np.where(mask, 0.0, g), b.data.shape),
        ),
    )
