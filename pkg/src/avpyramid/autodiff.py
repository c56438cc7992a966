"""Reverse-mode automatic differentiation over numpy arrays.

A small tape-based engine: ``Tensor`` wraps a float64 ndarray, every op
records its parents and a gradient closure, and ``backward`` replays the
tape in reverse topological order. Shapes broadcast like numpy; gradients
are reduced back to the parent shape. The engine is single threaded and
deterministic, and its gradients are checked against central finite
differences in the test suite.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray


class Tensor:
    """A node in the computation graph holding a float64 array."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[Array], Sequence[Array | None]] | None = None

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

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: Array | None = None) -> None:
        backward(self, grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar. Scalars and ndarrays are wrapped as constants.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, idx):
        return getitem(self, idx)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(
    data: Array,
    parents: tuple[Tensor, ...],
    grad_fn: Callable[[Array], Sequence[Array | None]],
) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._grad_fn = grad_fn
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` over axes that were broadcast relative to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(out: Tensor, grad: Array | None = None) -> None:
    """Accumulate gradients of ``out`` into every reachable parent."""
    if not out.requires_grad:
        raise ValueError("output does not require gradients")
    if grad is None:
        if out.size != 1:
            raise ValueError("implicit gradient only defined for scalar outputs")
        grad = np.ones_like(out.data)
    # Iterative post-order walk; graphs are deep enough to overflow recursion.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    out.grad = grad if out.grad is None else out.grad + grad
    for node in reversed(order):
        if node._grad_fn is None or node.grad is None:
            continue
        parent_grads = node._grad_fn(node.grad)
        for parent, g in zip(node._parents, parent_grads):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# Primitive ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return _make(
        data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data
    return _make(
        data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-d")
    data = a.data @ b.data

    def grad_fn(g: Array):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(data, (a, b), grad_fn)


def swapaxes(a: Tensor, axis1: int, axis2: int) -> Tensor:
    data = np.swapaxes(a.data, axis1, axis2)
    return _make(data, (a,), lambda g: (np.swapaxes(g, axis1, axis2),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g: Array):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), grad_fn)


def getitem(a: Tensor, idx) -> Tensor:
    data = a.data[idx]

    def grad_fn(g: Array):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(data, (a,), grad_fn)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g: Array):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(data, (a,), grad_fn)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        count = a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), _as_tensor(1.0 / count))


def texp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return _make(data, (a,), lambda g: (g * data,))


def tlog(a: Tensor) -> Tensor:
    data = np.log(a.data)
    return _make(data, (a,), lambda g: (g / a.data,))


def tsqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)
    return _make(data, (a,), lambda g: (g * 0.5 / data,))


def tpow(a: Tensor, p: float) -> Tensor:
    data = a.data**p
    return _make(data, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0.0
    return _make(a.data * keep, (a,), lambda g: (g * keep,))


def sigmoid(a: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-a.data))
    return _make(data, (a,), lambda g: (g * data * (1.0 - data),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    data = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)
    return _make(data, (a,), lambda g: (g * inside,))


def shift(a: Tensor, offset: int, axis: int = -2) -> Tensor:
    """Shift along ``axis`` by ``offset`` steps, zero filling the gap.

    ``out[t] = a[t - offset]`` where defined; out-of-range taps are zero.
    """
    data = _shift_array(a.data, offset, axis)
    return _make(data, (a,), lambda g: (_shift_array(g, -offset, axis),))


def _shift_array(x: Array, offset: int, axis: int) -> Array:
    out = np.zeros_like(x)
    n = x.shape[axis]
    if abs(offset) >= n:
        return out
    dst = [slice(None)] * x.ndim
    src = [slice(None)] * x.ndim
    if offset >= 0:
        dst[axis] = slice(offset, n)
        src[axis] = slice(0, n - offset)
    else:
        dst[axis] = slice(0, n + offset)
        src[axis] = slice(-offset, n)
    out[tuple(dst)] = x[tuple(src)]
    return out


def softmax(a: Tensor, axis: int = -1, mask: Array | None = None) -> Tensor:
    """Softmax along ``axis``; optional boolean mask of allowed positions.

    Disallowed positions get weight exactly 0. A slice with no allowed
    position is rejected (the normalizer would vanish).
    """
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("softmax: at least one slice is fully masked")
        shifted = np.where(mask, a.data, -np.inf)
    else:
        shifted = a.data
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g: Array):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _make(data, (a,), grad_fn)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when ``rate`` is 0."""
    if rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return mul(a, _as_tensor(keep))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize the last axis to zero mean, unit variance, then scale/shift."""
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    inv = div(_as_tensor(1.0), tsqrt(add(var, _as_tensor(eps))))
    return add(mul(mul(centered, inv), gain), bias)


def stack_last_pairs(tensors: Sequence[Tensor], axis: int = -2) -> Tensor:
    """Stack same-shaped tensors along a new axis inserted at ``axis``."""
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        insert_at = axis if axis >= 0 else len(shape) + 1 + axis
        shape.insert(insert_at, 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)
