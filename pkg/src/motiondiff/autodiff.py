"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Just enough operator coverage for a temporal conv net: elementwise
arithmetic with broadcasting, matmul, reductions, reshapes, slicing,
padding, and nearest-neighbor upsampling.  Values are computed eagerly;
each node keeps a vector-Jacobian closure for the backward sweep.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, value, requires_grad=False, _parents=(), _vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_const(self, p)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, vjp) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(value, requires_grad=True, _parents=tuple(parents), _vjp=vjp)
    return Tensor(value)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _node(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.value, -1, -2))
        gb = np.matmul(np.swapaxes(a.value, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(np.matmul(a.value, b.value), (a, b), vjp)


def pow_const(a, p: float) -> Tensor:
    a = _as_tensor(a)
    return _node(a.value**p, (a,), lambda g: (g * p * a.value ** (p - 1),))


def silu(a) -> Tensor:
    """x * sigmoid(x); derivative s * (1 + x * (1 - s))."""
    a = _as_tensor(a)
    s = expit(a.value)
    return _node(a.value * s, (a,), lambda g: (g * (s * (1.0 + a.value * (1.0 - s))),))


def sum_axes(a, axes: tuple[int, ...]) -> Tensor:
    """Sum over `axes`, keeping reduced dimensions (for clean broadcasting)."""
    a = _as_tensor(a)
    return _node(
        a.value.sum(axis=axes, keepdims=True),
        (a,),
        lambda g: (np.broadcast_to(g, a.shape).copy(),),
    )


def mean_axes(a, axes: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    return mul(sum_axes(a, axes), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.value for t in tensors], axis=axis), tensors, vjp)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    idx = [slice(None)] * a.value.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def vjp(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return (full,)

    return _node(a.value[idx].copy(), (a,), vjp)


def pad_time(a, before: int, after: int) -> Tensor:
    """Zero-pad axis 1 (the time axis of a (B, L, C) array)."""
    a = _as_tensor(a)
    pad = [(0, 0)] * a.value.ndim
    pad[1] = (before, after)
    n = a.shape[1]
    return _node(
        np.pad(a.value, pad),
        (a,),
        lambda g: (np.ascontiguousarray(g[:, before : before + n]),),
    )


def repeat2_time(a) -> Tensor:
    """Nearest-neighbor x2 upsampling along axis 1."""
    a = _as_tensor(a)
    b, n = a.shape[0], a.shape[1]
    rest = a.shape[2:]
    return _node(
        np.repeat(a.value, 2, axis=1),
        (a,),
        lambda g: (g.reshape(b, n, 2, *rest).sum(axis=2),),
    )


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def backward(root: Tensor, seed_grad: np.ndarray | None = None) -> None:
    """Accumulate gradients of `root` into every reachable leaf's .grad."""
    order = _topo_order(root)
    root.grad = np.ones_like(root.value) if seed_grad is None else np.asarray(seed_grad, dtype=np.float64)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if not parent.requires_grad or g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
