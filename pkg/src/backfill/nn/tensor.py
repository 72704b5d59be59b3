"""Reverse-mode differentiable tensors over float64 numpy arrays.

Every operation producing a `DTensor` from inputs that require gradients
records a backward closure; `DTensor.backward` replays those closures in
reverse creation order.  Broadcasting is limited to what numpy does for
elementwise ops, and gradients are summed back onto the broadcast shape.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class DTensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "_backward", "id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[DTensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"DTensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.shape)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | float | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological(self)
        self.accumulate(np.broadcast_to(np.asarray(grad, dtype=np.float64), self.shape))
        for node in order:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def __pow__(self, p):
        if p != 2:
            raise NotImplementedError("only squaring is supported")
        return square(self)


def _topological(root: DTensor) -> list[DTensor]:
    seen: set[int] = set()
    nodes: list[DTensor] = []
    stack = [root]
    while stack:
        node = stack.pop()
        if node.id in seen:
            continue
        seen.add(node.id)
        nodes.append(node)
        stack.extend(p for p in node.parents if p.requires_grad)
    # creation order is a valid topological order of the tape
    nodes.sort(key=lambda n: n.id, reverse=True)
    return nodes


def as_tensor(x) -> DTensor:
    return x if isinstance(x, DTensor) else DTensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _result(data: np.ndarray, parents: Sequence[DTensor], backward) -> DTensor:
    out = DTensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out._backward = backward
    return out


def add(a, b) -> DTensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> DTensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> DTensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def square(a) -> DTensor:
    a = as_tensor(a)
    return _result(a.data * a.data, (a,), lambda g: a.accumulate(2.0 * a.data * g))


def matmul(a, b) -> DTensor:
    """``(..., k) @ (k, n)`` or plain 2-D products; leading dims of `a` are batch."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    a2 = a.data.reshape(-1, a.shape[-1])
    out = (a2 @ b.data).reshape(a.shape[:-1] + (b.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, b.shape[1])
        if a.requires_grad:
            a.accumulate((g2 @ b.data.T).reshape(a.shape))
        if b.requires_grad:
            b.accumulate(a2.T @ g2)

    return _result(out, (a, b), backward)


def bmm(a, b) -> DTensor:
    """np.matmul with broadcasting over leading (batch) dims; both operands >= 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"bmm shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _result(out, (a, b), backward)


def transpose(a, axes: tuple[int, ...]) -> DTensor:
    a = as_tensor(a)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: a.accumulate(np.transpose(g, inverse)))


def einsum(subscripts: str, a, b) -> DTensor:
    """Two-operand einsum without repeated or operand-only summed indices."""
    a, b = as_tensor(a), as_tensor(b)
    ins, out_sub = subscripts.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for s, other in ((sa, sb), (sb, sa)):
        if len(set(s)) != len(s) or any(c not in other and c not in out_sub for c in s):
            raise ValueError(f"unsupported einsum subscripts {subscripts!r}")
    out = np.einsum(subscripts, a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(np.einsum(f"{out_sub},{sb}->{sa}", g, b.data))
        if b.requires_grad:
            b.accumulate(np.einsum(f"{out_sub},{sa}->{sb}", g, a.data))

    return _result(out, (a, b), backward)


def sigmoid(a) -> DTensor:
    a = as_tensor(a)
    # tanh form never overflows
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, (a,), lambda g: a.accumulate(g * out * (1.0 - out)))


def tanh(a) -> DTensor:
    a = as_tensor(a)
    out = np.clip(np.tanh(a.data), -1.0, 1.0)
    return _result(out, (a,), lambda g: a.accumulate(g * (1.0 - out * out)))


def relu(a) -> DTensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: a.accumulate(g * mask))


def identity(a) -> DTensor:
    return as_tensor(a)


def exp(a) -> DTensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: a.accumulate(g * out))


def tsum(a, axis=None, keepdims: bool = False) -> DTensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.shape))

    return _result(out, (a,), backward)


def mean(a, axis=None) -> DTensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def softmax(a, axis: int = -1) -> DTensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        a.accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _result(out, (a,), backward)


def reshape(a, shape: tuple[int, ...]) -> DTensor:
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,), lambda g: a.accumulate(g.reshape(a.shape)))


def take(a, index) -> DTensor:
    """Basic or integer-array indexing; gradients scatter-add back."""
    a = as_tensor(a)

    basic = _is_basic(index)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        a.accumulate(full)

    return _result(a.data[index], (a,), backward)


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, np.integer)) or p is Ellipsis or p is None for p in parts)


def concat(tensors: Iterable, axis: int = -1) -> DTensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def backward(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t.accumulate(g[tuple(sl)])

    return _result(out, ts, backward)


def stack(tensors: Iterable, axis: int = 0) -> DTensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        for i, t in enumerate(ts):
            if t.requires_grad:
                t.accumulate(np.take(g, i, axis=axis))

    return _result(out, ts, backward)


ACTIVATIONS: dict[str, Callable[[DTensor], DTensor]] = {
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "linear": identity,
}
