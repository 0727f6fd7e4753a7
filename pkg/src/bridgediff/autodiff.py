"""A small tape-free reverse-mode autodiff over numpy arrays.

Only the handful of ops the denoiser needs are provided. Each op returns a
``Var`` holding its value plus closures that push the output gradient back
to its inputs; :func:`backward` walks the graph in reverse topological order.
"""

from __future__ import annotations

import numpy as np


class Var:
    __slots__ = ("value", "grad", "parents", "requires_grad")

    def __init__(self, value, parents=(), requires_grad=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents  # tuple of (Var, fn(grad_out) -> grad_in)
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p, _ in parents)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(shape={self.shape})"


def param(value) -> Var:
    return Var(value, requires_grad=True)


def const(value) -> Var:
    return value if isinstance(value, Var) else Var(value, requires_grad=False)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _make(value, *links):
    parents = tuple((p, fn) for p, fn in links if p.requires_grad)
    return Var(value, parents, requires_grad=bool(parents))


def add(a, b) -> Var:
    a, b = const(a), const(b)
    return _make(
        a.value + b.value,
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Var:
    a, b = const(a), const(b)
    return _make(
        a.value * b.value,
        (a, lambda g: _unbroadcast(g * b.value, a.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.shape)),
    )


def matmul(a, b) -> Var:
    """``a @ b`` for stacked matrices; 2-D weights broadcast over batch axes."""
    a, b = const(a), const(b)

    def grad_a(g):
        return _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape)

    def grad_b(g):
        return _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape)

    return _make(a.value @ b.value, (a, grad_a), (b, grad_b))


def silu(x) -> Var:
    x = const(x)
    sig = 1.0 / (1.0 + np.exp(-x.value))
    out = x.value * sig
    return _make(out, (x, lambda g: g * (sig + out * (1.0 - sig))))


def softmax(x, mask=None) -> Var:
    """Softmax over the last axis; ``mask`` (bool, True = keep) broadcasts against ``x``."""
    x = const(x)
    z = x.value
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def grad(g):
        return p * (g - (g * p).sum(axis=-1, keepdims=True))

    return _make(p, (x, grad))


def reshape(x, shape) -> Var:
    x = const(x)
    return _make(x.value.reshape(shape), (x, lambda g: g.reshape(x.shape)))


def swapaxes(x, a1: int, a2: int) -> Var:
    x = const(x)
    return _make(np.swapaxes(x.value, a1, a2), (x, lambda g: np.swapaxes(g, a1, a2)))


def concat(xs, axis: int) -> Var:
    xs = [const(x) for x in xs]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def piece(i):
        return lambda g: np.split(g, sizes, axis=axis)[i]

    return _make(np.concatenate([x.value for x in xs], axis=axis), *[(x, piece(i)) for i, x in enumerate(xs)])


def take(x, index, axis: int = 0) -> Var:
    """Gather slices along ``axis``; repeated indices accumulate in the backward pass."""
    x = const(x)
    index = np.asarray(index, dtype=np.intp)

    def grad(g):
        out = np.zeros(x.shape)
        np.add.at(out, (slice(None),) * axis + (index,), g)
        return out

    return _make(np.take(x.value, index, axis=axis), (x, grad))


def sum_all(x) -> Var:
    x = const(x)
    return _make(x.value.sum(), (x, lambda g: np.broadcast_to(g, x.shape).copy()))


def backward(out: Var) -> None:
    """Accumulate ``d out / d v`` into ``v.grad`` for every ``v`` upstream of a scalar ``out``."""
    if out.value.size != 1:
        raise ValueError("backward() needs a scalar output")
    order: list[Var] = []
    seen: set[int] = set()
    stack = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p, _ in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    grads = {id(out): np.ones_like(out.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, fn in node.parents:
            gp = fn(g)
            key = id(p)
            grads[key] = gp if key not in grads else grads[key] + gp
