"""Reverse-mode automatic differentiation over a small, fixed set of array ops.

The graph is built eagerly: every operation returns a new :class:`Var` holding
the float64 result plus a closure that scatters the incoming adjoint to its
parents. :func:`backward` walks the graph once in reverse topological order.

Only the operations the models in this package need are provided (matmul,
bias-style broadcasts, elementwise activations, reshape/slice/stack, sums).
There is no general broadcasting and no graph compiler.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class Var:
    """A float64 array with an adjoint slot, forming one node of the tape."""

    __slots__ = ("value", "grad", "parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g):
        if self.grad is None:
            # own the buffer; g may be a view or broadcast
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def accumulate_at(self, index, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad[index] += g

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


def constant(x) -> Var:
    """Wrap an array as a leaf that accumulates no gradient of interest."""
    return Var(x)


def _leading_axes(g: np.ndarray, keep: int) -> tuple:
    return tuple(range(g.ndim - keep))


def add(a: Var, b: Var) -> Var:
    """Elementwise sum; `b` may be 1-D and broadcast along the last axis."""
    if a.value.shape == b.value.shape:
        def bw(g, a=a, b=b):
            a.accumulate(g)
            b.accumulate(g)
    elif b.value.ndim == 1 and a.value.shape[-1] == b.value.shape[0]:
        def bw(g, a=a, b=b):
            a.accumulate(g)
            b.accumulate(g.sum(axis=_leading_axes(g, 1)))
    else:
        raise ValueError(f"add: incompatible shapes {a.value.shape} vs {b.value.shape}")
    return Var(a.value + b.value, (a, b), bw)


def sub(a: Var, b: Var) -> Var:
    if a.value.shape != b.value.shape:
        raise ValueError(f"sub: incompatible shapes {a.value.shape} vs {b.value.shape}")

    def bw(g, a=a, b=b):
        a.accumulate(g)
        if b.grad is None:
            b.grad = -g
        else:
            b.grad -= g

    return Var(a.value - b.value, (a, b), bw)


def mul(a: Var, b: Var) -> Var:
    """Elementwise product; `b` may be 1-D and broadcast along the last axis."""
    if a.value.shape == b.value.shape:
        def bw(g, a=a, b=b):
            a.accumulate(g * b.value)
            b.accumulate(g * a.value)
    elif b.value.ndim == 1 and a.value.shape[-1] == b.value.shape[0]:
        def bw(g, a=a, b=b):
            a.accumulate(g * b.value)
            b.accumulate((g * a.value).sum(axis=_leading_axes(g, 1)))
    else:
        raise ValueError(f"mul: incompatible shapes {a.value.shape} vs {b.value.shape}")
    return Var(a.value * b.value, (a, b), bw)


def scale(a: Var, c: float) -> Var:
    c = float(c)

    def bw(g, a=a, c=c):
        a.accumulate(g * c)

    return Var(a.value * c, (a,), bw)


def matmul(a: Var, b: Var) -> Var:
    """2-D matrix product a @ b."""

    def bw(g, a=a, b=b):
        a.accumulate(g @ b.value.T)
        b.accumulate(a.value.T @ g)

    return Var(a.value @ b.value, (a, b), bw)


def matmul_t(a: Var, b: Var) -> Var:
    """a @ b.T for 2-D operands sharing their trailing dimension.

    Covers both the dense layer (x @ W.T) and the branch/trunk merge, where
    the output is the p-term inner product of per-row embeddings.
    """

    def bw(g, a=a, b=b):
        a.accumulate(g @ b.value)
        b.accumulate(g.T @ a.value)

    return Var(a.value @ b.value.T, (a, b), bw)


def reshape(a: Var, shape) -> Var:
    shape = tuple(shape)

    def bw(g, a=a):
        a.accumulate(g.reshape(a.value.shape))

    return Var(a.value.reshape(shape), (a,), bw)


def col_slice(a: Var, j0: int, j1: int) -> Var:
    """Columns [j0, j1) of a 2-D node."""

    def bw(g, a=a, j0=j0, j1=j1):
        a.accumulate_at((slice(None), slice(j0, j1)), g)

    return Var(a.value[:, j0:j1], (a,), bw)


def timestep(a: Var, t: int) -> Var:
    """Frame t of a [batch, time, features] node."""

    def bw(g, a=a, t=t):
        a.accumulate_at((slice(None), t, slice(None)), g)

    return Var(a.value[:, t, :], (a,), bw)


def stack_time(frames: list[Var]) -> Var:
    """Stack [batch, features] nodes into [batch, time, features]."""

    def bw(g, frames=frames):
        for t, f in enumerate(frames):
            f.accumulate(g[:, t, :])

    return Var(np.stack([f.value for f in frames], axis=1), tuple(frames), bw)


def sigmoid(a: Var) -> Var:
    s = expit(a.value)

    def bw(g, a=a, s=s):
        a.accumulate(g * (s * (1.0 - s)))

    return Var(s, (a,), bw)


def tanh(a: Var) -> Var:
    t = np.tanh(a.value)

    def bw(g, a=a, t=t):
        a.accumulate(g * (1.0 - t * t))

    return Var(t, (a,), bw)


def swish(a: Var) -> Var:
    """x * sigmoid(x)."""
    s = expit(a.value)
    out = a.value * s

    def bw(g, a=a, s=s):
        a.accumulate(g * (s * (1.0 + a.value * (1.0 - s))))

    return Var(out, (a,), bw)


def sum_all(a: Var) -> Var:
    """Scalar sum over all entries."""

    def bw(g, a=a):
        if a.grad is None:
            a.grad = np.full(a.value.shape, float(g))
        else:
            a.grad += g

    return Var(a.value.sum(), (a,), bw)


def backward(root: Var) -> None:
    """Seed the root with a unit adjoint and propagate through the tape."""
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
