"""Reverse-mode automatic differentiation on a dynamic tape.

A Tensor wraps a float64 numpy array and records the op that produced it.
``backward()`` on a scalar runs the reverse sweep and accumulates gradients
into every reachable leaf. Broadcasting follows numpy rules; gradients of
broadcast operands are summed back to the operand's shape.

Second-order support comes for free: forward-mode tangent channels are
expressed as ordinary tape ops (see network.forward_with_tangents), so a
loss built from directional derivatives is still a differentiable scalar
and the reverse sweep through it is exact.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["Tensor", "tanh", "logcosh", "absval", "logcosh_np"]

_LN2 = math.log(2.0)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcast to produce it."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Node in the tape: a value, an accumulated gradient, and its parents."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    # keep numpy from consuming Tensors in mixed expressions; binary ops
    # then fall through to the reflected Tensor methods
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._vjp = vjp  # maps the output cotangent to parent cotangents

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def backward(self) -> None:
        """Reverse sweep seeding d(self)/d(self) = 1; requires a scalar."""
        if self.value.size != 1:
            raise ValueError("backward requires a scalar tensor")
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
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.value))
        for node in reversed(order):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)

    # ----- arithmetic -----

    def _as_tensor(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        o = self._as_tensor(other)
        out = Tensor(self.value + o.value, (self, o))

        def vjp(g):
            self._accumulate(_unbroadcast(g, self.value.shape))
            o._accumulate(_unbroadcast(g, o.value.shape))

        out._vjp = vjp
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.value, (self,))
        out._vjp = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other):
        o = self._as_tensor(other)
        out = Tensor(self.value - o.value, (self, o))

        def vjp(g):
            self._accumulate(_unbroadcast(g, self.value.shape))
            o._accumulate(_unbroadcast(-g, o.value.shape))

        out._vjp = vjp
        return out

    def __rsub__(self, other):
        return self._as_tensor(other) - self

    def __mul__(self, other):
        o = self._as_tensor(other)
        out = Tensor(self.value * o.value, (self, o))

        def vjp(g):
            self._accumulate(_unbroadcast(g * o.value, self.value.shape))
            o._accumulate(_unbroadcast(g * self.value, o.value.shape))

        out._vjp = vjp
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._as_tensor(other)
        out = Tensor(self.value / o.value, (self, o))

        def vjp(g):
            self._accumulate(_unbroadcast(g / o.value, self.value.shape))
            o._accumulate(_unbroadcast(-g * self.value / o.value**2, o.value.shape))

        out._vjp = vjp
        return out

    def __rtruediv__(self, other):
        return self._as_tensor(other) / self

    def __matmul__(self, other):
        o = self._as_tensor(other)
        out = Tensor(self.value @ o.value, (self, o))

        def vjp(g):
            self._accumulate(_unbroadcast(g @ np.swapaxes(o.value, -1, -2), self.value.shape))
            o._accumulate(_unbroadcast(np.swapaxes(self.value, -1, -2) @ g, o.value.shape))

        out._vjp = vjp
        return out

    def __pow__(self, exponent: float):
        out = Tensor(self.value**exponent, (self,))
        out._vjp = lambda g: self._accumulate(g * exponent * self.value ** (exponent - 1))
        return out

    # ----- reductions and shaping -----

    def sum(self, axis=None):
        out = Tensor(self.value.sum(axis=axis), (self,))

        def vjp(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.value.shape).copy())
            else:
                self._accumulate(np.broadcast_to(np.expand_dims(g, axis), self.value.shape).copy())

        out._vjp = vjp
        return out

    def mean(self, axis=None):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def reshape(self, *shape):
        out = Tensor(self.value.reshape(*shape), (self,))
        out._vjp = lambda g: self._accumulate(g.reshape(self.value.shape))
        return out


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.value)
    out = Tensor(t, (x,))
    out._vjp = lambda g: x._accumulate(g * (1.0 - t * t))
    return out


def absval(x: Tensor) -> Tensor:
    out = Tensor(np.abs(x.value), (x,))
    out._vjp = lambda g: x._accumulate(g * np.sign(x.value))
    return out


def logcosh(x: Tensor) -> Tensor:
    """log(cosh(x)) evaluated as |x| + log1p(exp(-2|x|)) - log 2 (no overflow)."""
    a = np.abs(x.value)
    out = Tensor(a + np.log1p(np.exp(-2.0 * a)) - _LN2, (x,))
    out._vjp = lambda g: x._accumulate(g * np.tanh(x.value))
    return out


def logcosh_np(x: np.ndarray) -> np.ndarray:
    """Tape-free twin of logcosh for diagnostics and reporting paths."""
    a = np.abs(x)
    return a + np.log1p(np.exp(-2.0 * a)) - _LN2
