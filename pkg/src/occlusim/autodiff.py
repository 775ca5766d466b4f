"""Minimal reverse-mode autodiff on dense numpy arrays.

Tape-based: each op records its parents and a backward closure. Only the ops
needed by the polyline encoder / actor-critic stack are implemented.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad", "name")

    def __init__(self, value, parents=(), backward=None, requires_grad=False, name=""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        g = _unbroadcast(np.asarray(g, dtype=np.float64), self.value.shape)
        self.grad = g if self.grad is None else self.grad + g

    def backward(self):
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen = set()

        def visit(t: Tensor):
            stack = [(t, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    topo.append(node)
                    continue
                if id(node) in seen or not node.requires_grad:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for p in node.parents:
                    stack.append((p, False))

        visit(self)
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.value + other.value, (self, other))
        out._backward = lambda g: (self._accum(g), other._accum(g))
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.value - other.value, (self, other))
        out._backward = lambda g: (self._accum(g), other._accum(-g))
        return out

    def __rsub__(self, other):
        return _as_tensor(other) - self

    def __mul__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.value * other.value, (self, other))
        out._backward = lambda g: (self._accum(g * other.value), other._accum(g * self.value))
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.value / other.value, (self, other))
        out._backward = lambda g: (self._accum(g / other.value),
                                   other._accum(-g * self.value / other.value ** 2))
        return out

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        """Matrix product; leading batch dimensions broadcast as in numpy."""
        other = _as_tensor(other)
        out = Tensor(self.value @ other.value, (self, other))

        def bw(g):
            self._accum(g @ np.swapaxes(other.value, -1, -2))
            other._accum(np.swapaxes(self.value, -1, -2) @ g)

        out._backward = bw
        return out

    # -- shaping ------------------------------------------------------------

    def reshape(self, *shape):
        orig = self.value.shape
        out = Tensor(self.value.reshape(*shape), (self,))
        out._backward = lambda g: self._accum(g.reshape(orig))
        return out

    @property
    def T(self):
        """Transpose of the last two axes (plain transpose for 2-D)."""
        out = Tensor(np.swapaxes(self.value, -1, -2), (self,))
        out._backward = lambda g: self._accum(np.swapaxes(g, -1, -2))
        return out

    # -- reductions & nonlinearities ----------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.value.sum(axis=axis, keepdims=keepdims), (self,))

        def bw(g):
            if axis is None:
                self._accum(np.broadcast_to(g, self.value.shape))
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._accum(np.broadcast_to(gg, self.value.shape))

        out._backward = bw
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def relu(self):
        mask = self.value > 0
        out = Tensor(self.value * mask, (self,))
        out._backward = lambda g: self._accum(g * mask)
        return out

    def tanh(self):
        t = np.tanh(self.value)
        out = Tensor(t, (self,))
        out._backward = lambda g: self._accum(g * (1.0 - t * t))
        return out

    def exp(self):
        e = np.exp(self.value)
        out = Tensor(e, (self,))
        out._backward = lambda g: self._accum(g * e)
        return out

    def log(self):
        out = Tensor(np.log(self.value), (self,))
        out._backward = lambda g: self._accum(g / self.value)
        return out

    def square(self):
        return self * self

    def clip(self, lo, hi):
        """Clamp values; gradient is zero outside [lo, hi]."""
        inside = (self.value >= lo) & (self.value <= hi)
        out = Tensor(np.clip(self.value, lo, hi), (self,))
        out._backward = lambda g: self._accum(g * inside)
        return out


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; gradient follows the selected branch (ties go to a)."""
    take_a = a.value <= b.value
    out = Tensor(np.where(take_a, a.value, b.value), (a, b))

    def bw(g):
        a._accum(g * take_a)
        b._accum(g * ~take_a)

    out._backward = bw
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(value) -> Tensor:
    return Tensor(value)


def parameter(value, name="") -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


def masked_max(x: Tensor, mask: np.ndarray, axis: int) -> Tensor:
    """Max over `axis` considering only entries where mask is True.

    Gradient routes solely to the argmax entry. Slices with no valid entry
    produce 0 and receive no gradient.
    """
    mask = np.asarray(mask, dtype=bool)
    neg = np.where(mask, x.value, -np.inf)
    any_valid = mask.any(axis=axis)
    raw = np.max(neg, axis=axis)
    val = np.where(any_valid, raw, 0.0)
    arg = np.argmax(neg, axis=axis)
    out = Tensor(val, (x,))

    def bw(g):
        gx = np.zeros_like(x.value)
        idx = list(np.indices(val.shape))
        idx.insert(axis, arg)
        gx[tuple(idx)] = np.where(any_valid, g, 0.0)
        x._accum(gx)

    out._backward = bw
    return out


def masked_softmax(scores: Tensor, key_mask: np.ndarray) -> Tensor:
    """Row-wise softmax over the last axis restricted to valid keys.

    Rows with no valid key yield all zeros.
    """
    key_mask = np.broadcast_to(np.asarray(key_mask, dtype=bool), scores.value.shape)
    masked = np.where(key_mask, scores.value, -np.inf)
    row_has = key_mask.any(axis=-1, keepdims=True)
    m = np.max(np.where(row_has, masked, 0.0), axis=-1, keepdims=True)
    e = np.where(key_mask, np.exp(masked - m), 0.0)
    z = e.sum(axis=-1, keepdims=True)
    p = np.where(row_has, e / np.where(z == 0.0, 1.0, z), 0.0)
    out = Tensor(p, (scores,))

    def bw(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        scores._accum(p * (g - dot))

    out._backward = bw
    return out


class Adam:
    """Adam over a list of parameter Tensors."""

    def __init__(self, params: list[Tensor], lr: float = 3e-4,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mhat = self.m[i] / (1 - self.b1 ** self.t)
            vhat = self.v[i] / (1 - self.b2 ** self.t)
            p.value -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm
