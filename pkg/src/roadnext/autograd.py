"""Minimal reverse-mode automatic differentiation over numpy arrays.

The engine is deliberately small: a ``Tensor`` wraps an ndarray, records its
parents and a backward closure, and ``backward()`` walks the graph in reverse
topological order with a fixed, deterministic accumulation order.  Everything
the sequence model needs (matmul, elementwise ops, reductions, slicing,
concatenation, a masked softmax) is a primitive here; higher-level blocks
(layer norm, attention) are composed from these primitives.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # sum out prepended axes
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward
        self.name = name

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def as_tensor(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x))

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def _accum(self, g):
        g = _unbroadcast(np.asarray(g), self.data.shape)
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = Tensor.as_tensor(other)
        out = Tensor(self.data + other.data, parents=(self, other))
        def backward(g):
            self._accum(g)
            other._accum(g)
        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, parents=(self,))
        out._backward = lambda g: self._accum(-g)
        return out

    def __sub__(self, other):
        return self + (-Tensor.as_tensor(other))

    def __rsub__(self, other):
        return Tensor.as_tensor(other) + (-self)

    def __mul__(self, other):
        other = Tensor.as_tensor(other)
        out = Tensor(self.data * other.data, parents=(self, other))
        def backward(g):
            self._accum(g * other.data)
            other._accum(g * self.data)
        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor.as_tensor(other)
        out = Tensor(self.data / other.data, parents=(self, other))
        def backward(g):
            self._accum(g / other.data)
            other._accum(-g * self.data / (other.data ** 2))
        out._backward = backward
        return out

    def __rtruediv__(self, other):
        return Tensor.as_tensor(other) / self

    def __pow__(self, exponent: float):
        out = Tensor(self.data ** exponent, parents=(self,))
        out._backward = lambda g: self._accum(g * exponent * self.data ** (exponent - 1))
        return out

    def __matmul__(self, other):
        other = Tensor.as_tensor(other)
        out = Tensor(self.data @ other.data, parents=(self, other))
        def backward(g):
            a, b = self.data, other.data
            if a.ndim == 1 and b.ndim == 1:
                self._accum(g * b)
                other._accum(g * a)
            elif a.ndim == 1:
                self._accum(b @ g)
                other._accum(np.outer(a, g))
            elif b.ndim == 1:
                self._accum(np.expand_dims(g, -1) * b)
                other._accum((a * np.expand_dims(g, -1)).reshape(-1, a.shape[-1]).sum(axis=0))
            else:
                self._accum(g @ np.swapaxes(b, -1, -2))
                other._accum(np.swapaxes(a, -1, -2) @ g)
        out._backward = backward
        return out

    # -- elementwise nonlinearities -------------------------------------------

    def exp(self):
        e = np.exp(self.data)
        out = Tensor(e, parents=(self,))
        out._backward = lambda g: self._accum(g * e)
        return out

    def log(self):
        out = Tensor(np.log(self.data), parents=(self,))
        out._backward = lambda g: self._accum(g / self.data)
        return out

    def sqrt(self):
        s = np.sqrt(self.data)
        out = Tensor(s, parents=(self,))
        out._backward = lambda g: self._accum(g * 0.5 / s)
        return out

    def tanh(self):
        t = np.tanh(self.data)
        out = Tensor(t, parents=(self,))
        out._backward = lambda g: self._accum(g * (1.0 - t * t))
        return out

    def sigmoid(self):
        s = 1.0 / (1.0 + np.exp(-self.data))
        out = Tensor(s, parents=(self,))
        out._backward = lambda g: self._accum(g * s * (1.0 - s))
        return out

    def softplus(self):
        # stable: log1p(exp(-|x|)) + max(x, 0)
        x = self.data
        sp = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)
        out = Tensor(sp, parents=(self,))
        out._backward = lambda g: self._accum(g / (1.0 + np.exp(-x)))
        return out

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), parents=(self,))
        out._backward = lambda g: self._accum(g * (self.data > 0))
        return out

    def clip_min(self, lo: float):
        """max(x, lo); gradient passes only where x > lo."""
        out = Tensor(np.maximum(self.data, lo), parents=(self,))
        out._backward = lambda g: self._accum(g * (self.data > lo))
        return out

    # -- reductions & reshaping -----------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,))
        def backward(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.data.shape))
        out._backward = backward
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), parents=(self,))
        out._backward = lambda g: self._accum(np.asarray(g).reshape(self.data.shape))
        return out

    def transpose(self, *axes):
        axes = axes or None
        out = Tensor(self.data.transpose(axes), parents=(self,))
        inv = np.argsort(axes) if axes else None
        out._backward = lambda g: self._accum(np.asarray(g).transpose(inv))
        return out

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        out = Tensor(self.data[idx], parents=(self,))
        def backward(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accum(full)
        out._backward = backward
        return out

    # -- graph traversal ------------------------------------------------------

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad requires a scalar output")
            grad = np.ones_like(self.data)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None and node.requires_grad:
                node._backward(node.grad)


# -- free functions ------------------------------------------------------------


def concat(tensors, axis=0) -> Tensor:
    tensors = [Tensor.as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    def backward(g):
        g = np.asarray(g)
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accum(g[tuple(sl)])
    out._backward = backward
    return out


def stack(tensors, axis=0) -> Tensor:
    tensors = [Tensor.as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis), parents=tuple(tensors))
    def backward(g):
        g = np.asarray(g)
        for i, t in enumerate(tensors):
            t._accum(np.take(g, i, axis=axis))
    out._backward = backward
    return out


def masked_softmax(logits: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over entries where mask > 0; masked entries get probability 0.

    Every row (along `axis`) must have at least one unmasked entry.
    """
    mask = np.asarray(mask) > 0
    x = logits.data
    guarded = np.where(mask, x, -np.inf)
    m = np.max(guarded, axis=axis, keepdims=True)
    e = np.where(mask, np.exp(x - m), 0.0)
    z = e.sum(axis=axis, keepdims=True)
    p = e / z
    out = Tensor(p, parents=(logits,))
    def backward(g):
        inner = (g * p).sum(axis=axis, keepdims=True)
        logits._accum(p * (g - inner))
    out._backward = backward
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = (var + eps) ** -0.5
    return centered * inv * gamma + beta
