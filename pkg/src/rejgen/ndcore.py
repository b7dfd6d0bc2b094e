"""Dense float64 tensors with reverse-mode automatic differentiation.

Small tape-based engine in the micrograd style, but array-valued and backed
by numpy. Every op records a backward closure; calling ``backward()`` on a
scalar root walks the tape in reverse topological order and accumulates
gradients into the leaves. Only the operations the seq2seq model needs are
provided; broadcasting support is limited to what those ops use.
"""

from __future__ import annotations

import numpy as np

EPS = 1e-12  # clamp for log / division guards


class ShapeError(ValueError):
    """Raised when two operands have incompatible shapes."""


class NDCoreError(RuntimeError):
    pass


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape construction (forward-only mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self.prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self.prev
        return False


def grad_enabled():
    return _GRAD_ENABLED


class Tensor:
    """A float64 array plus the autodiff bookkeeping for one graph node."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._prev = ()

    # -- helpers -----------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data)

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g)  # own a copy; g may be shared by siblings
        else:
            self.grad += g

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        """Reverse pass from this node. Root must be scalar."""
        if self.data.size != 1:
            raise NDCoreError(
                f"backward requires a scalar root, got shape {self.data.shape}"
            )
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad or p._prev for p in parents):
        out.requires_grad = any(p.requires_grad for p in parents)
        out._prev = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to the given operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- primitive ops ---------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} vs {b.shape}")

    def bw(g):
        a._accum(_unbroadcast(g, a.data.shape))
        b._accum(_unbroadcast(g, b.data.shape))

    return _node(data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} vs {b.shape}")

    def bw(g):
        a._accum(_unbroadcast(g * b.data, a.data.shape))
        b._accum(_unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} vs {b.shape}")

    if a.data.ndim > 2 and b.data.ndim == 2:
        # (..., K) @ (K, N): flatten to one dgemm instead of a batched loop
        K = a.data.shape[-1]
        a2 = a.data.reshape(-1, K)
        data = (a2 @ b.data).reshape(*a.data.shape[:-1], b.data.shape[1])

        def bw(g):
            g2 = g.reshape(-1, b.data.shape[1])
            a._accum((g2 @ b.data.T).reshape(a.data.shape))
            b._accum(a2.T @ g2)

        return _node(data, (a, b), bw)

    data = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        a._accum(_unbroadcast(ga, a.data.shape))
        b._accum(_unbroadcast(gb, b.data.shape))

    return _node(data, (a, b), bw)


def log(a):
    """Natural log; input clamped at EPS to stay finite."""
    a = as_tensor(a)
    clamped = np.maximum(a.data, EPS)
    data = np.log(clamped)

    def bw(g):
        a._accum(g / clamped * (a.data >= EPS))

    return _node(data, (a,), bw)


def exp(a):
    a = as_tensor(a)
    data = np.exp(a.data)

    def bw(g):
        a._accum(g * data)

    return _node(data, (a,), bw)


def relu(a):
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def bw(g):
        a._accum(g * (a.data > 0))

    return _node(data, (a,), bw)


def tanh(a):
    a = as_tensor(a)
    data = np.tanh(a.data)

    def bw(g):
        a._accum(g * (1.0 - data * data))

    return _node(data, (a,), bw)


def power(a, p):
    a = as_tensor(a)
    data = a.data ** p

    def bw(g):
        a._accum(g * p * a.data ** (p - 1))

    return _node(data, (a,), bw)


def softmax(a, axis=-1):
    """Numerically stable softmax (rowwise max subtracted before exp)."""
    a = as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise NDCoreError("softmax: input contains non-finite values")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        a._accum(data * (g - dot))

    return _node(data, (a,), bw)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            a._accum(np.full_like(a.data, float(g)))
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.data.shape).copy())

    return _node(data, (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def tmax(a, axis=None, keepdims=False):
    """Max reduction; gradient flows to the first argmax position."""
    a = as_tensor(a)
    data = a.data.max(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            mask = np.zeros_like(a.data)
            mask[np.unravel_index(np.argmax(a.data), a.data.shape)] = 1.0
            a._accum(mask * float(g))
        else:
            expand = data if keepdims else np.expand_dims(data, axis)
            ge = g if keepdims else np.expand_dims(g, axis)
            mask = (a.data == expand)
            # split ties evenly so the gradient check stays well-defined
            mask = mask / mask.sum(axis=axis, keepdims=True)
            a._accum(mask * ge)

    return _node(data, (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accum(g[tuple(idx)])

    return _node(data, tensors, bw)


def embed(table, ids):
    """Embedding lookup: rows of `table` gathered by an integer id array."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise NDCoreError(
            f"embed: id out of range [0, {table.data.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}"
        )
    data = table.data[ids]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        table._accum(gt)

    return _node(data, (table,), bw)


def mask_fill(a, mask, value):
    """Where mask is True, replace entries of `a` by `value` (no grad there)."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    data = np.where(mask, value, a.data)

    def bw(g):
        a._accum(np.where(mask, 0.0, g))

    return _node(data, (a,), bw)


def where(cond, a, b):
    """Elementwise select; gradient flows only through the chosen branch."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    data = np.where(cond, a.data, b.data)

    def bw(g):
        a._accum(_unbroadcast(np.where(cond, g, 0.0), a.data.shape))
        b._accum(_unbroadcast(np.where(cond, 0.0, g), b.data.shape))

    return _node(data, (a, b), bw)


def reshape(a, shape):
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def bw(g):
        a._accum(g.reshape(a.data.shape))

    return _node(data, (a,), bw)


def transpose(a, axes):
    a = as_tensor(a)
    data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def bw(g):
        a._accum(np.transpose(g, inv))

    return _node(data, (a,), bw)


def gather_last(a, idx):
    """Pick one entry along the last axis per leading position.

    a: (..., K), idx: (...) integer -> out shape (...).
    """
    a = as_tensor(a)
    idx = np.asarray(idx)
    lead = np.indices(idx.shape)
    data = a.data[(*lead, idx)]

    def bw(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (*lead, idx), g)
        a._accum(ga)

    return _node(data, (a,), bw)


def dropout(a, rate, rng):
    """Inverted dropout with a seeded Generator; identity when rate == 0."""
    if rate <= 0.0:
        return a
    a = as_tensor(a)
    keep = (rng.random(a.data.shape, dtype=np.float32) >= rate) / (1.0 - rate)
    return mul(a, keep)
