"""A small dense-tensor library with reverse-mode automatic differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients.  Calling
:meth:`Tensor.backward` on a scalar walks the graph in reverse topological
order and accumulates ``.grad`` on every tensor that requires it.

Broadcasting is deliberately narrow.  Elementwise ``add`` accepts a second
operand whose shape is a trailing suffix of the first (row-wise bias, or a
positional table added to every sequence of a batch).  ``matmul`` accepts equal
leading batch dimensions or a 2-D right operand.  Every other mismatch raises
:class:`ShapeError`.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "sum",
    "mean",
    "exp",
    "log",
    "relu",
    "softmax_rows",
    "layer_norm",
    "embedding_gather",
    "slice_rows",
    "masked_fill",
    "multiply_mask",
    "dropout",
    "l2_normalize",
    "cosine_similarity",
    "cross_entropy_from_logits",
    "check_finite",
]


class Tensor:
    """An n-dimensional array that can take part in gradient computation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self.grad = np.asarray(grad, dtype=self.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior nodes do not need to keep their gradient around
                if node._parents:
                    node.grad = None if node is not self else node.grad


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def _accumulate(t, g):
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=t.dtype)
    if t.grad is None:
        t.grad = g.copy() if g.base is not None or g is t.data else g
    else:
        t.grad = t.grad + g


def _make(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=parents if req else (), _backward=backward if req else None)


# -- elementwise -------------------------------------------------------------


def add(a, b):
    """Elementwise sum; ``b`` may have a trailing-suffix shape of ``a``."""
    if a.shape != b.shape and (b.ndim > a.ndim or a.shape[a.ndim - b.ndim:] != b.shape):
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")
    lead = tuple(range(a.ndim - b.ndim))

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g.sum(axis=lead) if lead else g)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"cannot subtract shapes {a.shape} and {b.shape}")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _make(a.data * b.data, (a, b), backward)


def scale(a, c):
    c = float(c)

    def backward(g):
        _accumulate(a, g * c)

    return _make(a.data * a.dtype.type(c), (a,), backward)


def exp(a):
    out = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out)

    return _make(out, (a,), backward)


def log(a):
    def backward(g):
        _accumulate(a, g / a.data)

    return _make(np.log(a.data), (a,), backward)


def relu(a):
    pos = a.data > 0

    def backward(g):
        _accumulate(a, g * pos)

    return _make(np.where(pos, a.data, 0).astype(a.dtype), (a,), backward)


def multiply_mask(a, mask):
    """Multiply by a constant array broadcastable to ``a`` (no gradient to the mask)."""
    m = np.asarray(mask, dtype=a.dtype)
    try:
        out = a.data * m
    except ValueError as exc:
        raise ShapeError(f"mask of shape {m.shape} does not broadcast to {a.shape}") from exc
    if out.shape != a.shape:
        raise ShapeError(f"mask of shape {m.shape} would change shape {a.shape}")

    def backward(g):
        _accumulate(a, g * m)

    return _make(out, (a,), backward)


def masked_fill(a, keep, value):
    """Replace entries where ``keep`` is False by the constant ``value``."""
    keep = np.asarray(keep, dtype=bool)
    out = np.where(keep, a.data, a.dtype.type(value))
    if out.shape != a.shape:
        raise ShapeError(f"mask of shape {keep.shape} would change shape {a.shape}")

    def backward(g):
        _accumulate(a, np.where(keep, g, 0))

    return _make(out, (a,), backward)


def dropout(a, rate, rng, training=True):
    if not training or rate == 0.0:
        return a
    keep = rng.random(a.shape, dtype=np.float32) >= rate
    return multiply_mask(a, keep / (1.0 - rate))


# -- reductions and shape ----------------------------------------------------


def sum(a, axis=None):
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape))
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _make(np.asarray(out, dtype=a.dtype), (a,), backward)


def mean(a, axis=None):
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


def reshape(a, shape):
    out = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(out, (a,), backward)


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    inverse = np.argsort(axes)

    def backward(g):
        _accumulate(a, g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), backward)


# -- linear algebra ----------------------------------------------------------


def matmul(a, b):
    """Matrix product over the last two axes.

    ``a`` is ``(..., m, k)``; ``b`` is either ``(k, n)`` or has the same leading
    dimensions as ``a``.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    shared = b.ndim == 2
    if a.shape[-1] != b.shape[-2] or (not shared and a.shape[:-2] != b.shape[:-2]):
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")

    def backward(g):
        if a.requires_grad:
            if shared:
                ga = (g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.shape)
            else:
                ga = g @ np.swapaxes(b.data, -1, -2)
            _accumulate(a, ga)
        if b.requires_grad:
            if shared:
                k = a.shape[-1]
                _accumulate(b, a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]))
            else:
                _accumulate(b, np.swapaxes(a.data, -1, -2) @ g)

    if shared and a.ndim > 2:
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))
    else:
        out = a.data @ b.data
    return _make(out, (a, b), backward)


# -- neural-network primitives -----------------------------------------------


def softmax_rows(x):
    """Softmax over the last axis with per-row max subtraction."""
    check_finite(x, "softmax input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        _accumulate(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _make(y, (x,), backward)


def layer_norm(x, gamma, beta, eps=1e-5):
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}, {beta.shape} do not match width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        if x.requires_grad:
            dxhat = g * gamma.data
            dx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
            _accumulate(x, dx)
        _accumulate(gamma, (g * xhat).sum(axis=lead))
        _accumulate(beta, g.sum(axis=lead))

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), backward)


def embedding_gather(table, indices):
    """Rows of a 2-D ``table`` selected by an integer array of any shape."""
    idx = np.asarray(indices)
    if idx.dtype.kind not in "iu":
        raise TypeError("indices must be integers")
    n = table.shape[0]
    if idx.size:
        bad = idx[(idx < 0) | (idx >= n)]
        if bad.size:
            raise IndexError(f"index {int(bad[0])} out of range for table with {n} rows")
    out = table.data[idx]

    def backward(g):
        if table.requires_grad:
            _accumulate(table, _scatter_rows(idx.ravel(), g.reshape(-1, table.shape[1]), table.data))

    return _make(out, (table,), backward)


def _scatter_rows(idx, rows, like):
    """Sum ``rows`` into a zero array shaped like ``like`` at row positions ``idx``."""
    full = np.zeros_like(like)
    if idx.size == 0:
        return full
    order = np.argsort(idx, kind="stable")
    sidx = idx[order]
    uniq, starts = np.unique(sidx, return_index=True)
    if len(uniq) == len(sidx):
        full[sidx] = rows[order]
    else:
        full[uniq] = np.add.reduceat(rows[order], starts, axis=0)
    return full


def slice_rows(table, start, stop=None):
    stop = table.shape[0] if stop is None else stop

    def backward(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            full[start:stop] = g
            _accumulate(table, full)

    return _make(table.data[start:stop], (table,), backward)


def l2_normalize(x, eps=1e-8):
    """``x / (||x|| + eps)`` along the last axis."""
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    denom = norm + eps
    y = x.data / denom

    def backward(g):
        safe = np.where(norm > 0, norm, 1.0)
        proj = (g * x.data).sum(axis=-1, keepdims=True)
        _accumulate(x, g / denom - x.data * proj / (denom * denom * safe))

    return _make(y, (x,), backward)


def cosine_similarity(a, b, eps=1e-8):
    """Cosine of the angle between two vectors; ``eps`` is added to each norm."""
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity shapes differ: {a.shape} vs {b.shape}")
    return sum(mul(l2_normalize(a, eps), l2_normalize(b, eps)), axis=-1)


def cross_entropy_from_logits(logits, targets):
    """Mean negative log-likelihood of ``targets`` under row-wise softmax."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got {logits.shape}")
    m, n = logits.shape
    t = np.asarray(targets)
    if t.shape != (m,):
        raise ShapeError(f"targets shape {t.shape} does not match {m} rows")
    if m == 0:
        raise ShapeError("cross-entropy over zero rows is undefined")
    bad = t[(t < 0) | (t >= n)]
    if bad.size:
        raise IndexError(f"target {int(bad[0])} out of range for {n} classes")
    check_finite(logits, "logits")
    x = logits.data
    mx = x.max(axis=1, keepdims=True)
    e = np.exp(x - mx)
    s = e.sum(axis=1, keepdims=True)
    lse = (mx + np.log(s))[:, 0]
    rows = np.arange(m)
    loss = (lse - x[rows, t]).mean()

    def backward(g):
        p = e / s
        p[rows, t] -= 1
        _accumulate(logits, p * (g / m))

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def check_finite(t, what="tensor"):
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values in {what}")
