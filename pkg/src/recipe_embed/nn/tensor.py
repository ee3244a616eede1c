"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every op builds a node holding its value, its parents and a closure that
pushes the upstream gradient to those parents. ``Tensor.backward`` walks the
graph in reverse topological order.
"""

from __future__ import annotations

import contextlib

import numpy as np

from recipe_embed.errors import DegenerateInputError, DimensionError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Run ops without recording them (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every leaf that requires grad."""
        if not self.requires_grad:
            return
        order = _toposort(self)
        for node in order:
            if node._parents:
                node.grad = None
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        if self.grad is None or self._parents:
            self.grad = seed.copy()
        else:
            self.grad = self.grad + seed
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


class Param(Tensor):
    """A learnable leaf. ``frozen`` params are skipped by the optimizers."""

    __slots__ = ("frozen",)

    def __init__(self, data, name=None, frozen=False):
        super().__init__(data, requires_grad=True, name=name)
        self.frozen = frozen

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.shape}, frozen={self.frozen})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root):
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _make(value, parents, backward):
    out = Tensor.__new__(Tensor)
    out.data = value
    out.grad = None
    out.name = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise ---------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def neg(a):
    def backward(g):
        _accum(a, -g)

    return _make(-a.data, (a,), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def scale(a, c):
    """Multiply by a python scalar."""
    c = float(c)

    def backward(g):
        _accum(a, g * c)

    return _make(a.data * c, (a,), backward)


def _stable_sigmoid(x):
    x = np.clip(x, -30.0, 30.0)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    s = _stable_sigmoid(a.data)

    def backward(g):
        _accum(a, g * s * (1.0 - s))

    return _make(s, (a,), backward)


def tanh(a):
    t = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - t * t))

    return _make(t, (a,), backward)


def relu(a):
    mask = a.data > 0

    def backward(g):
        _accum(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), backward)


def blend(new, old, mask):
    """``mask * new + (1 - mask) * old`` for a constant 0/1 mask of shape (B, 1)."""
    m = np.asarray(mask, dtype=np.float64)

    def backward(g):
        _accum(new, g * m)
        _accum(old, g * (1.0 - m))

    return _make(m * new.data + (1.0 - m) * old.data, (new, old), backward)


# shape ops -------------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not conform")

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward)


def transpose(a):
    def backward(g):
        _accum(a, g.T)

    return _make(a.data.T, (a,), backward)


def reshape(a, shape):
    orig = a.shape

    def backward(g):
        _accum(a, g.reshape(orig))

    return _make(a.data.reshape(shape), (a,), backward)


def getitem(a, idx):
    def backward(g):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _make(a.data[idx], (a,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accum(t, g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                _accum(t, np.take(g, i, axis=axis))

    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def tsum(a, axis=None):
    shape = a.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, shape))

    return _make(np.asarray(a.data.sum(axis=axis)), (a,), backward)


def tmean(a, axis=None):
    n = a.data.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis), 1.0 / n)


# layers ------------------------------------------------------------------

def linear(x, W, b=None):
    """``x @ W.T + b`` for x of shape (n, in) and W of shape (out, in)."""
    x = as_tensor(x)
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise DimensionError(f"linear: bias {b.shape} does not match weight {W.shape}")
    y = x.data @ W.data.T
    if b is not None:
        y = y + b.data

    def backward(g):
        if x.requires_grad:
            _accum(x, g @ W.data)
        if W.requires_grad:
            _accum(W, g.T @ x.data)
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=0))

    parents = (x, W) if b is None else (x, W, b)
    return _make(y, parents, backward)


def embedding(W, ids):
    return getitem(W, np.asarray(ids, dtype=np.intp))


def cosine_similarity(a, b, eps=1e-12):
    """Row-wise cosine between (n, d) tensors, or between two (d,) vectors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cosine: shapes {a.shape} and {b.shape} differ")
    A, B = a.data, b.data
    na = np.sqrt((A * A).sum(axis=-1, keepdims=True))
    nb = np.sqrt((B * B).sum(axis=-1, keepdims=True))
    if np.any(na <= eps) or np.any(nb <= eps):
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    An, Bn = A / na, B / nb
    cos = (An * Bn).sum(axis=-1, keepdims=True)

    def backward(g):
        g = np.expand_dims(g, -1)
        if a.requires_grad:
            _accum(a, g * (Bn - cos * An) / na)
        if b.requires_grad:
            _accum(b, g * (An - cos * Bn) / nb)

    return _make(np.clip(cos[..., 0], -1.0, 1.0), (a, b), backward)


def _check_labels(labels, k):
    labels = np.asarray(labels, dtype=np.intp)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        from recipe_embed.errors import LabelError

        raise LabelError(f"labels must lie in [0, {k}); got range [{labels.min()}, {labels.max()}]")
    return labels


def softmax_cross_entropy(logits, labels, weights=None, reduction="mean"):
    """Negative log softmax probability of the true class.

    ``reduction="mean"`` averages over rows (weighted if ``weights`` given);
    ``"none"`` returns the per-row losses.
    """
    if logits.ndim != 2:
        raise DimensionError(f"logits must be (n, K), got {logits.shape}")
    n, k = logits.shape
    labels = _check_labels(labels, k)
    if labels.shape != (n,):
        raise DimensionError(f"{labels.shape[0] if labels.ndim else 0} labels for {n} rows")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    nll = logsumexp - z[np.arange(n), labels]
    probs = np.exp(z - logsumexp[:, None])
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), labels] = 1.0

    if reduction == "none":
        def backward(g):
            _accum(logits, g[:, None] * (probs - onehot))

        return _make(nll, (logits,), backward)

    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise DegenerateInputError("cross entropy over zero total weight")
    loss = float((w * nll).sum() / total)

    def backward(g):
        _accum(logits, g * (w / total)[:, None] * (probs - onehot))

    return _make(np.asarray(loss), (logits,), backward)


def binary_cross_entropy_with_logits(logits, targets, weights=None):
    """Mean (optionally weighted) logistic loss."""
    x = logits.data
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != x.shape:
        raise DimensionError(f"targets {t.shape} do not match logits {x.shape}")
    w = np.ones_like(x) if weights is None else np.broadcast_to(np.asarray(weights, dtype=np.float64), x.shape)
    total = w.sum()
    if total <= 0:
        raise DegenerateInputError("logistic loss over zero total weight")
    # log(1 + exp(-|x|)) + max(x, 0) - x t
    per = np.logaddexp(0.0, x) - x * t
    s = _stable_sigmoid(x)

    def backward(g):
        _accum(logits, g * w * (s - t) / total)

    return _make(np.asarray(float((w * per).sum() / total)), (logits,), backward)
