"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every forward operation that touches a tensor with ``requires_grad`` records a
node on the implicit tape (the parent links). ``backward`` walks that tape in
reverse topological order and accumulates gradients into leaves.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np
from scipy.special import erf

from .errors import ShapeError, EmptyLossError, GradientContractError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad=False, _parents=(), _op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = None
        self._op = _op
        self._consumed = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar ---------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, op, backward_fn):
    parents = tuple(parents)
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track, _parents=parents if track else (), _op=op)
    if track:
        out._backward = backward_fn
    return out


_PENDING = None  # id(tensor) -> gradient, live only during backward


def _accum(t, g):
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.data.shape)
    prev = _PENDING.get(id(t))
    _PENDING[id(t)] = np.array(g, dtype=np.float64) if prev is None else prev + g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise arithmetic ------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, g)
        _accum(b, g)
    return _make(a.data + b.data, (a, b), "add", bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, g)
        _accum(b, -g)
    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)
    return _make(a.data * b.data, (a, b), "mul", bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, g / b.data)
        _accum(b, -g * a.data / (b.data * b.data))
    return _make(a.data / b.data, (a, b), "div", bw)


def neg(a):
    def bw(g):
        _accum(a, -g)
    return _make(-a.data, (a,), "neg", bw)


def power(a, exponent):
    exponent = float(exponent)

    def bw(g):
        _accum(a, g * exponent * a.data ** (exponent - 1.0))
    return _make(a.data ** exponent, (a,), "pow", bw)


def exp(a):
    out_data = np.exp(a.data)

    def bw(g):
        _accum(a, g * out_data)
    return _make(out_data, (a,), "exp", bw)


def log(a):
    def bw(g):
        _accum(a, g / a.data)
    return _make(np.log(a.data), (a,), "log", bw)


def sqrt(a):
    out_data = np.sqrt(a.data)

    def bw(g):
        _accum(a, g * 0.5 / out_data)
    return _make(out_data, (a,), "sqrt", bw)


def _phi(x):
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0)))


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF computed via erf."""
    cdf = _phi(x.data)

    def bw(g):
        pdf = np.exp(-0.5 * x.data * x.data) / math.sqrt(2.0 * math.pi)
        _accum(x, g * (cdf + x.data * pdf))
    return _make(x.data * cdf, (x,), "gelu", bw)


# -- reductions and shape ops ----------------------------------------------

def tsum(a, axis=None, keepdims=False):
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape))
    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum", bw)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.data.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    def bw(g):
        _accum(a, g.reshape(a.data.shape))
    return _make(a.data.reshape(shape), (a,), "reshape", bw)


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))

    def bw(g):
        _accum(a, g.transpose(inv))
    return _make(a.data.transpose(axes), (a,), "transpose", bw)


def getitem(a, idx):
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)
    return _make(a.data[idx], (a,), "getitem", bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        for i, t in enumerate(tensors):
            _accum(t, np.take(g, i, axis=axis))
    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, "stack", bw)


def where(mask, a, b):
    """Select ``a`` where ``mask`` else ``b``; ``mask`` is a plain bool array."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)

    def bw(g):
        _accum(a, np.where(mask, g, 0.0))
        _accum(b, np.where(mask, 0.0, g))
    return _make(np.where(mask, a.data, b.data), (a, b), "where", bw)


def sort_rows(x):
    """Reorder the rows (second-to-last axis) of ``x`` lexicographically by value.

    Sums taken after this reordering do not depend on the incoming row order,
    which makes row-symmetric reductions bit-exactly permutation invariant.
    """
    d = x.data
    if d.ndim < 2:
        raise ShapeError(f"sort_rows needs at least 2 dims, got shape {d.shape}")
    flat = d.reshape(-1, d.shape[-2], d.shape[-1])
    order = np.empty(flat.shape[:2], dtype=np.int64)
    for i, block in enumerate(flat):
        order[i] = np.lexsort(block.T[::-1]) if block.shape[0] else np.arange(0)
    order = order.reshape(d.shape[:-1])
    idx = order[..., None]

    def bw(g):
        full = np.zeros_like(d)
        np.put_along_axis(full, np.broadcast_to(idx, g.shape), g, axis=-2)
        _accum(x, full)
    return _make(np.take_along_axis(d, np.broadcast_to(idx, d.shape), axis=-2), (x,), "sort_rows", bw)


# -- linear algebra ---------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands with >= 2 dims, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            _accum(b, np.swapaxes(a.data, -1, -2) @ g)
    return _make(a.data @ b.data, (a, b), "matmul", bw)


def row_matmul(x, w):
    """``x @ w`` for a 2-D ``w``, computed so each output row depends only on its input row.

    BLAS picks different kernels for one row and for many, which changes the
    last bits; the einsum loop does not, so a row projected alone is
    bit-identical to the same row projected inside a batch.
    """
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"row_matmul shapes disagree: {x.shape} @ {w.shape}")

    def bw(g):
        if x.requires_grad:
            _accum(x, g @ w.data.T)
        if w.requires_grad:
            _accum(w, x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
    return _make(np.einsum("...k,kn->...n", x.data, w.data), (x, w), "row_matmul", bw)


def embedding(table, ids):
    """Row lookup ``table[ids]``; gradients scatter-add into the looked-up rows."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"token id out of range for vocabulary of size {vocab}")

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        _accum(table, full)
    return _make(table.data[ids], (table,), "embedding", bw)


# -- normalisation and probabilities ---------------------------------------

def softmax(x, axis=-1, mask=None):
    """Max-subtracted softmax. ``mask`` (bool, broadcastable) marks allowed entries;
    disallowed entries get probability exactly 0 and never influence the result."""
    d = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), d.shape)
        d = np.where(mask, d, -np.inf)
    m = d.max(axis=axis, keepdims=True)
    e = np.exp(d - m)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(x, out_data * (g - dot))
    return _make(out_data, (x,), "softmax", bw)


def log_softmax(x, axis=-1):
    d = x.data
    shifted = d - d.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def bw(g):
        p = np.exp(out_data)
        _accum(x, g - p * g.sum(axis=axis, keepdims=True))
    return _make(out_data, (x,), "log_softmax", bw)


def layer_norm(x, gamma, beta, eps=1e-5):
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gamma.data + beta.data

    def bw(g):
        if gamma.requires_grad:
            _accum(gamma, g * xhat)
        _accum(beta, g)
        if x.requires_grad:
            gx = g * gamma.data
            n = d.shape[-1]
            dx = inv / n * (n * gx - gx.sum(axis=-1, keepdims=True)
                            - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
            _accum(x, dx)
    return _make(out_data, (x, gamma, beta), "layer_norm", bw)


def token_nll(logits, targets):
    """Per-position negative log-likelihood ``-log softmax(logits)[..., target]``."""
    targets = np.asarray(targets, dtype=np.int64)
    d = logits.data
    vocab = d.shape[-1]
    if targets.shape != d.shape[:-1]:
        raise ShapeError(f"targets shape {targets.shape} does not match logits {d.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise IndexError(f"target id out of range for vocabulary of size {vocab}")
    shifted = d - d.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    out_data = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]

    def bw(g):
        grad = np.exp(logp) * g[..., None]
        np.put_along_axis(grad, targets[..., None],
                          np.take_along_axis(grad, targets[..., None], axis=-1) - g[..., None], axis=-1)
        _accum(logits, grad)
    return _make(out_data, (logits,), "token_nll", bw)


def cross_entropy(logits, targets, loss_mask=None):
    """Mean of ``-log softmax(logits)[t, target_t]`` over unmasked positions."""
    targets = np.asarray(targets, dtype=np.int64)
    if loss_mask is None:
        loss_mask = np.ones(targets.shape, dtype=bool)
    loss_mask = np.asarray(loss_mask, dtype=bool)
    count = int(loss_mask.sum())
    if count == 0:
        raise EmptyLossError("every position is masked; the loss is empty")
    # masked positions may hold arbitrary ids (e.g. padding); only unmasked ones are checked
    safe = np.where(loss_mask, targets, 0)
    if (targets[loss_mask] >= logits.shape[-1]).any() or (targets[loss_mask] < 0).any():
        raise IndexError(f"target id out of range for vocabulary of size {logits.shape[-1]}")
    nll = token_nll(logits, safe)
    return (nll * loss_mask.astype(np.float64)).sum() * (1.0 / count)


# -- the tape ---------------------------------------------------------------

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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root):
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every tracked leaf.

    The graph is released afterwards; calling this twice on the same root
    raises instead of silently double counting.
    """
    global _PENDING
    if root.data.size != 1:
        raise GradientContractError(f"backward needs a scalar root, got shape {root.shape}")
    if root._consumed:
        raise GradientContractError("backward already ran on this graph; rebuild it before calling again")
    if not root.requires_grad:
        raise GradientContractError("root is not connected to any tensor that requires grad")
    order = _topological_order(root)
    _PENDING = {id(root): np.ones_like(root.data)}
    try:
        for node in reversed(order):
            g = _PENDING.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g if node.grad is None else node.grad + g
            else:
                node._backward(g)
    finally:
        _PENDING = None
    for node in order:
        if not node.is_leaf:
            node._backward = None
            node._parents = ()
            node._consumed = True
