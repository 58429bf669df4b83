"""Tape-based reverse-mode differentiation over dense float64 arrays.

Each op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output cotangent to one cotangent per parent.
:func:`backward` walks the recorded graph in reverse topological order and
accumulates into the ``grad`` of leaf tensors.
"""
from contextlib import contextmanager

import numpy as np

from . import _accel
from .errors import DimensionError, NumericError, UsageError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable taping inside the block (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
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

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(out, opname):
    # a sum is non-finite iff some entry is (barring overflow near 1e308)
    if out.size and not np.isfinite(out.sum()):
        raise NumericError(f"non-finite value produced by {opname}")


def _make(data, parents, backward, opname):
    _check_finite(data, opname)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = a.data / b.data  # non-finite results are reported by _make

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * q / b.data, b.shape))

    return _make(q, (a, b), bw, "div")


def square(a):
    a = as_tensor(a)
    def bw(g):
        return (2.0 * a.data * g,)

    return _make(a.data * a.data, (a,), bw, "square")


def sqrt(a):
    a = as_tensor(a)
    r = np.sqrt(a.data)

    def bw(g):
        return (g * 0.5 / r,)

    return _make(r, (a,), bw, "sqrt")


def elu(a, alpha=1.0):
    a = as_tensor(a)
    out = _accel.elu_fwd(a.data, alpha)

    def bw(g):
        # for x < 0 the derivative alpha*exp(x) equals out + alpha
        return (_accel.elu_bwd(g, out, alpha),)

    return _make(out, (a,), bw, "elu")


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bw(g):
        return (g * s * (1.0 - s),)

    return _make(s, (a,), bw, "sigmoid")


# ---------------------------------------------------------------------------
# reductions and linear algebra


def sum(a):  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    def bw(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(a.data.sum()), (a,), bw, "sum")


def mean(a):
    a = as_tensor(a)
    n = a.data.size

    def bw(g):
        return (np.full(a.shape, float(g) / n),)

    return _make(np.asarray(a.data.mean()), (a,), bw, "mean")


def norm(a):
    """Euclidean norm of all entries."""
    a = as_tensor(a)
    r = float(np.sqrt((a.data * a.data).sum()))

    def bw(g):
        return (g * a.data / r,)

    return _make(np.asarray(r), (a,), bw, "norm")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def linear(x, w, b):
    """Affine map ``x @ w + b`` as one tape node."""
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"linear: input {x.shape} vs weight {w.shape}")

    def bw(g):
        gx = g @ w.data.T if x.requires_grad else None
        return gx, x.data.T @ g, g.sum(axis=0)

    return _make(x.data @ w.data + b.data, (x, w, b), bw, "linear")


def message_linear(e, v, w, b, senders, receivers):
    """First affine layer of an edge update on ``[e | v[senders] | v[receivers]]``
    without materialising the concatenation.

    ``w`` has ``F_e + 2 F_v`` rows stacked in that order.
    """
    fe, fv = e.shape[1], v.shape[1]
    if w.shape[0] != fe + 2 * fv:
        raise DimensionError(f"message weight has {w.shape[0]} rows, expected {fe + 2 * fv}")
    we, ws, wr = w.data[:fe], w.data[fe:fe + fv], w.data[fe + fv:]
    n = v.shape[0]
    out = e.data @ we + (v.data @ ws)[senders] + (v.data @ wr)[receivers] + b.data

    def bw(g):
        gs = _accel.scatter_add_rows(g, senders, n)
        gr = _accel.scatter_add_rows(g, receivers, n)
        gw = np.concatenate([e.data.T @ g, v.data.T @ gs, v.data.T @ gr])
        ge = g @ we.T if e.requires_grad else None
        gv = gs @ ws.T + gr @ wr.T if v.requires_grad else None
        return ge, gv, gw, g.sum(axis=0)

    return _make(out, (e, v, w, b), bw, "message_linear")


def layer_norm(x, gain, bias, eps=1e-5):
    """Row-wise normalisation followed by an elementwise affine map."""
    if x.ndim != 2 or x.shape[1] == 0:
        raise DimensionError(f"layer_norm needs a non-empty feature axis, got {x.shape}")
    out, xhat, inv = _accel.layer_norm_fwd(x.data, gain.data, bias.data, eps)

    def bw(g):
        return _accel.layer_norm_bwd(g, xhat, inv, gain.data)

    return _make(out, (x, gain, bias), bw, "layer_norm")


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), bw, "concat")


# ---------------------------------------------------------------------------
# indexing / graph ops


def gather_rows(a, index):
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]

    def bw(g):
        return (_accel.scatter_add_rows(g, index, n),)

    return _make(a.data[index], (a,), bw, "gather_rows")


def scatter_rows(a, index, n_out):
    """Sum rows of ``a`` into ``n_out`` rows; duplicates in ``index`` add up."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)

    def bw(g):
        return (g[index],)

    return _make(_accel.scatter_add_rows(a.data, index, n_out), (a,), bw, "scatter_rows")


def segment_mean(a, index, n_out, counts=None):
    """Mean of rows of ``a`` per bucket; empty buckets give zero rows."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if counts is None:
        counts = np.bincount(index, minlength=n_out)
    scale = (1.0 / np.maximum(counts, 1))[:, None]
    s = _accel.scatter_add_rows(a.data, index, n_out) * scale

    def bw(g):
        return ((g * scale)[index],)

    return _make(s, (a,), bw, "segment_mean")


# ---------------------------------------------------------------------------
# losses


def mse(pred, target):
    """Mean squared difference over every entry."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def bw(g):
        gp = (2.0 * float(g) / n) * diff
        return gp, -gp

    return _make(np.asarray((diff * diff).mean()), (pred, target), bw, "mse")


# ---------------------------------------------------------------------------


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order, seen = [], set()
    stack = [(loss, False)]
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

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.array(g, dtype=np.float64)
            else:
                node.grad += g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
