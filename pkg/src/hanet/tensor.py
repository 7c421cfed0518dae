"""Dense float64 tensors with reverse-mode differentiation.

Each differentiable operation returns a new :class:`Tensor` that remembers its
inputs and a closure mapping the output adjoint to input adjoints.
:func:`build_tape` linearises the recorded graph into topological order and
:func:`backward` replays it in reverse.

Gradients accumulate across repeated ``backward`` calls; callers reset them
with :func:`zero_grad` before each pass.
"""
import contextlib

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, InvalidMaskError


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, *, op="leaf", parents=(), backward=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

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

    def __getitem__(self, key):
        return take(self, key)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, op, parents, backward_fn):
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, op=op, parents=parents, backward=backward_fn)
    return Tensor(data, op=op)


# --- FLOP accounting -------------------------------------------------------

class FlopCounter:
    """Counts multiply-adds issued by matmul-like primitives while active."""

    def __init__(self):
        self.count = 0
        self.by_op = {}

    def add(self, op, n):
        self.count += int(n)
        self.by_op[op] = self.by_op.get(op, 0) + int(n)


_counters = []


@contextlib.contextmanager
def count_flops():
    counter = FlopCounter()
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.remove(counter)


def _tally(op, n):
    for c in _counters:
        c.add(op, n)


# --- tape ------------------------------------------------------------------

def build_tape(loss):
    """Topologically ordered list of the differentiable tensors feeding ``loss``.

    Every tensor appears after all of its inputs.
    """
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    if not isinstance(loss, Tensor) or loss.size != 1:
        shape = getattr(loss, "shape", None)
        raise ContractError(f"backward() needs a scalar loss, got shape {shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any tensor requiring grad")
    tape = build_tape(loss)
    adjoint = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + pg
            else:
                adjoint[key] = pg


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


# --- elementwise and reductions -------------------------------------------

def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, "add", (a, b), grad_fn)


def neg(a):
    return _result(-a.data, "neg", (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, "mul", (a, b), grad_fn)


def exp(a):
    out = np.exp(a.data)
    return _result(out, "exp", (a,), lambda g: (g * out,))


def log(a):
    return _result(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


def tanh(a):
    out = np.tanh(a.data)
    return _result(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def leaky_relu(a, slope=0.2):
    pos = a.data > 0
    out = np.where(pos, a.data, slope * a.data)
    return _result(out, "leaky_relu", (a,), lambda g: (np.where(pos, g, slope * g),))


def elu(a, alpha=1.0):
    pos = a.data > 0
    neg_part = alpha * np.expm1(np.minimum(a.data, 0.0))
    out = np.where(pos, a.data, neg_part)
    return _result(out, "elu", (a,), lambda g: (np.where(pos, g, g * (neg_part + alpha)),))


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    out = a.data.sum(axis=axis)

    def grad_fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, "sum", (a,), grad_fn)


def mean(a, axis=None):
    n = a.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def reshape(a, shape):
    return _result(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of zero tensors")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}") from None
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(out, "concat", tensors, grad_fn)


def stack(tensors):
    """Stack same-shaped tensors along a new leading axis."""
    return concat([reshape(t, (1,) + t.shape) for t in tensors], axis=0)


def take(a, key):
    """Basic or integer-array indexing with scatter-add adjoint."""
    out = a.data[key]

    def grad_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return _result(out, "take", (a,), grad_fn)


def gather_rows(a, index):
    """Rows ``a[index]``; the adjoint is a bincount-style scatter."""
    index = np.asarray(index, dtype=np.int64)
    out = a.data[index]

    def grad_fn(g):
        flat = g.reshape(len(index), -1)
        full = np.zeros((a.shape[0], flat.shape[1]))
        for col in range(flat.shape[1]):
            full[:, col] = np.bincount(index, weights=flat[:, col], minlength=a.shape[0])
        return (full.reshape(a.shape),)

    return _result(out, "gather_rows", (a,), grad_fn)


# --- linear algebra --------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    m, k = a.shape
    n = 1 if b.ndim == 1 else b.shape[1]
    _tally("matmul", m * k * n)

    def grad_fn(g):
        if b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, "matmul", (a, b), grad_fn)


def head_dot(x, a):
    """Per-head inner products: ``out[n, k] = x[n, k, :] . a[k, :]``."""
    if x.ndim != 3 or a.shape != x.shape[1:]:
        raise DimensionError(f"head_dot: shapes {x.shape} and {a.shape} are not aligned")
    _tally("head_dot", x.size)
    out = np.einsum("nkf,kf->nk", x.data, a.data)

    def grad_fn(g):
        return g[:, :, None] * a.data[None], np.einsum("nk,nkf->kf", g, x.data)

    return _result(out, "head_dot", (x, a), grad_fn)


# --- softmax family --------------------------------------------------------

def softmax(a):
    """Max-shifted softmax along the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, "softmax", (a,), grad_fn)


def softmax_masked(logits, mask):
    """Softmax of a 1-D ``logits`` restricted to entries where ``mask`` is true.

    Masked-out entries come back as exactly 0.
    """
    logits = as_tensor(logits)
    mask = np.asarray(mask, dtype=bool)
    if logits.ndim != 1 or mask.shape != logits.shape:
        raise DimensionError(f"softmax_masked: logits {logits.shape} vs mask {mask.shape}")
    if not mask.any():
        raise InvalidMaskError("softmax_masked: mask has no true entry")
    x = logits.data
    mx = x[mask].max()
    ex = np.where(mask, np.exp(np.where(mask, x - mx, 0.0)), 0.0)
    out = ex / ex.sum()

    def grad_fn(g):
        return (out * (g - (g * out).sum()),)

    return _result(out, "softmax_masked", (logits,), grad_fn)


def segment_softmax(logits, indptr):
    """Row-wise softmax over CSR segments of an (E x K) edge-logit tensor."""
    alpha = kernels.segment_softmax(indptr, logits.data)
    _tally("segment_softmax", logits.size)

    def grad_fn(g):
        return (kernels.segment_softmax_backward(indptr, alpha, g),)

    return _result(alpha, "segment_softmax", (logits,), grad_fn)


def spmm(indptr, indices, weights, x):
    """Weighted neighbour sum; see :func:`hanet._kernels_py.spmm`."""
    weights, x = as_tensor(weights), as_tensor(x)
    if weights.ndim != 2 or x.ndim != 3 or weights.shape != (len(indices), x.shape[1]):
        raise DimensionError(f"spmm: weights {weights.shape} vs features {x.shape}")
    _tally("spmm", weights.size * x.shape[2])
    out = kernels.spmm(indptr, indices, weights.data, x.data)

    def grad_fn(g):
        return kernels.spmm_backward(indptr, indices, weights.data, x.data, g)

    return _result(out, "spmm", (weights, x), grad_fn)


def cross_entropy(logits, targets):
    """Mean negative log-likelihood of ``targets`` under row-softmax(logits)."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or len(targets) != logits.shape[0]:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    if len(targets) == 0:
        raise ContractError("cross_entropy over an empty set")
    x = logits.data
    mx = x.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(x - mx).sum(axis=1))
    n = len(targets)
    rows = np.arange(n)
    value = (lse - x[rows, targets]).sum() / n

    def grad_fn(g):
        p = np.exp(x - lse[:, None])
        p[rows, targets] -= 1.0
        return (g * p / n,)

    return _result(np.array(value), "cross_entropy", (logits,), grad_fn)


# --- dropout ---------------------------------------------------------------

def dropout_rng(seed):
    """Counter-based generator keyed by an int or a tuple of ints."""
    entropy = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def dropout(a, rate, seed, training=True):
    """Inverted dropout; the identity when not training or ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    keep = dropout_rng(seed).random(a.shape) >= rate
    scale = keep / (1.0 - rate)
    return _result(a.data * scale, "dropout", (a,), lambda g: (g * scale,))
