"""
numerics.py
===========
Dense tensors with reverse-mode differentiation, built on numpy arrays.

This module provides:
1. ``Tensor`` - a numpy array plus the bookkeeping for reverse accumulation
2. The differentiable operations the transformer needs (matmul, masked
   softmax, layer norm, GELU, embedding lookup, smoothed cross entropy, ...)
3. ``backward`` and ``grad_check`` (central finite differences)
4. ``RngStream`` - counter-based splittable random streams (Philox)

Reductions go through ``numpy.sum``, which uses pairwise summation on
contiguous float data, so a reduction has one fixed order regardless of how
the caller schedules independent batch elements.

Every operation checks its output for NaN/Inf and raises ``NonFiniteError``.
"""

from __future__ import annotations

import contextlib
import contextvars
import zlib
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax as _scipy_log_softmax

from .errors import (DimensionError, NonFiniteError, TokenIndexError,
                     ValidationError)

# =============================================================================
# CONFIGURATION
# =============================================================================

DEFAULT_DTYPE = np.float64
LAYER_NORM_EPS = 1e-5
GELU_COEF = float(np.sqrt(2.0 / np.pi))

# per thread and per asyncio task
_GRAD_ENABLED = contextvars.ContextVar("disco_grad_enabled", default=True)


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (inference, finite differences)."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def grad_enabled():
    return _GRAD_ENABLED.get()


# =============================================================================
# TENSOR
# =============================================================================

class Tensor:
    """A real-valued array that can take part in reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        array = np.asarray(data)
        if dtype is not None:
            array = array.astype(dtype, copy=False)
        elif array.dtype.kind != "f":
            array = array.astype(DEFAULT_DTYPE)
        self.data = array
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # -- introspection --------------------------------------------------------

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
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    # -- operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(value, like=None):
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value), dtype=dtype)


def _check_finite(data, op):
    if not np.all(np.isfinite(data)):
        bad = int(np.size(data) - np.count_nonzero(np.isfinite(data)))
        raise NonFiniteError(f"{op} produced {bad} non-finite entries",
                             {"op": op, "count": bad, "shape": tuple(np.shape(data))})


def _make(data, parents, backward_fn, op):
    _check_finite(data, op)
    out = Tensor(data)
    if _GRAD_ENABLED.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        out._op = op
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, extent in enumerate(shape) if extent == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# =============================================================================
# ELEMENTWISE AND SHAPE OPERATIONS
# =============================================================================

def add(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward_fn, "add")


def sub(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward_fn, "sub")


def mul(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward_fn, "mul")


def div(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def backward_fn(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), backward_fn, "div")


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def reshape(a, shape):
    original = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {original} into {shape}") from exc
    return _make(data, (a,), lambda g: (g.reshape(original),), "reshape")


def transpose(a, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def broadcast_to(a, shape):
    original = a.shape
    try:
        data = np.broadcast_to(a.data, shape).copy()
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {original} to {shape}") from exc
    return _make(data, (a,), lambda g: (_unbroadcast(g, original),), "broadcast_to")


def take(a, index):
    """Basic or advanced indexing; the gradient scatters back with ``np.add.at``."""

    def backward_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(a.data[index]), (a,), backward_fn, "take")


def tensor_sum(a, axis=None, keepdims=False):
    original = a.shape

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, original),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward_fn, "sum")


def tensor_mean(a, axis=None, keepdims=False):
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def gelu(x):
    """GELU, tanh approximation (smooth everywhere, so finite differences stay valid)."""
    inner = GELU_COEF * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(inner)
    out = 0.5 * x.data * (1.0 + t)

    def backward_fn(g):
        d_inner = GELU_COEF * (1.0 + 3 * 0.044715 * x.data ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * d_inner),)

    return _make(out, (x,), backward_fn, "gelu")


def dropout(x, rate, generator=None):
    """Inverted dropout; identity when ``rate`` is 0 or no generator is given."""
    if rate <= 0.0 or generator is None:
        return x
    keep = generator.random(x.shape) >= rate
    scale = Tensor(keep / (1.0 - rate), dtype=x.dtype)
    return mul(x, scale)


# =============================================================================
# LINEAR ALGEBRA AND NORMALIZATION
# =============================================================================

def matmul(a, b):
    """Matrix product over the last two axes; leading axes broadcast."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")

    def backward_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(np.matmul(a.data, b.data), (a, b), backward_fn, "matmul")


def masked_softmax(scores, visible):
    """Softmax over the last axis restricted to ``visible`` columns.

    Masked columns are exactly 0. A row with no visible column is all zeros.
    """
    try:
        vis = np.broadcast_to(np.asarray(visible, dtype=bool), scores.shape)
    except ValueError as exc:
        raise DimensionError(f"visibility {np.shape(visible)} does not fit scores {scores.shape}") from exc
    masked = np.where(vis, scores.data, -np.inf)
    row_max = masked.max(axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    expo = np.where(vis, np.exp(masked - row_max), 0.0)
    denom = expo.sum(axis=-1, keepdims=True)
    out = (expo / np.where(denom > 0, denom, 1.0)).astype(scores.dtype, copy=False)

    def backward_fn(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (scores,), backward_fn, "masked_softmax")


def log_softmax(x, axis=-1):
    out = _scipy_log_softmax(x.data, axis=axis)

    def backward_fn(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward_fn, "log_softmax")


def layer_norm(x, gain, bias, eps=LAYER_NORM_EPS):
    """Normalize the last axis to zero mean / unit variance, then scale and shift.

    Rows whose entries are all equal normalize to exactly 0, so they map to ``bias``.
    """
    d = gain.shape[-1]
    if x.shape[-1] != d or bias.shape[-1] != d:
        raise DimensionError(f"layer_norm expects last extent {d}, got {x.shape}")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    constant = x.data.max(axis=-1, keepdims=True) == x.data.min(axis=-1, keepdims=True)
    xhat = np.where(constant, 0.0, centered * inv)
    out = xhat * gain.data + bias.data

    def backward_fn(g):
        dxhat = g * gain.data
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _make(out.astype(x.dtype, copy=False), (x, gain, bias), backward_fn, "layer_norm")


def embedding(table, ids):
    """Row lookup ``table[ids]`` for an integer id array of any shape."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise TokenIndexError(f"token id out of range [0, {table.shape[0]})")

    def backward_fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _make(table.data[ids], (table,), backward_fn, "embedding")


# =============================================================================
# LOSS
# =============================================================================

def cross_entropy_smoothed(logits, targets, epsilon, weights=None):
    """Weighted mean of (1-eps)*NLL(target) + eps*mean-over-vocab NLL.

    ``logits`` is N x V, ``targets`` N ids, ``weights`` an optional N vector
    (1 for positions that count, 0 for padding or unmasked positions).
    """
    if logits.ndim != 2:
        raise DimensionError(f"logits must be N x V, got {logits.shape}")
    n, vocab = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != n:
        raise DimensionError(f"{targets.shape[0]} targets for {n} logit rows")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise TokenIndexError(f"target id out of range [0, {vocab})")
    if not 0.0 <= epsilon < 1.0:
        raise ValidationError(f"label smoothing must lie in [0, 1), got {epsilon}")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    total = w.sum()
    if total <= 0:
        raise ValidationError("no position carries loss weight")

    lp = _scipy_log_softmax(logits.data, axis=-1)
    rows = np.arange(n)
    nll = -lp[rows, targets]
    smooth = -lp.mean(axis=-1)
    per_position = (1.0 - epsilon) * nll + epsilon * smooth
    loss = np.asarray((per_position * w).sum() / total, dtype=logits.dtype)

    def backward_fn(g):
        q = np.full_like(lp, epsilon / vocab)
        q[rows, targets] += 1.0 - epsilon
        return ((np.exp(lp) - q) * (w / total)[:, None] * g,)

    return _make(loss, (logits,), backward_fn, "cross_entropy")


# =============================================================================
# REVERSE ACCUMULATION
# =============================================================================

def _topological_order(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Calling twice without ``zero_grad`` adds the gradients together.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise DimensionError("backward needs a scalar loss")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            g = np.asarray(g, dtype=node.dtype).reshape(node.shape)
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, parent_grad in zip(node._parents, node._backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad


def grad_check(f, params, step=1e-5, coordinates=None, generator=None, floor=1e-4):
    """Worst relative error between reverse-mode and central-difference gradients.

    ``f`` maps the current values of ``params`` to a scalar Tensor. When
    ``coordinates`` is an int, that many coordinates are drawn without
    replacement (``generator`` required); otherwise every coordinate is checked.
    Gradients smaller than ``floor`` in magnitude are compared absolutely.
    """
    if step <= 0:
        raise ValidationError("finite-difference step must be positive")
    for p in params:
        p.zero_grad()
    backward(f())
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if coordinates is not None and coordinates < len(coords):
        if generator is None:
            generator = np.random.default_rng(0)
        picked = generator.choice(len(coords), size=coordinates, replace=False)
        coords = [coords[k] for k in np.sort(picked)]

    worst = 0.0
    with no_grad():
        for i, j in coords:
            flat = params[i].data.reshape(-1)
            original = flat[j]
            flat[j] = original + step
            f_plus = f().item()
            flat[j] = original - step
            f_minus = f().item()
            flat[j] = original
            numeric = (f_plus - f_minus) / (2.0 * step)
            exact = float(analytic[i].reshape(-1)[j])
            denom = max(abs(exact), abs(numeric), floor)
            worst = max(worst, abs(exact - numeric) / denom)
    for p in params:
        p.zero_grad()
    return worst


# =============================================================================
# RANDOM STREAMS
# =============================================================================

_MASK64 = (1 << 64) - 1


def _label_key(label):
    if isinstance(label, (int, np.integer)) and 0 <= int(label) < (1 << 32):
        return int(label)
    return zlib.crc32(str(label).encode("utf-8")) + (1 << 32)


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream: (seed, counter) fixes every draw."""

    seed: int
    counter: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) <= _MASK64:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not 0 <= int(self.counter) <= _MASK64:
            raise ValidationError(f"counter must be a 64-bit unsigned integer, got {self.counter}")

    def generator(self):
        return np.random.Generator(np.random.Philox(key=int(self.seed), counter=int(self.counter)))

    def substream(self, *labels):
        """Independent stream derived from this one and ``labels``."""
        spawn_key = (int(self.counter),) + tuple(_label_key(label) for label in labels)
        sequence = np.random.SeedSequence(entropy=int(self.seed), spawn_key=spawn_key)
        return RngStream(int(sequence.generate_state(1, dtype=np.uint64)[0]))

    def advance(self, n=1):
        return RngStream(self.seed, int(self.counter) + int(n))
