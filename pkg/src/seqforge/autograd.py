"""Minimal dense-tensor autograd engine.

All model math in this package runs through the `Tensor` class below:
float32 numpy storage (float64 in shadow mode, see `use_dtype`), recorded
ops, and reverse-mode gradients via closure-based backward functions and
an iterative topological sweep.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np
from scipy.special import erf

# ---------------------------------------------------------------------------
# dtype / grad-mode state
# ---------------------------------------------------------------------------

_state = threading.local()


def _dtype():
    return getattr(_state, "dtype", np.float32)


def _grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def use_dtype(dtype):
    """Switch the default float dtype (np.float64 gives shadow mode for
    finite-difference tests). Affects tensors created inside the block."""
    prev = _dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def no_grad():
    """Disable op recording; tensors produced inside carry no graph."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


# ---------------------------------------------------------------------------
# RNG: one named deterministic generator everywhere
# ---------------------------------------------------------------------------

def new_rng(seed, *keys):
    """Deterministic PCG64 generator. Extra integer keys derive independent
    streams (e.g. per-worker) that are stable across runs and platforms."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


def rng_state(rng):
    """JSON-serializable snapshot of a generator's state."""
    return rng.bit_generator.state


def restore_rng(state):
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = state
    return rng


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------

class Tensor:
    """Dense float array with optional gradient and op provenance."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward",
                 "_op", "_consumed", "fully_masked")

    def __init__(self, data, requires_grad=False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype != _dtype():
            arr = arr.astype(_dtype())
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._consumed = False
        self.fully_masked = False

    # -- construction helpers -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def detach(self):
        t = Tensor(self.data)
        return t

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    # -- backward -------------------------------------------------------------

    def backward(self):
        """Reverse-mode sweep from a scalar. Visits each recorded op once;
        a second call on the same graph root is an error."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.data.shape}")
        if self._consumed:
            raise RuntimeError("backward() already called on this graph; rebuild the graph first")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for t in reversed(order):
            if t._backward is not None:
                t._backward()
        self._consumed = True
        # the op closures capture their own output, which makes every graph
        # one big reference cycle; break it so memory frees by refcount
        # instead of waiting for a full gc pass
        for t in order:
            t._backward = None
            t._parents = ()

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self), neg(self))

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tslice(self, key)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dt = like.data.dtype if like is not None else _dtype()
    t = Tensor.__new__(Tensor)
    t.data = np.asarray(x, dtype=dt)
    t.grad = None
    t.requires_grad = False
    t._parents = ()
    t._backward = None
    t._op = "const"
    t._consumed = False
    t.fully_masked = False
    return t


def _topo_order(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _make(data, parents, backward, op):
    """Wrap an op result; records the graph only when grads are on and some
    parent needs them."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._consumed = False
    out.fully_masked = False
    track = _grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    else:
        out._parents = ()
        out._backward = None
        out._op = op
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast in the forward op."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gd, sd) in enumerate(zip(g.shape, shape)):
        if sd == 1 and gd != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    out_data = a.data + b.data

    def backward():
        _accum(a, _unbroadcast(out.grad, a.data.shape))
        _accum(b, _unbroadcast(out.grad, b.data.shape))

    out = _make(out_data, (a, b), backward, "add")
    return out


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    out_data = a.data * b.data

    def backward():
        _accum(a, _unbroadcast(b.data * out.grad, a.data.shape))
        _accum(b, _unbroadcast(a.data * out.grad, b.data.shape))

    out = _make(out_data, (a, b), backward, "mul")
    return out


def neg(a):
    a = _as_tensor(a)

    def backward():
        _accum(a, -out.grad)

    out = _make(-a.data, (a,), backward, "neg")
    return out


def div(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    out_data = a.data / b.data

    def backward():
        _accum(a, _unbroadcast(out.grad / b.data, a.data.shape))
        _accum(b, _unbroadcast(-out.grad * a.data / (b.data * b.data), b.data.shape))

    out = _make(out_data, (a, b), backward, "div")
    return out


def relu(x):
    x = _as_tensor(x)

    def backward():
        _accum(x, (x.data > 0) * out.grad)

    out = _make(np.maximum(x.data, 0), (x,), backward, "relu")
    return out


_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


def gelu(x):
    """Exact erf-form GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    x = _as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))

    def backward():
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        _accum(x, (cdf + x.data * pdf) * out.grad)

    out = _make((x.data * cdf).astype(x.data.dtype), (x,), backward, "gelu")
    return out


def sigmoid(x):
    x = _as_tensor(x)
    y = 1.0 / (1.0 + np.exp(-x.data))

    def backward():
        _accum(x, (y * (1.0 - y)) * out.grad)

    out = _make(y.astype(x.data.dtype), (x,), backward, "sigmoid")
    return out


def exp(x):
    x = _as_tensor(x)
    y = np.exp(x.data)

    def backward():
        _accum(x, y * out.grad)

    out = _make(y, (x,), backward, "exp")
    return out


def log(x):
    x = _as_tensor(x)

    def backward():
        _accum(x, out.grad / x.data)

    out = _make(np.log(x.data), (x,), backward, "log")
    return out


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(x, shape):
    x = _as_tensor(x)
    old = x.data.shape

    def backward():
        _accum(x, out.grad.reshape(old))

    out = _make(x.data.reshape(shape), (x,), backward, "reshape")
    return out


def transpose(x, axes=None):
    x = _as_tensor(x)
    if axes is not None and len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    inv = np.argsort(axes) if axes is not None else None

    def backward():
        g = out.grad.transpose(inv) if inv is not None else out.grad.transpose()
        _accum(x, g)

    out = _make(x.data.transpose(axes) if axes is not None else x.data.transpose(),
                (x,), backward, "transpose")
    return out


def swapaxes(x, a, b):
    axes = list(range(_as_tensor(x).ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, tuple(axes))


def tslice(x, key):
    x = _as_tensor(x)

    def backward():
        g = np.zeros_like(x.data)
        np.add.at(g, key, out.grad)
        _accum(x, g)

    out = _make(x.data[key].copy(), (x,), backward, "slice")
    return out


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]

    def backward():
        offset = 0
        for t, n in zip(tensors, sizes):
            idx = [slice(None)] * out.grad.ndim
            idx[axis] = slice(offset, offset + n)
            _accum(t, out.grad[tuple(idx)])
            offset += n

    out = _make(np.concatenate([t.data for t in tensors], axis=axis),
                tuple(tensors), backward, "concat")
    return out


def tsum(x, axis=None, keepdims=False):
    x = _as_tensor(x)

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.data.shape).copy())

    out = _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")
    return out


def tmean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis, keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def matmul(a, b):
    """Matrix product over the last two axes, numpy-broadcast over leading
    batch axes (e.g. [B, T, H] @ [H, H]).

    Gradients: dA = dC @ B^T, dB = A^T @ dC, each summed back to the
    operand's batch shape."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs rank >= 2 operands: {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")

    def backward():
        _accum(a, _unbroadcast(out.grad @ b.data.swapaxes(-1, -2), a.data.shape))
        _accum(b, _unbroadcast(a.data.swapaxes(-1, -2) @ out.grad, b.data.shape))

    out = _make(a.data @ b.data, (a, b), backward, "matmul")
    return out


# ---------------------------------------------------------------------------
# lookup / dropout
# ---------------------------------------------------------------------------

def embedding(weight, ids):
    """Gather rows of `weight` ([V, H]) by an integer id array."""
    weight = _as_tensor(weight)
    ids = np.asarray(ids)

    def backward():
        g = np.zeros_like(weight.data)
        np.add.at(g, ids.reshape(-1), out.grad.reshape(-1, weight.data.shape[-1]))
        _accum(weight, g)

    out = _make(weight.data[ids].copy(), (weight,), backward, "embedding")
    return out


def dropout(x, p, rng, train):
    """Inverted-scaling dropout: scales kept units by 1/(1-p) at train time,
    identity at eval."""
    x = _as_tensor(x)
    if not train or p <= 0.0:
        return x
    if p >= 1.0:
        raise ValueError("dropout p must be < 1")
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype) / (1.0 - p)

    def backward():
        _accum(x, keep * out.grad)

    out = _make(x.data * keep, (x,), backward, "dropout")
    return out


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------

def masked_softmax(x, mask, axis=-1):
    """Softmax over entries whose additive mask is 0; -inf entries come out
    exactly 0. A fully masked row yields zeros and sets `.fully_masked` on
    the result (callers treat that as a bug signal, not a value)."""
    x = _as_tensor(x)
    if mask is None:
        mask_b = np.zeros((1,) * x.ndim, dtype=x.data.dtype)
    else:
        mask_b = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=x.data.dtype)
    masked = np.broadcast_to(np.isneginf(mask_b), x.data.shape)
    neg = np.where(masked, -np.inf, x.data)
    m = neg.max(axis=axis, keepdims=True)
    all_masked = np.isneginf(m)
    m_safe = np.where(all_masked, 0.0, m)
    e = np.where(masked, 0.0, np.exp(np.where(masked, 0.0, x.data - m_safe)))
    z = e.sum(axis=axis, keepdims=True)
    y = (e / np.where(z == 0.0, 1.0, z)).astype(x.data.dtype)

    def backward():
        dot = (out.grad * y).sum(axis=axis, keepdims=True)
        _accum(x, y * (out.grad - dot))

    out = _make(y, (x,), backward, "masked_softmax")
    out.fully_masked = bool(all_masked.any())
    return out


def softmax(x, axis=-1):
    return masked_softmax(x, None, axis)


def log_softmax(x, axis=-1):
    x = _as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    sh = x.data - m
    lse = np.log(np.exp(sh).sum(axis=axis, keepdims=True)) + m
    y = x.data - lse

    def backward():
        s = out.grad.sum(axis=axis, keepdims=True)
        _accum(x, out.grad - np.exp(y) * s)

    out = _make(y.astype(x.data.dtype), (x,), backward, "log_softmax")
    return out


# ---------------------------------------------------------------------------
# losses / normalization
# ---------------------------------------------------------------------------

def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance (eps inside the
    sqrt), then scale and shift."""
    x = _as_tensor(x)
    gain = _as_tensor(gain, x)
    bias = _as_tensor(bias, x)
    n = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward():
        g = out.grad
        dxhat = g * gain.data
        dvar = (dxhat * xc).sum(axis=-1, keepdims=True) * (-0.5) * inv ** 3
        dmu = (-dxhat * inv).sum(axis=-1, keepdims=True)
        dx = dxhat * inv + dvar * 2.0 * xc / n + dmu / n
        _accum(x, dx)
        _accum(gain, _unbroadcast(g * xhat, gain.data.shape))
        _accum(bias, _unbroadcast(g, bias.data.shape))

    out = _make((xhat * gain.data + bias.data).astype(x.data.dtype), (x, gain, bias),
                backward, "layer_norm")
    return out


def cross_entropy_label_smoothed(logits, targets, smoothing=0.0, pad_id=None):
    """Label-smoothed cross entropy, mean over non-pad positions.

    logits: [N, V]; targets: int array [N]. Per position the loss is
    (1-eps) * NLL(target) + eps * mean_v NLL(v); positions whose target is
    pad_id are excluded from the mean.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    if logits.ndim != 2:
        raise ValueError(f"expected [N, V] logits, got shape {logits.data.shape}")
    n, v = logits.data.shape
    if targets.shape != (n,):
        raise ValueError(f"targets shape {targets.shape} does not match logits rows {n}")
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"smoothing must be in [0, 1), got {smoothing}")
    if targets.min() < 0 or targets.max() >= v:
        raise ValueError("target id out of vocabulary range")
    keep = np.ones(n, dtype=bool) if pad_id is None else targets != pad_id
    n_keep = int(keep.sum())
    if n_keep == 0:
        raise ValueError("all positions are padding; loss undefined")

    m = logits.data.max(axis=-1, keepdims=True)
    sh = logits.data - m
    lse = np.log(np.exp(sh).sum(axis=-1, keepdims=True)) + m   # [N, 1]
    # per-row loss: lse - (1-eps)*logit[target] - eps*mean_v logit[v]
    tgt_logit = logits.data[np.arange(n), targets]
    row = lse[:, 0] - (1.0 - smoothing) * tgt_logit - smoothing * logits.data.mean(axis=-1)
    loss = row[keep].sum() / n_keep

    def backward():
        p = np.exp(logits.data - lse)                          # softmax rows
        gl = p.copy()
        gl[np.arange(n), targets] -= (1.0 - smoothing)
        gl -= smoothing / v
        gl[~keep] = 0.0
        _accum(logits, gl * (float(out.grad) / n_keep))

    out = _make(np.asarray(loss, dtype=logits.data.dtype), (logits,), backward, "label_smoothed_ce")
    return out
