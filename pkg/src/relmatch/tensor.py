"""Minimal dense reverse-mode autodiff on numpy arrays.

A `Tape` records every operation executed while it is active; replaying the
record in reverse order propagates gradients from a scalar loss back to every
parameter that contributed to it.  Outside of a tape, ops run forward-only.

Only the operations the matching pipeline needs are provided.  Tensors are
dense and row-major; the single broadcasting rule is bias-add over the last
axis.
"""

import math

import numpy as np

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    pass


class Tensor:
    """A dense array with an optional gradient slot."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name=None):
        arr = np.asarray(data)
        if arr.dtype != np.float32:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape})"


class Tape:
    """Ordered record of executed ops; reverse replay computes gradients."""

    _active = None

    def __init__(self):
        self.ops = []

    def __enter__(self):
        self._outer = Tape._active
        Tape._active = self
        return self

    def __exit__(self, *exc):
        Tape._active = self._outer
        return False

    @classmethod
    def record(cls, out, backward_fn):
        t = cls._active
        if t is not None:
            t.ops.append((out, backward_fn))

    def backward(self, loss):
        if loss.data.size != 1:
            raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self.ops):
            if out.grad is not None:
                fn(out.grad)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def check_finite(t, where=""):
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"non-finite values detected {where}".strip())
    return t


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data + b.data)

    def backward(g):
        a.accumulate(g)
        b.accumulate(g)

    Tape.record(out, backward)
    return out


def sub(a, b):
    return add(a, scale(b, -1.0))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data * b.data)

    def backward(g):
        a.accumulate(g * b.data)
        b.accumulate(g * a.data)

    Tape.record(out, backward)
    return out


def scale(a, c):
    c = float(c)
    out = Tensor(a.data * c)

    def backward(g):
        a.accumulate(g * c)

    Tape.record(out, backward)
    return out


def add_bias(x, b):
    """x[..., j] + b[j]; the only broadcast the library supports."""
    if x.shape[-1] != b.data.shape[-1] or b.data.ndim != 1:
        raise ShapeError(f"add_bias: bias {b.shape} does not fit last axis of {x.shape}")
    out = Tensor(x.data + b.data)

    def backward(g):
        x.accumulate(g)
        b.accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    Tape.record(out, backward)
    return out


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g):
        a.accumulate(g @ b.data.T)
        b.accumulate(a.data.T @ g)

    Tape.record(out, backward)
    return out


def bmm(a, b):
    """Batched matmul over leading axis: [B,m,k] x [B,k,n] -> [B,m,n]."""
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ShapeError(f"bmm expects 3-d operands, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm: shapes {a.shape} and {b.shape} incompatible")
    out = Tensor(a.data @ b.data)

    def backward(g):
        a.accumulate(g @ b.data.transpose(0, 2, 1))
        b.accumulate(a.data.transpose(0, 2, 1) @ g)

    Tape.record(out, backward)
    return out


def transpose(x, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(x.data.transpose(axes))

    def backward(g):
        x.accumulate(g.transpose(inv))

    Tape.record(out, backward)
    return out


def reshape(x, shape):
    shape = tuple(shape)
    out = Tensor(x.data.reshape(shape))

    def backward(g):
        x.accumulate(g.reshape(x.data.shape))

    Tape.record(out, backward)
    return out


def concat(parts, axis=-1):
    parts = [_as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            p.accumulate(g[tuple(idx)])

    Tape.record(out, backward)
    return out


def embedding(table, ids):
    """Row lookup: table [V,d], ids int array of any shape -> [*ids.shape, d]."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding: id out of range for table of {table.shape[0]} rows")
    out = Tensor(table.data[ids])

    def backward(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, g)

    Tape.record(out, backward)
    return out


def take_rows(x, idx):
    """x [B,L,d], idx [B] -> [B,d]; picks one position per batch row."""
    idx = np.asarray(idx)
    rows = np.arange(x.shape[0])
    out = Tensor(x.data[rows, idx])

    def backward(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        np.add.at(x.grad, (rows, idx), g)

    Tape.record(out, backward)
    return out


# ---------------------------------------------------------------------------
# nonlinearities and normalizations
# ---------------------------------------------------------------------------

_MASK_OFFSET = -1e30


def softmax(x, axis=-1, mask=None):
    """Softmax along `axis`; masked positions get zero weight exactly.

    `mask` is a plain array broadcastable to x, 1 on valid positions.  A row
    with no valid position cannot be normalized and raises.
    """
    z = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=z.dtype)
        if not np.all(np.broadcast_to(mask, z.shape).max(axis=axis) > 0):
            raise ValueError("softmax: a row is entirely masked")
        z = z + (1.0 - mask) * _MASK_OFFSET
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    if mask is not None:
        y = y * np.broadcast_to(mask, y.shape)
    out = Tensor(y)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        x.accumulate(y * (g - dot))

    Tape.record(out, backward)
    return out


def layernorm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ValueError("layernorm: epsilon must be positive")
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)

    def backward(g):
        dxhat = g * gain.data
        gain.accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        bias.accumulate(g.reshape(-1, d).sum(axis=0))
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        x.accumulate(inv * (dxhat - m1 - xhat * m2))

    Tape.record(out, backward)
    return out


def relu(x):
    out = Tensor(np.maximum(x.data, 0.0))

    def backward(g):
        x.accumulate(g * (x.data > 0))

    Tape.record(out, backward)
    return out


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

try:
    from scipy.special import erf as _erf
except ImportError:  # pragma: no cover
    _erf = np.vectorize(math.erf)


def gelu(x):
    cdf = 0.5 * (1.0 + _erf(x.data * _INV_SQRT2))
    out = Tensor(x.data * cdf)

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        x.accumulate(g * (cdf + x.data * pdf))

    Tape.record(out, backward)
    return out


def dropout(x, rate, rng, train):
    """Seeded inverted dropout; identity when not training."""
    if not train or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * keep)

    def backward(g):
        x.accumulate(g * keep)

    Tape.record(out, backward)
    return out


# ---------------------------------------------------------------------------
# reductions, similarities, losses
# ---------------------------------------------------------------------------

def tsum(x):
    out = Tensor(np.asarray(x.data.sum()))

    def backward(g):
        x.accumulate(np.broadcast_to(g, x.data.shape).copy())

    Tape.record(out, backward)
    return out


def tmean(x):
    n = x.data.size
    out = Tensor(np.asarray(x.data.mean()))

    def backward(g):
        x.accumulate(np.broadcast_to(g / n, x.data.shape).copy())

    Tape.record(out, backward)
    return out


def mean_rows(x, mask):
    """Masked mean over axis 1: x [B,L,d], mask [B,L] -> [B,d]."""
    mask = np.asarray(mask, dtype=x.data.dtype)
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("mean_rows: a row has no unmasked positions")
    w = mask / counts[:, None]
    out = Tensor(np.einsum("bl,bld->bd", w, x.data))

    def backward(g):
        x.accumulate(w[:, :, None] * g[:, None, :])

    Tape.record(out, backward)
    return out


def normalize_rows(x, eps=0.0):
    """Scale each row of a 2-d tensor to unit Euclidean norm."""
    n = np.linalg.norm(x.data, axis=1)
    if np.any(n <= eps):
        raise ValueError("normalize_rows: zero-norm row has no direction")
    y = x.data / n[:, None]
    out = Tensor(y)

    def backward(g):
        dot = (g * y).sum(axis=1)
        x.accumulate((g - y * dot[:, None]) / n[:, None])

    Tape.record(out, backward)
    return out


def cosine_similarity(u, v):
    """Cosine of two 1-d tensors; zero vectors are rejected."""
    nu = np.linalg.norm(u.data)
    nv = np.linalg.norm(v.data)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine_similarity: zero vector has no direction")
    c = float(u.data @ v.data / (nu * nv))
    out = Tensor(np.asarray(c))

    def backward(g):
        u.accumulate(g * (v.data / (nu * nv) - u.data * c / (nu * nu)))
        v.accumulate(g * (u.data / (nu * nv) - v.data * c / (nv * nv)))

    Tape.record(out, backward)
    return out


def cross_entropy(logits, labels):
    """Mean log-softmax cross-entropy: logits [B,K], integer labels [B]."""
    labels = np.asarray(labels)
    B, K = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise IndexError(f"cross_entropy: label out of range for {K} classes")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logZ = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logZ
    out = Tensor(np.asarray(-logp[np.arange(B), labels].mean()))

    def backward(g):
        p = np.exp(logp)
        p[np.arange(B), labels] -= 1.0
        logits.accumulate(g * p / B)

    Tape.record(out, backward)
    return out
