"""A small transformer encoder: the shared substrate for both matching stages.

Post-layernorm blocks (attention + position-wise feed-forward), learned
position embeddings, padding-aware attention.  Every forward pass through
`forward` can be charged to an `EncodingCounter` site so that the efficiency
benchmark can account for encoder work exactly.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class EncoderConfig:
    d: int = 64
    layers: int = 2
    heads: int = 4
    ff: int = 256
    max_len: int = 64
    vocab_size: int = 100
    dropout: float = 0.1
    activation: str = "gelu"

    def validate(self):
        if self.d % self.heads != 0:
            raise ValueError(f"hidden dim {self.d} not divisible by {self.heads} heads")
        if self.max_len < 8:
            raise ValueError("max sequence length must be at least 8")
        for f in ("d", "layers", "heads", "ff", "max_len", "vocab_size"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive")
        return self


class EncodingCounter:
    """Counts encoder forward passes per call site."""

    SITES = ("instance", "description", "pair")

    def __init__(self):
        self.counts = dict.fromkeys(self.SITES, 0)

    def add(self, site, n):
        self.counts[site] += n

    def reset(self):
        for k in self.counts:
            self.counts[k] = 0


def init_params(config, rng, prefix=""):
    """Scaled-normal initialization; deterministic per rng state."""
    config.validate()
    d, ff = config.d, config.ff
    std = 0.02
    p = {}

    def mk(name, shape, scale=std):
        p[prefix + name] = Tensor(rng.normal(0.0, scale, size=shape))

    def ones(name, n):
        p[prefix + name] = Tensor(np.ones(n))

    def zeros(name, shape):
        p[prefix + name] = Tensor(np.zeros(shape))

    mk("tok_emb", (config.vocab_size, d))
    mk("pos_emb", (config.max_len, d))
    ones("emb_ln.g", d)
    zeros("emb_ln.b", d)
    for i in range(config.layers):
        L = f"layer{i}."
        for w in ("wq", "wk", "wv", "wo"):
            mk(L + w, (d, d))
            zeros(L + w + ".b", d)
        ones(L + "ln1.g", d)
        zeros(L + "ln1.b", d)
        mk(L + "ff1", (d, ff))
        zeros(L + "ff1.b", ff)
        mk(L + "ff2", (ff, d))
        zeros(L + "ff2.b", d)
        ones(L + "ln2.g", d)
        zeros(L + "ln2.b", d)
    return p


def _linear(x2d, params, name):
    return T.add_bias(T.matmul(x2d, params[name]), params[name + ".b"])


def forward(ids, mask, params, config, prefix="", train=False, rng=None,
            counter=None, site=None):
    """Encode a batch: ids/mask [B,L] -> hidden states Tensor [B,L,d].

    Pad keys receive zero attention weight, so hidden states at real
    positions are independent of the amount of trailing padding.
    """
    ids = np.asarray(ids)
    mask = np.asarray(mask)
    if ids.ndim == 1:
        ids, mask = ids[None, :], mask[None, :]
    B, L = ids.shape
    if ids.max(initial=0) >= config.vocab_size:
        raise IndexError(f"token id {ids.max()} out of range "
                         f"(vocab size {config.vocab_size})")
    if counter is not None:
        counter.add(site, B)
    d, h = config.d, config.heads
    dh = d // h
    act = T.gelu if config.activation == "gelu" else T.relu

    x = T.embedding(params[prefix + "tok_emb"], ids)
    pos = T.embedding(params[prefix + "pos_emb"], np.tile(np.arange(L), (B, 1)))
    x = T.add(x, pos)
    x = T.layernorm(x, params[prefix + "emb_ln.g"], params[prefix + "emb_ln.b"])
    x = T.dropout(x, config.dropout, rng, train)

    # key mask for attention: [B*h, 1, L]
    kmask = np.repeat(mask[:, None, None, :], h, axis=1).reshape(B * h, 1, L)

    for i in range(config.layers):
        Lp = f"{prefix}layer{i}."
        x2 = T.reshape(x, (B * L, d))
        q = _linear(x2, params, Lp + "wq")
        k = _linear(x2, params, Lp + "wk")
        v = _linear(x2, params, Lp + "wv")

        def heads_view(t):
            return T.reshape(T.transpose(T.reshape(t, (B, L, h, dh)), (0, 2, 1, 3)),
                             (B * h, L, dh))

        q, k, v = heads_view(q), heads_view(k), heads_view(v)
        scores = T.scale(T.bmm(q, T.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
        attn = T.softmax(scores, axis=-1, mask=kmask)
        attn = T.dropout(attn, config.dropout, rng, train)
        ctx = T.bmm(attn, v)
        ctx = T.reshape(T.transpose(T.reshape(ctx, (B, h, L, dh)), (0, 2, 1, 3)),
                        (B * L, d))
        out = _linear(ctx, params, Lp + "wo")
        out = T.dropout(out, config.dropout, rng, train)
        x = T.layernorm(T.add(x, T.reshape(out, (B, L, d))),
                        params[Lp + "ln1.g"], params[Lp + "ln1.b"])

        f = _linear(T.reshape(x, (B * L, d)), params, Lp + "ff1")
        f = act(f)
        f = _linear(f, params, Lp + "ff2")
        f = T.dropout(f, config.dropout, rng, train)
        x = T.layernorm(T.add(x, T.reshape(f, (B, L, d))),
                        params[Lp + "ln2.g"], params[Lp + "ln2.b"])
    return x
