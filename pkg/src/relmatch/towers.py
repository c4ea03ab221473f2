"""Tower representations for the retrieval stage.

An instance is represented by the concatenation of three encoder states:
the [CLS] state (context) and the states at the two opening entity markers
(head and tail).  A relation description gets the same 3d layout, but its
head/tail slots are *virtual entities*: attention-pooled summaries produced
by two independently parameterized pooling heads, so no manual hypernym
annotation is needed.
"""

import numpy as np

from . import encoder as enc
from . import tensor as T
from .tensor import Tensor


def init_pooling_head(d, rng, prefix):
    return {prefix + "W": Tensor(rng.normal(0.0, 0.02, size=(d, 1))),
            prefix + "b": Tensor(np.zeros(1))}


def represent_instances(ids, mask, positions, params, config, prefix="enc.",
                        train=False, rng=None, counter=None, site="instance"):
    """Encode instances and build their 3d vectors.

    positions: (e_h_pos array [B], e_t_pos array [B]); [CLS] is position 0.
    Returns a Tensor [B, 3d].
    """
    e_h_pos, e_t_pos = positions
    if np.any(np.asarray(e_h_pos) < 0) or np.any(np.asarray(e_t_pos) < 0):
        raise ValueError("instance sequence is missing an entity marker position")
    h = enc.forward(ids, mask, params, config, prefix=prefix, train=train,
                    rng=rng, counter=counter, site=site)
    B = h.shape[0]
    x_c = T.take_rows(h, np.zeros(B, dtype=np.int64))
    x_h = T.take_rows(h, e_h_pos)
    x_t = T.take_rows(h, e_t_pos)
    return T.concat([x_c, x_h, x_t], axis=-1)


def weight_pool(hidden, pool_mask, params, prefix):
    """Attention pooling: scores from a learned projection, softmax weights
    over real non-[CLS] tokens, weighted sum of hidden states.

    hidden [B,L,d], pool_mask [B,L] (1 on poolable positions).
    Returns (pooled [B,d], weights [B,L]); weights are 0 off-mask and sum
    to 1 over the mask.
    """
    pool_mask = np.asarray(pool_mask)
    if np.any(pool_mask.sum(axis=1) == 0):
        raise ValueError("weight_pool: a sequence has no poolable token")
    B, L, d = hidden.shape
    scores = T.add_bias(T.matmul(T.reshape(hidden, (B * L, d)), params[prefix + "W"]),
                        params[prefix + "b"])
    scores = T.reshape(scores, (B, L))
    weights = T.softmax(scores, axis=-1, mask=pool_mask)
    pooled = T.reshape(T.bmm(T.reshape(weights, (B, 1, L)), hidden), (B, d))
    return pooled, weights


def _pool_mask(mask):
    """Real tokens excluding position 0 ([CLS])."""
    pm = np.asarray(mask).copy()
    pm[:, 0] = 0
    return pm


def represent_descriptions(ids, mask, params, config, prefix="enc.",
                           train=False, rng=None, counter=None,
                           site="description", return_weights=False):
    """3d description vectors with two virtual-entity pooling heads."""
    h = enc.forward(ids, mask, params, config, prefix=prefix, train=train,
                    rng=rng, counter=counter, site=site)
    B = h.shape[0]
    d_c = T.take_rows(h, np.zeros(B, dtype=np.int64))
    pm = _pool_mask(mask)
    d_h, a_h = weight_pool(h, pm, params, "pool_h.")
    d_t, a_t = weight_pool(h, pm, params, "pool_t.")
    vec = T.concat([d_c, d_h, d_t], axis=-1)
    if return_weights:
        return vec, a_h, a_t
    return vec


def represent_descriptions_annotated(ids, mask, spans, params, config,
                                     prefix="enc.", train=False, rng=None,
                                     counter=None, site="description"):
    """Ablation path: head/tail slots are mean-pooled annotated spans.

    spans: list of ((h_start, h_end), (t_start, t_end)) per sequence, in
    *encoded positions* (inclusive).
    """
    h = enc.forward(ids, mask, params, config, prefix=prefix, train=train,
                    rng=rng, counter=counter, site=site)
    B, L, _ = h.shape
    hmask = np.zeros((B, L))
    tmask = np.zeros((B, L))
    for i, ((hs, he), (ts, te)) in enumerate(spans):
        if he < hs or te < ts:
            raise ValueError("annotated span is empty")
        hmask[i, hs:he + 1] = 1
        tmask[i, ts:te + 1] = 1
    d_c = T.take_rows(h, np.zeros(B, dtype=np.int64))
    d_h = T.mean_rows(h, hmask)
    d_t = T.mean_rows(h, tmask)
    return T.concat([d_c, d_h, d_t], axis=-1)


def represent_descriptions_mean(ids, mask, params, config, prefix="enc.",
                                train=False, rng=None, counter=None,
                                site="description"):
    """Plain-matching ablation: both entity slots are the masked mean of all
    real non-[CLS] tokens."""
    h = enc.forward(ids, mask, params, config, prefix=prefix, train=train,
                    rng=rng, counter=counter, site=site)
    B = h.shape[0]
    d_c = T.take_rows(h, np.zeros(B, dtype=np.int64))
    m = T.mean_rows(h, _pool_mask(mask))
    return T.concat([d_c, m, m], axis=-1)
