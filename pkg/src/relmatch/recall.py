"""Coarse-grained recall: contrastive dual-tower training and a precomputed
description index serving cosine top-k queries.

The two towers share one encoder.  Training contrasts each instance against
every description in its mini-batch (temperature-scaled softmax over cosine
similarities); at query time all description vectors are pre-inferred, so an
instance costs exactly one encoder forward.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from . import params as P
from . import tensor as T
from . import textpipe as tp
from . import towers

INDEX_MAGIC = b"RMIX"
INDEX_VERSION = 1


@dataclass
class ContrastiveConfig:
    tau: float = 0.02
    batch_size: int = 8
    lr: float = 1e-3
    epochs: int = 10
    warmup_steps: int = 20
    weight_decay: float = 0.01
    restarts: int = 1

    def validate(self):
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 2:
            raise ValueError("contrastive batch size must be at least 2")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        return self


def info_nce_loss(x_vec, d_vec, tau):
    """Mean in-batch contrastive loss over cosine similarities.

    x_vec, d_vec: Tensors [N, 3d], paired by index (diagonal positives).
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    n = x_vec.shape[0]
    if n < 2:
        raise ValueError("in-batch contrast needs at least 2 pairs")
    sims = T.matmul(T.normalize_rows(x_vec), T.transpose(T.normalize_rows(d_vec), (1, 0)))
    return T.cross_entropy(T.scale(sims, 1.0 / tau), np.arange(n))


def init_recall_params(config, rng, desc_mode="virtual"):
    p = enc.init_params(config, rng, prefix="enc.")
    if desc_mode == "virtual":
        p.update(towers.init_pooling_head(config.d, rng, "pool_h."))
        p.update(towers.init_pooling_head(config.d, rng, "pool_t."))
    return p


def _annotated_spans(descs, seqs):
    spans = []
    for desc, seq in zip(descs, seqs):
        if desc.head_span is None or desc.tail_span is None:
            raise ValueError(f"relation {desc.relation} has no annotated hypernym spans")
        out = []
        for s, e in (desc.head_span, desc.tail_span):
            pos = [seq.token_positions[i] for i in range(s, e + 1)
                   if i in seq.token_positions]
            if not pos:
                raise ValueError(f"annotated span of relation {desc.relation} "
                                 "was truncated away")
            out.append((min(pos), max(pos)))
        spans.append(tuple(out))
    return spans


def encode_description_batch(descs, seqs, params, config, desc_mode,
                             train=False, rng=None, counter=None):
    """Description vectors [B, 3d] under the configured pooling mode."""
    ids, mask = tp.stack(seqs)
    if desc_mode == "virtual":
        return towers.represent_descriptions(ids, mask, params, config,
                                             train=train, rng=rng, counter=counter)
    if desc_mode == "annotated":
        return towers.represent_descriptions_annotated(
            ids, mask, _annotated_spans(descs, seqs), params, config,
            train=train, rng=rng, counter=counter)
    if desc_mode == "mean":
        return towers.represent_descriptions_mean(ids, mask, params, config,
                                                  train=train, rng=rng, counter=counter)
    raise ValueError(f"unknown description mode {desc_mode!r}")


def encode_instance_batch(seqs, params, config, train=False, rng=None,
                          counter=None, site="instance"):
    ids, mask = tp.stack(seqs)
    pos_h = np.array([s.e_h_pos for s in seqs])
    pos_t = np.array([s.e_t_pos for s in seqs])
    return towers.represent_instances(ids, mask, (pos_h, pos_t), params, config,
                                      train=train, rng=rng, counter=counter,
                                      site=site)


def snapshot_params(params):
    return {k: v.data.copy() for k, v in params.items()}


def restore_params(params, snapshot):
    for k, v in params.items():
        v.data = snapshot[k].copy()


def train_recall(instances, catalog, vocab, enc_config, config, seed,
                 desc_mode="virtual", counter=None, params=None,
                 val_eval=None):
    """Contrastive training over the seen-relation split.

    If `val_eval` is given it is called with the parameters after each epoch
    and must return a comparable score; the best-scoring snapshot across all
    epochs and restarts is restored before returning.  Without `val_eval`
    (or with caller-supplied `params`) a single run is performed.
    Returns (params, per-epoch mean loss trace of the selected run).
    """
    config.validate()
    by_rel = tp.group_by_relation(instances)
    if len(by_rel) < 2:
        raise ValueError("training needs at least 2 distinct relations")
    desc_by_rel = {d.relation: d for d in catalog}
    L = enc_config.max_len
    inst_seq = {id(i): tp.encode_instance(i, vocab, L) for i in instances}
    desc_seq = {d.relation: tp.encode_description(d, vocab, L) for d in catalog}
    steps_per_epoch = max(1, len(instances) // config.batch_size)

    restarts = config.restarts if val_eval is not None and params is None else 1
    best = None
    selected = None
    for restart in range(restarts):
        rng = np.random.default_rng(seed + 7919 * restart)
        if params is None:
            run_params = init_recall_params(enc_config, rng, desc_mode)
        else:
            run_params = params
        opt = P.AdamW(run_params, lr=config.lr,
                      weight_decay=config.weight_decay)
        trace = []
        step = 0
        for _ in range(config.epochs):
            losses = []
            for _ in range(steps_per_epoch):
                step += 1
                batch = tp.sample_contrastive_batch(by_rel, config.batch_size,
                                                    rng)
                iseqs = [inst_seq[id(b)] for b in batch]
                descs = [desc_by_rel[b.relation] for b in batch]
                dseqs = [desc_seq[b.relation] for b in batch]
                with T.Tape() as tape:
                    x_vec = encode_instance_batch(
                        iseqs, run_params, enc_config, train=True, rng=rng,
                        counter=counter)
                    d_vec = encode_description_batch(
                        descs, dseqs, run_params, enc_config, desc_mode,
                        train=True, rng=rng, counter=counter)
                    loss = info_nce_loss(x_vec, d_vec, config.tau)
                    if not np.isfinite(loss.item()):
                        raise FloatingPointError(
                            f"non-finite contrastive loss at step {step}")
                    opt.zero_grad()
                    tape.backward(loss)
                opt.step(lr_scale=min(1.0, step / max(1, config.warmup_steps)))
                losses.append(loss.item())
            trace.append(float(np.mean(losses)))
            if val_eval is not None:
                score = val_eval(run_params)
                # ties go to the later epoch: regularization keeps improving
                # transfer after the training loss has flattened
                if best is None or score >= best[0]:
                    best = (score, snapshot_params(run_params))
                    selected = (run_params, list(trace))
        if selected is None:
            selected = (run_params, trace)
    run_params, trace = selected
    if best is not None:
        restore_params(run_params, best[1])
    return run_params, trace


# ---------------------------------------------------------------------------
# description index
# ---------------------------------------------------------------------------

@dataclass
class DescriptionIndex:
    relation_ids: list
    matrix: np.ndarray           # [n, 3d], unit rows
    fingerprint: str

    def __post_init__(self):
        if len(self.relation_ids) != self.matrix.shape[0]:
            raise ValueError("index id table does not match matrix rows")

    @property
    def size(self):
        return len(self.relation_ids)

    def save(self, path):
        n, dim = self.matrix.shape
        fp = bytes.fromhex(self.fingerprint)
        with open(path, "wb") as f:
            f.write(INDEX_MAGIC)
            f.write(struct.pack("<IIIB", INDEX_VERSION, n, dim, len(fp)))
            f.write(fp)
            f.write(np.asarray(self.relation_ids, dtype="<i8").tobytes())
            f.write(self.matrix.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            blob = f.read()
        if blob[:4] != INDEX_MAGIC:
            raise ValueError("not an index file (bad magic)")
        version, n, dim, fplen = struct.unpack_from("<IIIB", blob, 4)
        if version != INDEX_VERSION:
            raise ValueError(f"unsupported index version {version}")
        off = 17
        fp = blob[off:off + fplen].hex()
        off += fplen
        ids = np.frombuffer(blob, dtype="<i8", count=n, offset=off)
        off += 8 * n
        mat = np.frombuffer(blob, dtype="<f8", count=n * dim, offset=off)
        return cls([int(i) for i in ids], mat.reshape(n, dim).copy(), fp)


def build_index(catalog, vocab, params, enc_config, desc_mode="virtual",
                counter=None):
    """Encode every description once; rows are L2-normalized."""
    if not catalog:
        raise ValueError("cannot build an index from an empty catalog")
    ids = [d.relation for d in catalog]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate relation id in catalog")
    order = np.argsort(ids)
    catalog = [catalog[i] for i in order]
    ids = [ids[i] for i in order]
    seqs = [tp.encode_description(d, vocab, enc_config.max_len) for d in catalog]
    vec = encode_description_batch(catalog, seqs, params, enc_config, desc_mode,
                                   counter=counter)
    mat = vec.data / np.linalg.norm(vec.data, axis=1, keepdims=True)
    return DescriptionIndex(ids, mat, P.fingerprint(params))


def topk_from_vector(x_vec, index, k):
    """Exhaustive cosine top-k; ties broken by ascending relation id."""
    if not (1 <= k <= index.size):
        raise ValueError(f"k={k} out of range for index of {index.size} relations")
    n = np.linalg.norm(x_vec)
    if n == 0.0:
        raise ValueError("query vector has zero norm")
    scores = index.matrix @ (x_vec / n)
    order = sorted(range(index.size),
                   key=lambda i: (-scores[i], index.relation_ids[i]))[:k]
    return [(index.relation_ids[i], float(scores[i])) for i in order]


def recall_topk(inst, index, params, enc_config, vocab, k, counter=None):
    """Recall candidates for one instance: exactly one tower forward."""
    seq = tp.encode_instance(inst, vocab, enc_config.max_len)
    x_vec = encode_instance_batch([seq], params, enc_config, counter=counter)
    return topk_from_vector(x_vec.data[0], index, k)
