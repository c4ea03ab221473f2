"""Fine-grained classification over recalled candidates.

A separate cross-encoder jointly encodes each ⟨instance + candidate
description⟩ pair; the k pair representations ([CLS] states) are concatenated
and an MLP picks the correct candidate.  Training candidates always contain
the gold description, presented at a seeded-random position so the head
cannot learn a slot bias.
"""

from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from . import params as P
from . import recall as rc
from . import tensor as T
from . import textpipe as tp
from .tensor import Tensor


@dataclass
class RerankConfig:
    k: int = 2
    hidden: int = 64
    lr: float = 1e-3
    epochs: int = 10
    warmup_steps: int = 20
    weight_decay: float = 0.01
    # probability that a training candidate set is anonymized: all content
    # tokens are remapped by one random vocabulary permutation shared by the
    # instance and its k candidate descriptions.  Lexical identities become
    # meaningless, but token *overlap* between the two segments survives, so
    # the classifier is pushed toward the matching strategy that carries over
    # to never-seen relations instead of memorizing seen descriptions.
    anonymize: float = 0.0
    # probability that a training candidate set uses uniformly sampled
    # negatives instead of the hardest ones (see build_training_candidates)
    explore: float = 0.0

    def validate(self):
        if self.k < 2:
            raise ValueError("candidate sets need k >= 2")
        if not (0.0 <= self.anonymize <= 1.0):
            raise ValueError("anonymize must be a probability")
        if not (0.0 <= self.explore <= 1.0):
            raise ValueError("explore must be a probability")
        return self


def init_rerank_params(enc_config, k, hidden, rng):
    p = enc.init_params(enc_config, rng, prefix="renc.")
    d = enc_config.d
    p["head.W1"] = Tensor(rng.normal(0.0, 0.02, size=(k * d, hidden)))
    p["head.b1"] = Tensor(np.zeros(hidden))
    p["head.W2"] = Tensor(rng.normal(0.0, 0.02, size=(hidden, k)))
    p["head.b2"] = Tensor(np.zeros(k))
    p["head.k"] = Tensor(np.asarray(float(k)))
    return p


def head_k(params):
    return int(params["head.k"].item())


def rerank_forward(pair_seqs, params, enc_config, k, train=False, rng=None,
                   counter=None):
    """Score candidate sets: pair_seqs is a flat list of B*k encoded pairs
    (candidates of one instance contiguous).  Returns logits Tensor [B, k].
    """
    if head_k(params) != k:
        raise ValueError(f"head was trained for k={head_k(params)}, got k={k}")
    if len(pair_seqs) % k != 0:
        raise ValueError("pair count is not a multiple of k")
    B = len(pair_seqs) // k
    ids, mask = tp.stack(pair_seqs)
    h = enc.forward(ids, mask, params, enc_config, prefix="renc.", train=train,
                    rng=rng, counter=counter, site="pair")
    o = T.take_rows(h, np.zeros(B * k, dtype=np.int64))        # [B*k, d]
    o = T.reshape(o, (B, k * enc_config.d))
    hid = T.relu(T.add_bias(T.matmul(o, params["head.W1"]), params["head.b1"]))
    return T.add_bias(T.matmul(hid, params["head.W2"]), params["head.b2"])


def rerank_probs(logits):
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def rerank_loss(logits, gold_positions):
    gold = np.atleast_1d(np.asarray(gold_positions))
    if gold.min() < 0 or gold.max() >= logits.shape[-1]:
        raise IndexError("gold position outside the candidate set")
    return T.cross_entropy(logits, gold)


def anonymize_set(seqs, vocab_size, rng):
    """Remap content-token ids of one candidate set by a shared random
    permutation; the reserved control tokens keep their ids."""
    n_res = len(tp.RESERVED)
    perm = np.arange(vocab_size)
    perm[n_res:] = n_res + rng.permutation(vocab_size - n_res)
    return [tp.EncodedSequence(perm[s.ids], s.mask, s.e_h_pos, s.e_t_pos,
                               s.sep_pos, s.token_positions) for s in seqs]


def build_training_candidates(gold_idx, scores, k, rng, explore=0.0):
    """Pick the gold plus k-1 other descriptions: the top-scoring ones, or
    (with probability `explore`) a uniform sample.

    scores: similarity of the instance to each available description
    (the gold's own score is ignored).  The exploration mix keeps easy
    negatives in play — training on hardest negatives alone often never
    escapes the uniform-prediction plateau.  Returns (indices, gold_pos)
    with the gold placed at a seeded-random position.
    """
    n = len(scores)
    if n < k:
        raise ValueError(f"need {k} distinct descriptions, got {n}")
    if explore and rng.random() < explore:
        pool = [i for i in range(n)
                if i != gold_idx and np.isfinite(scores[i])]
        if len(pool) < k - 1:
            pool = [i for i in range(n) if i != gold_idx]
        pick = rng.choice(len(pool), size=k - 1, replace=False)
        others = [pool[int(j)] for j in pick]
    else:
        others = sorted((i for i in range(n) if i != gold_idx),
                        key=lambda i: (-scores[i], i))[:k - 1]
    cands = [gold_idx] + others
    perm = rng.permutation(k)
    ordered = [cands[j] for j in perm]
    return ordered, int(np.where(perm == 0)[0][0])


@dataclass
class PipelineModel:
    """Everything the two-stage pipeline needs at inference time."""
    params: dict
    recall_config: object        # EncoderConfig of the shared towers
    rerank_config: object        # EncoderConfig of the cross-encoder
    k: int
    desc_mode: str = "virtual"
    use_rerank: bool = True


def _pair_cache():
    cache = {}

    def get(inst, desc, vocab, L):
        key = (id(inst), desc.relation)
        if key not in cache:
            cache[key] = tp.encode_pair(inst, desc, vocab, L)
        return cache[key]

    return get


def train_pipeline(instances, catalog, vocab, recall_enc, rerank_enc,
                   cconfig, rconfig, seed, desc_mode="virtual", joint=True,
                   counter=None, val_eval=None):
    """Train both stages, jointly (summed loss, one optimizer) or in
    sequence (recall first, then the classifier on its frozen output).

    Either way every training candidate set contains the gold description.
    The two stages share no parameters, so with `val_eval` given each stage
    is selected independently across random restarts: the towers by the
    best validation recall score (per epoch, as in train_recall) and the
    classifier by a transfer probe — a few training relations are excluded
    from classifier training (the towers still see them) and each restart's
    classifier is scored on candidate sets drawn from those never-classified
    relations.  A classifier that merely memorizes the seen relations scores
    at chance on the probe; one that learned to match instance against
    description carries over, exactly as it must on the test relations.
    If no snapshot beats the towers' own accuracy on the probe sets, the
    classifier output layer is zeroed, which makes prediction fall back to
    recall order.  Returns (PipelineModel, loss trace dict).
    """
    cconfig.validate()
    rconfig.validate()
    k = rconfig.k
    by_rel = tp.group_by_relation(instances)
    desc_by_rel = {d.relation: d for d in catalog}
    L = recall_enc.max_len
    inst_seq = {id(i): tp.encode_instance(i, vocab, L) for i in instances}
    desc_seq = {d.relation: tp.encode_description(d, vocab, L) for d in catalog}
    pair_of = _pair_cache()
    steps_per_epoch = max(1, len(instances) // cconfig.batch_size)

    restarts = cconfig.restarts if val_eval is not None else 1
    probe_rels = ()
    if val_eval is not None and len(by_rel) >= k + 2:
        hold_rng = np.random.default_rng(seed + 13)
        chosen = hold_rng.choice(sorted(by_rel), size=max(k, 2),
                                 replace=False)
        probe_rels = tuple(sorted(int(r) for r in chosen))

    # fixed probe candidate sets: (instance, slot-ordered candidates, gold
    # position), identical across restarts and epochs
    probe_sets = []
    if probe_rels:
        prng = np.random.default_rng(seed + 17)
        for r in probe_rels:
            others = [desc_by_rel[o] for o in probe_rels if o != r]
            for inst in by_rel[r]:
                pick = prng.choice(len(others), size=k - 1, replace=False)
                cands = [desc_by_rel[r]] + [others[int(j)] for j in pick]
                perm = prng.permutation(k)
                probe_sets.append((inst, [cands[int(j)] for j in perm],
                                   int(np.where(perm == 0)[0][0])))

    def probe_accuracy(params):
        """Classifier accuracy on the held-out relations, gold at a seeded-
        random position in each candidate set."""
        pair_seqs = [pair_of(inst, d, vocab, rerank_enc.max_len)
                     for inst, cands, _ in probe_sets for d in cands]
        logits = rerank_forward(pair_seqs, params, rerank_enc, k)
        picks = np.argmax(rerank_probs(logits), axis=1)
        gold = np.asarray([g for *_, g in probe_sets])
        return float(np.mean(picks == gold))

    def probe_recall_reference(params):
        """Accuracy of the recall towers alone on the same probe sets: the
        bar the classifier must clear to be worth using at all."""
        iseqs = [inst_seq[id(inst)] for inst, _, _ in probe_sets]
        x = rc.encode_instance_batch(iseqs, params, recall_enc).data
        descs = [desc_by_rel[r] for r in probe_rels]
        dseqs = [desc_seq[r] for r in probe_rels]
        dv = rc.encode_description_batch(descs, dseqs, params, recall_enc,
                                         desc_mode).data
        dv /= np.linalg.norm(dv, axis=1, keepdims=True)
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        vec = {r: dv[i] for i, r in enumerate(probe_rels)}
        hits = 0
        for (inst, cands, gold), xv in zip(probe_sets, x):
            scores = [float(xv @ vec[d.relation]) for d in cands]
            pick = min(range(k), key=lambda j: (-scores[j],
                                                cands[j].relation))
            hits += pick == gold
        return hits / len(probe_sets)
    if not joint:
        frozen_recall, recall_trace = rc.train_recall(
            instances, catalog, vocab, recall_enc, cconfig, seed + 1,
            desc_mode=desc_mode, counter=counter, val_eval=val_eval)
    best = None        # joint towers: (val score, {name: data})
    best_rr = None     # classifier: (probe score, {name: data}, trace)
    probe_scores = []  # per restart, for the returned trace
    for restart in range(restarts):
        rng = np.random.default_rng(seed + 7919 * restart)
        recall_params = (rc.init_recall_params(recall_enc, rng, desc_mode)
                         if joint else frozen_recall)
        rerank_params = init_rerank_params(rerank_enc, k, rconfig.hidden, rng)
        recall_keys = set(recall_params)

        trace = {"recall": [] if joint else list(recall_trace), "rerank": []}
        all_params = {**recall_params, **rerank_params}
        trainable = dict(all_params) if joint else dict(rerank_params)
        trainable.pop("head.k", None)
        opt = P.AdamW(trainable, lr=cconfig.lr,
                      weight_decay=cconfig.weight_decay)

        step = 0
        epochs = cconfig.epochs if joint else rconfig.epochs
        for _ in range(epochs):
            rl, cl = [], []
            for _ in range(steps_per_epoch):
                step += 1
                batch = tp.sample_contrastive_batch(by_rel,
                                                    cconfig.batch_size, rng)
                iseqs = [inst_seq[id(b)] for b in batch]
                descs = [desc_by_rel[b.relation] for b in batch]
                dseqs = [desc_seq[b.relation] for b in batch]
                if not joint and all(b.relation in probe_rels for b in batch):
                    continue
                with T.Tape() as tape:
                    x_vec = rc.encode_instance_batch(
                        iseqs, all_params, recall_enc, train=joint, rng=rng,
                        counter=counter)
                    d_vec = rc.encode_description_batch(
                        descs, dseqs, all_params, recall_enc, desc_mode,
                        train=joint, rng=rng, counter=counter)
                    loss_r = rc.info_nce_loss(x_vec, d_vec, cconfig.tau)

                    xs = x_vec.data / np.linalg.norm(x_vec.data, axis=1,
                                                     keepdims=True)
                    ds = d_vec.data / np.linalg.norm(d_vec.data, axis=1,
                                                     keepdims=True)
                    sims = xs @ ds.T
                    pair_seqs, gold_pos = [], []
                    for i, inst in enumerate(batch):
                        if inst.relation in probe_rels:
                            continue
                        scores = sims[i].copy()
                        for j, other in enumerate(batch):
                            if j != i and other.relation in probe_rels:
                                scores[j] = -np.inf
                        cands, gp = build_training_candidates(
                            i, scores, k, rng, explore=rconfig.explore)
                        gold_pos.append(gp)
                        group = [pair_of(inst, descs[ci], vocab,
                                         rerank_enc.max_len) for ci in cands]
                        if rconfig.anonymize and \
                                rng.random() < rconfig.anonymize:
                            group = anonymize_set(group,
                                                  rerank_enc.vocab_size, rng)
                        pair_seqs.extend(group)
                    if pair_seqs:
                        logits = rerank_forward(pair_seqs, all_params,
                                                rerank_enc, k, train=True,
                                                rng=rng, counter=counter)
                        loss_c = rerank_loss(logits, gold_pos)
                        total = T.add(loss_r, loss_c) if joint else loss_c
                    else:
                        loss_c = None
                        total = loss_r
                    if not np.isfinite(total.item()):
                        raise FloatingPointError(
                            f"non-finite loss at step {step}")
                    opt.zero_grad()
                    tape.backward(total)
                opt.step(lr_scale=min(1.0, step / max(1,
                                                      cconfig.warmup_steps)))
                rl.append(loss_r.item())
                if loss_c is not None:
                    cl.append(loss_c.item())
            if joint:
                trace["recall"].append(float(np.mean(rl)))
            if cl:
                trace["rerank"].append(float(np.mean(cl)))
            if joint and val_eval is not None:
                score = val_eval(all_params)
                if best is None or score >= best[0]:
                    best = (score, {p: all_params[p].data.copy()
                                    for p in recall_keys},
                            list(trace["recall"]))
            if probe_rels:
                probe = probe_accuracy(all_params)
                probe_scores.append(probe)
                score_rr = (probe, -trace["rerank"][-1])
                if best_rr is None or score_rr >= best_rr[0]:
                    best_rr = (score_rr, {p: all_params[p].data.copy()
                                          for p in rerank_params},
                               list(trace["rerank"]))
        if not probe_rels:
            score_rr = (-trace["rerank"][-1],)
            if best_rr is None or score_rr > best_rr[0]:
                best_rr = (score_rr, {p: all_params[p].data.copy()
                                      for p in rerank_params},
                           list(trace["rerank"]))

    # assemble the final parameter set from the independently selected parts
    if joint and best is not None:
        for p, v in best[1].items():
            all_params[p].data = v.copy()
        trace["recall"] = best[2]
    for p, v in best_rr[1].items():
        all_params[p].data = v.copy()
    trace["rerank"] = best_rr[2]
    if probe_scores:
        trace["probe"] = probe_scores

    # last selection candidate: the trivial classifier that defers to recall
    # order.  If even the best trained classifier loses to the bare towers on
    # the probe, zero the output layer — uniform probabilities make
    # prediction tie-break by recall score, i.e. exact recall order — rather
    # than ship a classifier that would override a stronger stage.  Training
    # the classifier occasionally never escapes the uniform plateau on any
    # restart; this keeps such runs at recall quality instead of below it.
    if probe_sets:
        baseline = probe_recall_reference(all_params)
        trace["probe_baseline"] = baseline
        if best_rr[0][0] < baseline:
            for name in ("head.W2", "head.b2"):
                all_params[name].data = np.zeros_like(all_params[name].data)
            trace["classifier_deferred"] = True

    model = PipelineModel({**all_params}, recall_enc, rerank_enc, k,
                          desc_mode=desc_mode)
    return model, trace


def predict_batch(instances, index, catalog, model, vocab, counter=None,
                  chunk=64):
    """Full two-stage prediction for a list of instances.

    Per instance: one tower forward, then (if reranking) one pair forward per
    recalled candidate.  Ties break by rerank probability, then recall score,
    then ascending relation id.
    """
    desc_by_rel = {d.relation: d for d in catalog}
    k = model.k
    vecs = []
    for lo in range(0, len(instances), chunk):
        part = instances[lo:lo + chunk]
        seqs = [tp.encode_instance(i, vocab, model.recall_config.max_len)
                for i in part]
        v = rc.encode_instance_batch(seqs, model.params, model.recall_config,
                                     counter=counter)
        vecs.append(v.data)
    vecs = np.concatenate(vecs, axis=0)

    recalled = [rc.topk_from_vector(vecs[i], index, k)
                for i in range(len(instances))]
    if not model.use_rerank:
        return [r[0][0] for r in recalled], recalled

    preds = []
    rows_per_chunk = max(1, chunk // k)
    for lo in range(0, len(instances), rows_per_chunk):
        part = list(range(lo, min(lo + rows_per_chunk, len(instances))))
        pair_seqs = []
        for i in part:
            for rid, _ in recalled[i]:
                pair_seqs.append(tp.encode_pair(instances[i], desc_by_rel[rid],
                                                vocab, model.rerank_config.max_len))
        logits = rerank_forward(pair_seqs, model.params, model.rerank_config, k,
                                counter=counter)
        probs = rerank_probs(logits)
        for row, i in enumerate(part):
            order = sorted(range(k),
                           key=lambda j: (-probs[row, j], -recalled[i][j][1],
                                          recalled[i][j][0]))
            preds.append(recalled[i][order[0]][0])
    return preds, recalled
