"""Tokenized inputs: vocabulary, entity-marker insertion, padding, batching.

Sequences feed two kinds of consumers: single-segment encodings for the two
retrieval towers, and joint instance+description encodings for the
cross-encoder.  Everything here is a pure function of (input, vocab, L).
"""

import json
from dataclasses import dataclass, field

import numpy as np

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
E_H, E_H_END, E_T, E_T_END = "[E_h]", "[\\E_h]", "[E_t]", "[\\E_t]"
RESERVED = (PAD, UNK, CLS, SEP, E_H, E_H_END, E_T, E_T_END)


class EncodingError(ValueError):
    pass


class Vocabulary:
    """Token -> id map with eight reserved control tokens at fixed low ids."""

    def __init__(self, tokens=()):
        self.token_to_id = {}
        for t in RESERVED:
            self.token_to_id[t] = len(self.token_to_id)
        for t in tokens:
            if t not in self.token_to_id:
                self.token_to_id[t] = len(self.token_to_id)
        self.id_to_token = [None] * len(self.token_to_id)
        for t, i in self.token_to_id.items():
            self.id_to_token[i] = t

    def __len__(self):
        return len(self.token_to_id)

    def __getitem__(self, token):
        return self.token_to_id.get(token, self.token_to_id[UNK])

    @classmethod
    def from_corpus(cls, instances, catalog):
        seen = {}
        for inst in instances:
            for t in inst.tokens:
                seen.setdefault(t, None)
        for desc in catalog:
            for t in desc.tokens:
                seen.setdefault(t, None)
        return cls(sorted(seen))

    def save(self, path):
        with open(path, "w") as f:
            for t in self.id_to_token:
                f.write(t + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            toks = [line.rstrip("\n") for line in f]
        if tuple(toks[:len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary file is missing the reserved tokens")
        return cls(toks[len(RESERVED):])


@dataclass
class Instance:
    tokens: list
    head: tuple          # inclusive token-index span (start, end)
    tail: tuple
    relation: int

    def validate(self):
        n = len(self.tokens)
        for name, (s, e) in (("head", self.head), ("tail", self.tail)):
            if not (0 <= s <= e < n):
                raise ValueError(f"{name} span {(s, e)} out of bounds for {n} tokens")
        hs, he = self.head
        ts, te = self.tail
        if max(hs, ts) <= min(he, te):
            raise ValueError(f"head span {self.head} overlaps tail span {self.tail}")
        return self


@dataclass
class RelationDescription:
    relation: int
    tokens: list
    # hypernym spans inside the description, used only by the ablation that
    # replaces learned virtual-entity pooling with annotated spans
    head_span: tuple = None
    tail_span: tuple = None


@dataclass
class EncodedSequence:
    ids: np.ndarray          # [L] int64, padded
    mask: np.ndarray         # [L] 1 on real tokens
    e_h_pos: int = -1        # position of [E_h] (instance sequences)
    e_t_pos: int = -1
    sep_pos: int = -1        # first [SEP] (pair sequences)
    token_positions: dict = field(default_factory=dict)  # original token index -> position


def _marked_tokens(inst):
    """Insert entity markers around the head and tail spans.

    Returns (tokens, protected) where protected[i] is True for markers and
    entity tokens, which truncation must never drop.
    """
    (hs, he), (ts, te) = inst.head, inst.tail
    inserts = sorted([(hs, E_H), (he + 1, E_H_END), (ts, E_T), (te + 1, E_T_END)],
                     key=lambda p: (p[0], p[1] in (E_H, E_T)))
    out, protected, src = [], [], []
    k = 0
    for i, tok in enumerate(list(inst.tokens) + [None]):
        while k < len(inserts) and inserts[k][0] == i:
            out.append(inserts[k][1])
            protected.append(True)
            src.append(-1)
            k += 1
        if tok is not None:
            out.append(tok)
            protected.append(hs <= i <= he or ts <= i <= te)
            src.append(i)
    return out, protected, src


def _fit(tokens, protected, budget):
    """Drop unprotected tokens from the end until the list fits the budget."""
    if len(tokens) <= budget:
        return tokens, protected, list(range(len(tokens)))
    keep = [True] * len(tokens)
    excess = len(tokens) - budget
    for i in range(len(tokens) - 1, -1, -1):
        if excess == 0:
            break
        if not protected[i]:
            keep[i] = False
            excess -= 1
    if excess > 0:
        raise EncodingError("entity spans and markers do not fit the sequence length")
    idx = [i for i in range(len(tokens)) if keep[i]]
    return [tokens[i] for i in idx], [protected[i] for i in idx], idx


def _pad(ids, L, vocab):
    mask = np.zeros(L, dtype=np.int64)
    mask[:len(ids)] = 1
    out = np.full(L, vocab[PAD], dtype=np.int64)
    out[:len(ids)] = ids
    return out, mask


def encode_instance(inst, vocab, L):
    """[CLS] + marker-wrapped tokens, context truncated before entities."""
    if L < 8:
        raise EncodingError("sequence length must be at least 8")
    inst.validate()
    toks, protected, src = _marked_tokens(inst)
    toks, protected, kept = _fit(toks, protected, L - 1)
    seq = [CLS] + toks
    ids = [vocab[t] for t in seq]
    arr, mask = _pad(ids, L, vocab)
    positions = {}
    for pos, j in enumerate(kept):
        orig = src[j] if j < len(src) else -1
        if orig >= 0:
            positions[orig] = pos + 1
    return EncodedSequence(arr, mask,
                           e_h_pos=seq.index(E_H), e_t_pos=seq.index(E_T),
                           token_positions=positions)


def decode(seq, vocab):
    """Recover content tokens (markers, [CLS]/[SEP] and pads stripped)."""
    drop = {PAD, CLS, SEP, E_H, E_H_END, E_T, E_T_END}
    toks = [vocab.id_to_token[i] for i, m in zip(seq.ids, seq.mask) if m]
    return [t for t in toks if t not in drop]


def encode_description(desc, vocab, L):
    """[CLS] + description tokens, truncated to L-1 content tokens."""
    if L < 8:
        raise EncodingError("sequence length must be at least 8")
    toks = list(desc.tokens)[:L - 1]
    ids = [vocab[t] for t in [CLS] + toks]
    arr, mask = _pad(ids, L, vocab)
    return EncodedSequence(arr, mask,
                           token_positions={i: i + 1 for i in range(len(toks))})


def encode_pair(inst, desc, vocab, L):
    """[CLS] + marked instance + [SEP] + description + [SEP], padded to L.

    When over budget the description is truncated first, then instance
    context; entity markers are never dropped.
    """
    if L < 8:
        raise EncodingError("sequence length must be at least 8")
    inst.validate()
    itoks, protected, _ = _marked_tokens(inst)
    dtoks = list(desc.tokens)
    # 3 control tokens: [CLS] and two [SEP]
    over = len(itoks) + len(dtoks) + 3 - L
    if over > 0:
        cut = min(over, len(dtoks) - 1)
        dtoks = dtoks[:len(dtoks) - cut]
        over -= cut
    if over > 0:
        itoks, protected, _ = _fit(itoks, protected, len(itoks) - over)
    seq = [CLS] + itoks + [SEP] + dtoks + [SEP]
    arr, mask = _pad([vocab[t] for t in seq], L, vocab)
    return EncodedSequence(arr, mask,
                           e_h_pos=seq.index(E_H), e_t_pos=seq.index(E_T),
                           sep_pos=seq.index(SEP))


class BatchError(ValueError):
    pass


def sample_contrastive_batch(by_relation, n, rng):
    """Pick n (instance, relation) pairs with pairwise-distinct relations.

    `by_relation` maps relation id -> list of instances.  Distinct relation
    ids keep every off-diagonal description a true negative.
    """
    if n < 2:
        raise BatchError("contrastive batches need at least 2 pairs")
    rel_ids = sorted(by_relation)
    if len(rel_ids) < n:
        raise BatchError(f"need {n} distinct relations, corpus has {len(rel_ids)}")
    chosen = rng.choice(len(rel_ids), size=n, replace=False)
    batch = []
    for ci in chosen:
        rid = rel_ids[ci]
        insts = by_relation[rid]
        batch.append(insts[rng.integers(len(insts))])
    return batch


def group_by_relation(instances):
    by_rel = {}
    for inst in instances:
        by_rel.setdefault(inst.relation, []).append(inst)
    return by_rel


def stack(seqs):
    """Stack encoded sequences into (ids [B,L], mask [B,L]) arrays."""
    ids = np.stack([s.ids for s in seqs])
    mask = np.stack([s.mask for s in seqs])
    return ids, mask


# ---------------------------------------------------------------------------
# dataset files (line-delimited JSON)
# ---------------------------------------------------------------------------

def load_instances(path):
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                inst = Instance(rec["tokens"], tuple(rec["head"]),
                                tuple(rec["tail"]), int(rec["relation"]))
                inst.validate()
            except (KeyError, ValueError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: bad instance record: {e}") from e
            out.append(inst)
    return out


def save_instances(path, instances):
    with open(path, "w") as f:
        for inst in instances:
            f.write(json.dumps({"tokens": inst.tokens, "head": list(inst.head),
                                "tail": list(inst.tail), "relation": inst.relation}) + "\n")


def load_catalog(path):
    out, seen = [], set()
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                desc = RelationDescription(
                    int(rec["relation"]), rec["tokens"],
                    tuple(rec["head_span"]) if rec.get("head_span") else None,
                    tuple(rec["tail_span"]) if rec.get("tail_span") else None)
            except (KeyError, ValueError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: bad catalog record: {e}") from e
            if desc.relation in seen:
                raise ValueError(f"{path}:{lineno}: duplicate relation id {desc.relation}")
            seen.add(desc.relation)
            out.append(desc)
    return out


def save_catalog(path, catalog):
    with open(path, "w") as f:
        for d in catalog:
            rec = {"relation": d.relation, "tokens": d.tokens}
            if d.head_span is not None:
                rec["head_span"] = list(d.head_span)
            if d.tail_span is not None:
                rec["tail_span"] = list(d.tail_span)
            f.write(json.dumps(rec) + "\n")
