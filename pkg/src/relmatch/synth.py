"""Synthetic corpus generator: a desk-scale stand-in for a large relation
extraction benchmark.

Every relation is identified by a (head type, tail type) pair of entity
types plus a *topic*.  Head and tail types come from disjoint pools, the
way subject and object hypernyms tend to differ in practice; a small group
of relations shares each type pair and differs only in topic, so entity
types alone narrow a relation down without pinning it.  A description
names its two type tokens (annotated as hypernym spans), then its topic
token, then a template shared by all relations; an instance carries a
typed entity mention on each side (mention token plus its type token, the
way a hypernym annotation would read) around filler context that includes
the topic token.  Crucially the topic sits *outside* the annotated spans:
a model that summarizes descriptions only through the annotation misses
it, while one that learns where to look can use it.  No token is unique
to one relation, so nothing can be solved by memorizing relation
identities: matching types and topic between instance and description is
the only signal, and it is exactly the signal that carries over to
relations never seen in training.

The `noise` rate hides an instance's explicit type token (replacing it
with a filler); the typed mention still identifies the type, so noise
makes instances harder without making labels ambiguous.

Generation verifies separability with a bag-of-words nearest-centroid
oracle; the corpus is only emitted if the oracle clears its floor.
"""

from dataclasses import dataclass

import numpy as np

from .textpipe import Instance, RelationDescription


@dataclass
class SyntheticCorpusSpec:
    relations: int = 20
    per_relation: int = 50
    vocab_size: int = 60          # filler-token pool
    context_len: int = 4          # filler context tokens per instance
    template_len: int = 4         # shared template tokens per description
    noise: float = 0.1            # chance an instance type token is hidden
    seed: int = 0
    entity_types: int = 9         # split into head and tail pools
    mentions_per_type: int = 6
    topics: int = 4               # relations per type pair (roughly)
    oracle_floor: float = 0.95

    def validate(self):
        if not (0.0 <= self.noise < 1.0):
            raise ValueError("noise rate must be in [0, 1)")
        if self.relations < 2 or self.per_relation < 1:
            raise ValueError("need at least 2 relations with instances")
        if self.topics < 1:
            raise ValueError("need at least one topic")
        if self.context_len < 1:
            raise ValueError("instances need room for the topic token")
        return self


def _n_pairs(spec):
    return -(-spec.relations // spec.topics)     # ceil division


def type_pair(r, spec):
    """The (head type, tail type) of relation r; shared within its group."""
    n_head = max(1, spec.entity_types // 2)
    n_tail = max(1, spec.entity_types - n_head)
    p = r % _n_pairs(spec)
    return p % n_head, p % n_tail


def topic_of(r, spec):
    """The topic separating relation r from others with its type pair."""
    return r // _n_pairs(spec)


def generate(spec):
    """Returns (instances, catalog).  Deterministic per spec.seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    fillers = [f"w{i}" for i in range(spec.vocab_size)]
    template = [f"d{j}" for j in range(spec.template_len)]
    n_head = max(1, spec.entity_types // 2)
    n_tail = max(1, spec.entity_types - n_head)
    head_mentions = {t: [f"hent{t}_{i}" for i in range(spec.mentions_per_type)]
                     for t in range(n_head)}
    tail_mentions = {t: [f"tent{t}_{i}" for i in range(spec.mentions_per_type)]
                     for t in range(n_tail)}

    catalog = []
    for r in range(spec.relations):
        th, tt = type_pair(r, spec)
        tokens = [f"htype{th}", f"ttype{tt}", f"topic{topic_of(r, spec)}"] \
            + template
        catalog.append(RelationDescription(r, tokens, head_span=(0, 0),
                                           tail_span=(1, 1)))

    instances = []
    for r in range(spec.relations):
        th, tt = type_pair(r, spec)
        for _ in range(spec.per_relation):
            body = [fillers[int(i)]
                    for i in rng.integers(spec.vocab_size,
                                          size=spec.context_len)]
            body[int(rng.integers(spec.context_len))] = \
                f"topic{topic_of(r, spec)}"
            h_tok = f"htype{th}"
            if rng.random() < spec.noise:
                h_tok = fillers[int(rng.integers(spec.vocab_size))]
            t_tok = f"ttype{tt}"
            if rng.random() < spec.noise:
                t_tok = fillers[int(rng.integers(spec.vocab_size))]
            head = head_mentions[th][int(rng.integers(spec.mentions_per_type))]
            tail = tail_mentions[tt][int(rng.integers(spec.mentions_per_type))]
            tokens = [head, h_tok] + body + [t_tok, tail]
            inst = Instance(tokens, (0, 1),
                            (len(tokens) - 2, len(tokens) - 1), r)
            instances.append(inst.validate())

    acc = nearest_centroid_accuracy(instances)
    if acc < spec.oracle_floor:
        raise ValueError(f"corpus not separable enough: oracle accuracy "
                         f"{acc:.3f} < floor {spec.oracle_floor}")
    return instances, catalog


def nearest_centroid_accuracy(instances):
    """Bag-of-words nearest-centroid oracle over the instances themselves:
    an upper-bound sanity check on how separable the relations are."""
    vocab = sorted({t for i in instances for t in i.tokens})
    tid = {t: j for j, t in enumerate(vocab)}
    X = np.zeros((len(instances), len(vocab)))
    for i, inst in enumerate(instances):
        for t in inst.tokens:
            X[i, tid[t]] += 1
    rels = sorted({i.relation for i in instances})
    cent = np.stack([X[[i for i, x in enumerate(instances)
                        if x.relation == r]].mean(axis=0) for r in rels])
    cent /= np.linalg.norm(cent, axis=1, keepdims=True)
    Xn = X / np.linalg.norm(X, axis=1, keepdims=True)
    pred = np.argmax(Xn @ cent.T, axis=1)
    gold = np.array([rels.index(i.relation) for i in instances])
    return float((pred == gold).mean())
