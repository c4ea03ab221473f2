"""Evaluation protocol: zero-shot splits, macro metrics, multi-seed suites,
ablations, the k sweep, and the encoding-count efficiency benchmark.

Relations are partitioned into disjoint train / validation / test sets; test
metrics are computed only over the unseen test relations, whose descriptions
are the only rows in the test-time index.
"""

from dataclasses import dataclass, field

import numpy as np

from . import recall as rc
from . import rerank as rr
from . import textpipe as tp
from .encoder import EncodingCounter

MODES = ("emma", "separate", "only_recall", "wo_virt", "wo_both")


@dataclass
class ZeroShotSplit:
    seed: int
    m: int
    train_relations: list
    val_relations: list
    test_relations: list


def make_split(relation_ids, m, seed):
    """Deterministic disjoint train / val / test relation sets."""
    ids = sorted(relation_ids)
    if len(ids) < 2 * m + 2:
        raise ValueError(f"need at least {2 * m + 2} relations for m={m}, "
                         f"got {len(ids)}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ids))
    val = sorted(ids[i] for i in perm[:m])
    test = sorted(ids[i] for i in perm[m:2 * m])
    train = sorted(ids[i] for i in perm[2 * m:])
    return ZeroShotSplit(seed, m, train, val, test)


@dataclass
class MetricsReport:
    per_relation: dict            # rid -> (precision, recall, f1)
    macro_precision: float
    macro_recall: float
    macro_f1: float
    seed: int = 0
    config: str = ""
    extra: dict = field(default_factory=dict)


def evaluate(predictions, golds, unseen_relations):
    """Macro precision/recall/F1 over the unseen-relation set.

    A prediction outside the unseen set cannot come from a correctly built
    test index, so it is a harness bug and a hard error.
    """
    unseen = set(unseen_relations)
    if len(predictions) != len(golds):
        raise ValueError("predictions and golds differ in length")
    for g in golds:
        if g not in unseen:
            raise ValueError(f"gold relation {g} is not in the unseen set")
    for p in predictions:
        if p not in unseen:
            raise ValueError(f"prediction {p} outside the unseen set: "
                             "the test index must contain only unseen relations")
    per = {}
    ps, rs, fs = [], [], []
    for rid in sorted(unseen):
        tp_ = sum(1 for p, g in zip(predictions, golds) if p == rid and g == rid)
        fp = sum(1 for p, g in zip(predictions, golds) if p == rid and g != rid)
        fn = sum(1 for p, g in zip(predictions, golds) if p != rid and g == rid)
        prec = tp_ / (tp_ + fp) if tp_ + fp else 0.0
        rec = tp_ / (tp_ + fn) if tp_ + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        per[rid] = (prec, rec, f1)
        ps.append(prec)
        rs.append(rec)
        fs.append(f1)
    return MetricsReport(per, float(np.mean(ps)), float(np.mean(rs)),
                         float(np.mean(fs)))


def hits_at(recalled, golds, j):
    """Fraction of instances whose gold appears in the top-j recalled ids."""
    hit = sum(1 for cand, g in zip(recalled, golds)
              if g in [rid for rid, _ in cand[:j]])
    return hit / len(golds) if golds else 0.0


# ---------------------------------------------------------------------------
# single runs and suites
# ---------------------------------------------------------------------------

@dataclass
class RunSpec:
    """Everything one training/evaluation run needs besides the corpus."""
    recall_enc: object
    rerank_enc: object
    contrastive: object
    rerank: object

    def copy_with_k(self, k):
        import copy
        spec = copy.deepcopy(self)
        spec.rerank.k = k
        return spec

    def with_vocab(self, vocab_size):
        import copy
        spec = copy.deepcopy(self)
        spec.recall_enc.vocab_size = vocab_size
        spec.rerank_enc.vocab_size = vocab_size
        return spec


def _mode_settings(mode):
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    desc_mode = {"wo_virt": "annotated", "wo_both": "mean"}.get(mode, "virtual")
    use_rerank = mode in ("emma", "separate", "wo_virt")
    joint = mode != "separate"
    return desc_mode, use_rerank, joint


def run_one(instances, catalog, mode, m, seed, spec, counter=None):
    """Split, train under `mode`, and evaluate on the unseen relations."""
    desc_mode, use_rerank, joint = _mode_settings(mode)
    split = make_split([d.relation for d in catalog], m, seed)
    vocab = tp.Vocabulary.from_corpus(instances, catalog)
    spec = spec.with_vocab(len(vocab))
    train_insts = [i for i in instances if i.relation in set(split.train_relations)]
    val_insts = [i for i in instances if i.relation in set(split.val_relations)]
    test_insts = [i for i in instances if i.relation in set(split.test_relations)]
    train_cat = [d for d in catalog if d.relation in set(split.train_relations)]
    val_cat = [d for d in catalog if d.relation in set(split.val_relations)]
    test_cat = [d for d in catalog if d.relation in set(split.test_relations)]

    # epoch selection by recall hits on the validation relations; the test
    # relations stay untouched until the final evaluation.  The primary score
    # retrieves against the validation *and* training descriptions together:
    # memorized training relations act as distractors, so snapshots that match
    # by composition rather than memorization win the comparison.
    val_eval = None
    if val_insts and len(val_cat) >= 2:
        val_seqs = [tp.encode_instance(i, vocab, spec.recall_enc.max_len)
                    for i in val_insts]
        val_golds = [i.relation for i in val_insts]
        hard_cat = val_cat + train_cat

        def val_eval(params):
            vecs = rc.encode_instance_batch(val_seqs, params, spec.recall_enc)
            hard_idx = rc.build_index(hard_cat, vocab, params, spec.recall_enc,
                                      desc_mode=desc_mode)
            hard = [rc.topk_from_vector(v, hard_idx, 1) for v in vecs.data]
            idx = rc.build_index(val_cat, vocab, params, spec.recall_enc,
                                 desc_mode=desc_mode)
            rec = [rc.topk_from_vector(v, idx, 1) for v in vecs.data]
            return (hits_at(hard, val_golds, 1), hits_at(rec, val_golds, 1))

    if use_rerank:
        model, trace = rr.train_pipeline(
            train_insts, train_cat, vocab, spec.recall_enc, spec.rerank_enc,
            spec.contrastive, spec.rerank, seed, desc_mode=desc_mode,
            joint=joint, counter=counter, val_eval=val_eval)
    else:
        params, rtrace = rc.train_recall(
            train_insts, train_cat, vocab, spec.recall_enc, spec.contrastive,
            seed, desc_mode=desc_mode, counter=counter, val_eval=val_eval)
        model = rr.PipelineModel(params, spec.recall_enc, spec.rerank_enc,
                                 spec.rerank.k, desc_mode=desc_mode,
                                 use_rerank=False)
        model.use_rerank = False
        trace = {"recall": rtrace, "rerank": []}
    model.use_rerank = use_rerank

    index = rc.build_index(test_cat, vocab, model.params, spec.recall_enc,
                           desc_mode=desc_mode, counter=counter)
    preds, recalled = rr.predict_batch(test_insts, index, test_cat, model,
                                       vocab, counter=counter)
    golds = [i.relation for i in test_insts]
    report = evaluate(preds, golds, split.test_relations)
    report.seed = seed
    report.config = mode
    report.extra["hits@1"] = hits_at(recalled, golds, 1)
    report.extra["hits@2"] = hits_at(recalled, golds, min(2, model.k))
    report.extra["loss_trace"] = trace

    # validation hits@k, recorded for model selection only; never used on test
    if val_insts and len(val_cat) >= model.k:
        val_index = rc.build_index(val_cat, vocab, model.params,
                                   spec.recall_enc, desc_mode=desc_mode)
        vm = rr.PipelineModel(model.params, spec.recall_enc, spec.rerank_enc,
                              model.k, desc_mode=desc_mode, use_rerank=False)
        _, vrec = rr.predict_batch(val_insts, val_index, val_cat, vm, vocab)
        vgold = [i.relation for i in val_insts]
        report.extra["val_hits@k"] = hits_at(vrec, vgold, model.k)
    return report, model, split


def run_suite(instances, catalog, m, seeds, spec, modes=("emma",)):
    """One row per (seed, mode) plus a mean row per mode."""
    rows = []
    for mode in modes:
        per_mode = []
        for seed in seeds:
            report, _, _ = run_one(instances, catalog, mode, m, seed, spec)
            rows.append(_row(report, m, spec.rerank.k))
            per_mode.append(report)
        rows.append({
            "seed": "mean", "config": mode, "m": m, "k": spec.rerank.k,
            "precision": float(np.mean([r.macro_precision for r in per_mode])),
            "recall": float(np.mean([r.macro_recall for r in per_mode])),
            "f1": float(np.mean([r.macro_f1 for r in per_mode])),
            "hits@1": float(np.mean([r.extra["hits@1"] for r in per_mode])),
            "hits@2": float(np.mean([r.extra["hits@2"] for r in per_mode])),
        })
    return rows


def _row(report, m, k):
    return {"seed": report.seed, "config": report.config, "m": m, "k": k,
            "precision": report.macro_precision, "recall": report.macro_recall,
            "f1": report.macro_f1, "hits@1": report.extra["hits@1"],
            "hits@2": report.extra["hits@2"]}


def k_sweep(instances, catalog, m, seeds, spec, k_values=(2, 3, 4)):
    """Suite per k; the F1-vs-k trend is reported, not asserted."""
    table = []
    for k in k_values:
        rows = run_suite(instances, catalog, m, seeds, spec.copy_with_k(k))
        mean = [r for r in rows if r["seed"] == "mean"][0]
        table.append({"k": k, "f1": mean["f1"], "precision": mean["precision"],
                      "recall": mean["recall"]})
    f1s = [t["f1"] for t in table]
    trend = ("decreasing" if all(b <= a for a, b in zip(f1s, f1s[1:]))
             else "not monotone")
    return table, trend


# ---------------------------------------------------------------------------
# efficiency accounting
# ---------------------------------------------------------------------------

def symbolic_counts(n):
    """Closed-form encoding counts at full benchmark scale (700 instances
    per relation): separate-tower matching, this pipeline, and a
    pair-everything baseline."""
    return {"n": n,
            "separate_towers": 700 * n + n,
            "two_stage": 700 * n + 700 + n,
            "pairwise_baseline": 700 * n * n}


def efficiency_bench(instances, catalog, model, vocab, counter=None):
    """Run inference and check measured forward counts against the contract:
    description tower = n, instance tower = m, pair encoder = m*k."""
    import time
    counter = counter or EncodingCounter()
    counter.reset()
    n, m, k = len(catalog), len(instances), model.k
    t0 = time.perf_counter()
    index = rc.build_index(catalog, vocab, model.params, model.recall_config,
                           desc_mode=model.desc_mode, counter=counter)
    t1 = time.perf_counter()
    rr.predict_batch(instances, index, catalog, model, vocab, counter=counter)
    t2 = time.perf_counter()

    expected = {"description": n, "instance": m,
                "pair": m * k if model.use_rerank else 0}
    if counter.counts != expected:
        raise AssertionError(f"encoding counts {counter.counts} "
                             f"!= expected {expected}")
    return {"n": n, "m": m, "k": k,
            "counts": dict(counter.counts),
            "pairwise_baseline_count": m * n,
            "index_seconds": t1 - t0, "query_seconds": t2 - t1,
            "projection": [symbolic_counts(x) for x in (5, 10, 15)]}


# ---------------------------------------------------------------------------
# report output
# ---------------------------------------------------------------------------

def format_table(rows):
    cols = ["seed", "config", "m", "k", "precision", "recall", "f1",
            "hits@1", "hits@2"]
    lines = ["  ".join(f"{c:>10}" for c in cols)]
    for r in rows:
        cells = []
        for c in cols:
            v = r.get(c, "")
            cells.append(f"{v:>10.4f}" if isinstance(v, float) else f"{str(v):>10}")
        lines.append("  ".join(cells))
    return "\n".join(lines)


def write_tsv(path, rows):
    cols = ["seed", "config", "m", "k", "precision", "recall", "f1",
            "hits@1", "hits@2"]
    with open(path, "w") as f:
        f.write("\t".join(cols) + "\n")
        for r in rows:
            f.write("\t".join(str(r.get(c, "")) for c in cols) + "\n")
