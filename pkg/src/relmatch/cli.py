"""Command-line surface for the matching pipeline.

Subcommands map 1:1 onto library operations: gen-data, train, build-index,
predict, eval, bench, sweep-k.  All outputs go to user-specified paths; every
command is deterministic under a fixed seed and config.
"""

import argparse
import os
import sys

from . import experiment as ex
from . import params as P
from . import recall as rc
from . import rerank as rr
from . import synth
from . import textpipe as tp
from .config import RunConfig, desk_profile
from .encoder import EncodingCounter


def _load_config(args):
    cfg = RunConfig.load(args.config) if args.config else desk_profile()
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    return cfg.validate()


def _load_data(data_dir):
    instances = tp.load_instances(os.path.join(data_dir, "instances.jsonl"))
    catalog = tp.load_catalog(os.path.join(data_dir, "catalog.jsonl"))
    described = {d.relation for d in catalog}
    for inst in instances:
        if inst.relation not in described:
            raise ValueError(f"relation {inst.relation} has no description")
    vocab_path = os.path.join(data_dir, "vocab.txt")
    if os.path.exists(vocab_path):
        vocab = tp.Vocabulary.load(vocab_path)
    else:
        vocab = tp.Vocabulary.from_corpus(instances, catalog)
    return instances, catalog, vocab


def _load_model(model_dir):
    cfg = RunConfig.load(os.path.join(model_dir, "config.cfg"))
    vocab = tp.Vocabulary.load(os.path.join(model_dir, "vocab.txt"))
    params = P.load_params(os.path.join(model_dir, "model.ckpt"))
    spec = cfg.to_spec(len(vocab))
    desc_mode, use_rerank, _ = ex._mode_settings(cfg.mode)
    model = rr.PipelineModel(params, spec.recall_enc, spec.rerank_enc, cfg.k,
                             desc_mode=desc_mode, use_rerank=use_rerank)
    return model, cfg, vocab, spec


def cmd_gen_data(args):
    spec = synth.SyntheticCorpusSpec(
        relations=args.relations, per_relation=args.per_relation,
        noise=args.noise, seed=args.seed if args.seed is not None else 0)
    instances, catalog = synth.generate(spec)
    os.makedirs(args.out, exist_ok=True)
    tp.save_instances(os.path.join(args.out, "instances.jsonl"), instances)
    tp.save_catalog(os.path.join(args.out, "catalog.jsonl"), catalog)
    tp.Vocabulary.from_corpus(instances, catalog).save(
        os.path.join(args.out, "vocab.txt"))
    acc = synth.nearest_centroid_accuracy(instances)
    print(f"wrote {len(instances)} instances over {len(catalog)} relations "
          f"to {args.out} (oracle accuracy {acc:.3f})")
    return 0


def cmd_train(args):
    cfg = _load_config(args)
    instances, catalog, vocab = _load_data(args.data)
    spec = cfg.to_spec(len(vocab))
    seed = cfg.seeds[0]
    desc_mode, use_rerank, joint = ex._mode_settings(cfg.mode)
    if use_rerank:
        model, trace = rr.train_pipeline(
            instances, catalog, vocab, spec.recall_enc, spec.rerank_enc,
            spec.contrastive, spec.rerank, seed, desc_mode=desc_mode,
            joint=joint)
        params = model.params
    else:
        params, rtrace = rc.train_recall(instances, catalog, vocab,
                                         spec.recall_enc, spec.contrastive,
                                         seed, desc_mode=desc_mode)
        trace = {"recall": rtrace}
    os.makedirs(args.out, exist_ok=True)
    P.save_params(os.path.join(args.out, "model.ckpt"), params)
    cfg.save(os.path.join(args.out, "config.cfg"))
    vocab.save(os.path.join(args.out, "vocab.txt"))
    for stage, tr in trace.items():
        if tr:
            print(f"{stage} loss: first epoch {tr[0]:.4f}, last epoch {tr[-1]:.4f}")
    print(f"saved model to {args.out}")
    return 0


def cmd_build_index(args):
    model, cfg, vocab, spec = _load_model(args.model)
    _, catalog, _ = _load_data(args.data)
    index = rc.build_index(catalog, vocab, model.params, spec.recall_enc,
                           desc_mode=model.desc_mode)
    index.save(args.out)
    print(f"indexed {index.size} relations -> {args.out}")
    return 0


def cmd_predict(args):
    model, cfg, vocab, spec = _load_model(args.model)
    instances = tp.load_instances(args.input)
    index = rc.DescriptionIndex.load(args.index)
    if index.fingerprint != P.fingerprint(model.params):
        raise ValueError("index was built from different model parameters")
    _, catalog, _ = _load_data(args.data)
    by_rel = {d.relation: d for d in catalog}
    cat = [by_rel[rid] for rid in index.relation_ids]
    preds, _ = rr.predict_batch(instances, index, cat, model, vocab)
    for p in preds:
        print(p)
    return 0


def cmd_eval(args):
    cfg = _load_config(args)
    instances, catalog, _ = _load_data(args.data)
    spec = cfg.to_spec(1)  # vocab size is resolved inside the suite
    modes = args.modes.split(",") if args.modes else [cfg.mode]
    rows = ex.run_suite(instances, catalog, cfg.m, cfg.seeds, spec, modes=modes)
    print(ex.format_table(rows))
    if args.out:
        ex.write_tsv(args.out, rows)
        print(f"wrote {args.out}")
    return 0


def cmd_bench(args):
    model, cfg, vocab, spec = _load_model(args.model)
    instances, catalog, _ = _load_data(args.data)
    report = ex.efficiency_bench(instances, catalog, model, vocab,
                                 EncodingCounter())
    c = report["counts"]
    print(f"n={report['n']} relations, m={report['m']} instances, k={report['k']}")
    print(f"measured forwards: description={c['description']} "
          f"instance={c['instance']} pair={c['pair']}")
    print(f"pair-everything baseline would encode {report['pairwise_baseline_count']} pairs")
    print(f"index build {report['index_seconds']:.3f}s, "
          f"queries {report['query_seconds']:.3f}s")
    print("projection at 700 instances/relation:")
    for row in report["projection"]:
        print(f"  n={row['n']:>3}  separate_towers={row['separate_towers']}  "
              f"two_stage={row['two_stage']}  pairwise={row['pairwise_baseline']}")
    return 0


def cmd_sweep_k(args):
    cfg = _load_config(args)
    instances, catalog, _ = _load_data(args.data)
    spec = cfg.to_spec(1)
    ks = [int(x) for x in args.k_values.split(",")]
    table, trend = ex.k_sweep(instances, catalog, cfg.m, cfg.seeds, spec,
                              k_values=ks)
    print(f"{'k':>3}  {'precision':>10}  {'recall':>10}  {'f1':>10}")
    for row in table:
        print(f"{row['k']:>3}  {row['precision']:>10.4f}  "
              f"{row['recall']:>10.4f}  {row['f1']:>10.4f}")
    print(f"F1 trend over k: {trend}")
    if args.out:
        with open(args.out, "w") as f:
            f.write("k\tprecision\trecall\tf1\n")
            for row in table:
                f.write(f"{row['k']}\t{row['precision']}\t{row['recall']}\t{row['f1']}\n")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="relmatch",
                                description="two-stage zero-shot relation matching")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="run configuration file")
        sp.add_argument("--seed", type=int, help="override the config seed list")

    g = sub.add_parser("gen-data", help="generate a synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--relations", type=int, default=20)
    g.add_argument("--per-relation", type=int, default=50)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train on a corpus")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    b = sub.add_parser("build-index", help="precompute description vectors")
    b.add_argument("--model", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_build_index)

    pr = sub.add_parser("predict", help="predict relation ids, one per line")
    pr.add_argument("--model", required=True)
    pr.add_argument("--index", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--input", required=True)
    pr.set_defaults(fn=cmd_predict)

    e = sub.add_parser("eval", help="multi-seed zero-shot evaluation suite")
    common(e)
    e.add_argument("--data", required=True)
    e.add_argument("--modes", help="comma-separated mode list")
    e.add_argument("--out", help="TSV output path")
    e.set_defaults(fn=cmd_eval)

    be = sub.add_parser("bench", help="encoding-count efficiency benchmark")
    be.add_argument("--model", required=True)
    be.add_argument("--data", required=True)
    be.set_defaults(fn=cmd_bench)

    s = sub.add_parser("sweep-k", help="evaluate across candidate-set sizes")
    common(s)
    s.add_argument("--data", required=True)
    s.add_argument("--k-values", default="2,3,4")
    s.add_argument("--out", help="TSV output path")
    s.set_defaults(fn=cmd_sweep_k)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except (ValueError, OSError, AssertionError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
