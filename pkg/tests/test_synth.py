"""Synthetic corpus generator tests: shape, determinism, separability."""

import numpy as np
import pytest

from relmatch import synth


SMALL = dict(relations=6, per_relation=10, seed=0)


class TestGenerate:
    def test_counts(self):
        insts, cat = synth.generate(synth.SyntheticCorpusSpec(**SMALL))
        assert len(cat) == 6
        assert len(insts) == 60
        per = {r: sum(i.relation == r for i in insts) for r in range(6)}
        assert all(v == 10 for v in per.values())

    def test_deterministic_per_seed(self):
        a = synth.generate(synth.SyntheticCorpusSpec(**SMALL))
        b = synth.generate(synth.SyntheticCorpusSpec(**SMALL))
        assert [i.tokens for i in a[0]] == [i.tokens for i in b[0]]
        assert [d.tokens for d in a[1]] == [d.tokens for d in b[1]]

    def test_seeds_differ(self):
        a, _ = synth.generate(synth.SyntheticCorpusSpec(**SMALL))
        b, _ = synth.generate(synth.SyntheticCorpusSpec(**{**SMALL, "seed": 1}))
        assert [i.tokens for i in a] != [i.tokens for i in b]

    def test_instances_validate(self):
        spec = synth.SyntheticCorpusSpec(**{**SMALL, "noise": 0.0})
        insts, _ = synth.generate(spec)
        for inst in insts:
            inst.validate()
            assert inst.head == (0, 1)
            assert inst.tail == (len(inst.tokens) - 2, len(inst.tokens) - 1)
            th, tt = synth.type_pair(inst.relation, spec)
            assert inst.tokens[0].startswith(f"hent{th}_")
            assert inst.tokens[1] == f"htype{th}"
            assert inst.tokens[-2] == f"ttype{tt}"
            assert inst.tokens[-1].startswith(f"tent{tt}_")

    def test_noise_hides_type_tokens_only(self):
        spec = synth.SyntheticCorpusSpec(**{**SMALL, "noise": 0.5})
        insts, _ = synth.generate(spec)
        hidden = 0
        for inst in insts:
            th, tt = synth.type_pair(inst.relation, spec)
            # mentions are never noised; type slots may hold a filler
            assert inst.tokens[0].startswith(f"hent{th}_")
            assert inst.tokens[-1].startswith(f"tent{tt}_")
            hidden += inst.tokens[1] != f"htype{th}"
            hidden += inst.tokens[-2] != f"ttype{tt}"
        assert 0 < hidden < 2 * len(insts)

    def test_descriptions_annotated(self):
        spec = synth.SyntheticCorpusSpec(**SMALL)
        _, cat = synth.generate(spec)
        template = cat[0].tokens[3:]
        assert len(template) == spec.template_len
        for d in cat:
            th, tt = synth.type_pair(d.relation, spec)
            assert d.head_span == (0, 0)
            assert d.tail_span == (1, 1)
            assert d.tokens[0] == f"htype{th}"
            assert d.tokens[1] == f"ttype{tt}"
            # the topic sits outside the annotated spans
            assert d.tokens[2] == f"topic{synth.topic_of(d.relation, spec)}"
            # the template is shared: descriptions differ in types and topic
            assert d.tokens[3:] == template

    def test_instance_body_carries_topic(self):
        spec = synth.SyntheticCorpusSpec(**SMALL)
        insts, _ = synth.generate(spec)
        for inst in insts:
            topic = f"topic{synth.topic_of(inst.relation, spec)}"
            assert topic in inst.tokens[2:-2]

    def test_relation_identities_distinct(self):
        spec = synth.SyntheticCorpusSpec()
        _, cat = synth.generate(spec)
        ids = [(synth.type_pair(d.relation, spec),
                synth.topic_of(d.relation, spec)) for d in cat]
        assert len(set(ids)) == len(ids)

    def test_type_pairs_shared_within_groups(self):
        # several relations share a type pair; topic is what tells them apart
        spec = synth.SyntheticCorpusSpec()
        pairs = [synth.type_pair(r, spec) for r in range(spec.relations)]
        assert len(set(pairs)) < spec.relations

    def test_oracle_floor_enforced(self):
        # a single entity type collapses every relation onto the same pair
        spec = synth.SyntheticCorpusSpec(**{**SMALL, "entity_types": 1})
        with pytest.raises(ValueError, match="separable"):
            synth.generate(spec)

    def test_invalid_noise(self):
        with pytest.raises(ValueError):
            synth.SyntheticCorpusSpec(noise=1.0).validate()


class TestOracle:
    def test_default_benchmark_clears_floor(self):
        insts, _ = synth.generate(synth.SyntheticCorpusSpec())
        assert synth.nearest_centroid_accuracy(insts) >= 0.95

    def test_noise_free_corpus_scores_one(self):
        insts, _ = synth.generate(synth.SyntheticCorpusSpec(**{**SMALL,
                                                               "noise": 0.0}))
        acc = synth.nearest_centroid_accuracy(insts)
        assert acc > 0.99

    def test_matches_scalar_reimplementation(self):
        insts, _ = synth.generate(synth.SyntheticCorpusSpec(**SMALL))
        vocab = sorted({t for i in insts for t in i.tokens})
        rels = sorted({i.relation for i in insts})

        def bow(tokens):
            v = np.zeros(len(vocab))
            for t in tokens:
                v[vocab.index(t)] += 1
            return v

        cents = {}
        for r in rels:
            rows = [bow(i.tokens) for i in insts if i.relation == r]
            c = np.mean(rows, axis=0)
            cents[r] = c / np.linalg.norm(c)
        hits = 0
        for inst in insts:
            v = bow(inst.tokens)
            v = v / np.linalg.norm(v)
            best = max(rels, key=lambda r: (v @ cents[r], -r))
            hits += best == inst.relation
        assert synth.nearest_centroid_accuracy(insts) == pytest.approx(
            hits / len(insts))
