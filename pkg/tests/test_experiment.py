"""Experiment-harness tests: splits, macro metrics, encoding accounting."""

import numpy as np
import pytest

from relmatch import experiment as ex


class TestMakeSplit:
    def test_sizes(self):
        split = ex.make_split(range(25), 5, seed=0)
        assert len(split.train_relations) == 15
        assert len(split.val_relations) == 5
        assert len(split.test_relations) == 5

    def test_disjoint(self):
        for seed in range(5):
            s = ex.make_split(range(25), 5, seed)
            a, b, c = map(set, (s.train_relations, s.val_relations,
                                s.test_relations))
            assert not (a & b) and not (a & c) and not (b & c)

    def test_deterministic(self):
        s1 = ex.make_split(range(30), 7, seed=3)
        s2 = ex.make_split(range(30), 7, seed=3)
        assert s1 == s2

    def test_seeds_vary(self):
        tests = {tuple(ex.make_split(range(25), 5, seed).test_relations)
                 for seed in range(5)}
        assert len(tests) > 1

    def test_too_few_relations(self):
        with pytest.raises(ValueError):
            ex.make_split(range(11), 5, seed=0)


class TestEvaluate:
    def test_all_correct(self):
        rep = ex.evaluate([1, 2, 3], [1, 2, 3], [1, 2, 3])
        assert rep.macro_precision == rep.macro_recall == rep.macro_f1 == 1.0

    def test_fixed_class_predictor_two_balanced_classes(self):
        # predicting class 1 always: P=(0.5, 0), R=(1, 0), F1=(2/3, 0)
        preds = [1] * 10
        golds = [1] * 5 + [2] * 5
        rep = ex.evaluate(preds, golds, [1, 2])
        assert rep.macro_f1 == pytest.approx((2 / 3) / 2)

    def test_matches_hand_computation(self):
        rng = np.random.default_rng(0)
        rels = [0, 1, 2]
        golds = [int(rng.integers(3)) for _ in range(30)]
        preds = [int(rng.integers(3)) for _ in range(30)]
        rep = ex.evaluate(preds, golds, rels)
        for rid in rels:
            tp_ = sum(p == g == rid for p, g in zip(preds, golds))
            fp = sum(p == rid and g != rid for p, g in zip(preds, golds))
            fn = sum(p != rid and g == rid for p, g in zip(preds, golds))
            prec = tp_ / (tp_ + fp) if tp_ + fp else 0.0
            rec = tp_ / (tp_ + fn) if tp_ + fn else 0.0
            f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
            assert rep.per_relation[rid] == pytest.approx((prec, rec, f1))
        assert rep.macro_f1 == pytest.approx(
            np.mean([rep.per_relation[r][2] for r in rels]))

    def test_macro_is_unweighted_mean(self):
        rng = np.random.default_rng(1)
        golds = [int(rng.integers(4)) for _ in range(40)]
        preds = [int(rng.integers(4)) for _ in range(40)]
        rep = ex.evaluate(preds, golds, [0, 1, 2, 3])
        vals = list(rep.per_relation.values())
        assert rep.macro_precision == pytest.approx(np.mean([v[0] for v in vals]))
        assert rep.macro_recall == pytest.approx(np.mean([v[1] for v in vals]))

    def test_prediction_outside_unseen_is_hard_error(self):
        with pytest.raises(ValueError, match="outside the unseen set"):
            ex.evaluate([9], [1], [1, 2])

    def test_gold_outside_unseen_is_error(self):
        with pytest.raises(ValueError):
            ex.evaluate([1], [9], [1, 2])


class TestHitsAt:
    def test_basic(self):
        recalled = [[(1, 0.9), (2, 0.5)], [(3, 0.9), (4, 0.5)]]
        assert ex.hits_at(recalled, [1, 4], 1) == 0.5
        assert ex.hits_at(recalled, [1, 4], 2) == 1.0


class TestSymbolicCounts:
    @pytest.mark.parametrize("n", [5, 10, 15])
    def test_formulas(self, n):
        row = ex.symbolic_counts(n)
        assert row["separate_towers"] == 700 * n + n
        assert row["two_stage"] == 700 * n + 700 + n
        assert row["pairwise_baseline"] == 700 * n * n


class TestReportOutput:
    def test_table_and_tsv(self, tmp_path):
        rows = [{"seed": 0, "config": "emma", "m": 5, "k": 2,
                 "precision": 0.5, "recall": 0.25, "f1": 1 / 3,
                 "hits@1": 0.5, "hits@2": 0.75}]
        text = ex.format_table(rows)
        assert "emma" in text and "0.3333" in text
        path = tmp_path / "report.tsv"
        ex.write_tsv(path, rows)
        lines = path.read_text().strip().split("\n")
        assert lines[0].startswith("seed\tconfig")
        assert len(lines) == 2
