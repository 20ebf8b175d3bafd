from __future__ import annotations

import math

import numpy as np
import pytest

from hes_toolkit.analysis import (
    cross_scorer_agreement,
    entropy_distribution,
    high_entropy_token_frequency,
    nearest_rank_percentile,
    rank_auc,
    separation_report,
)
from hes_toolkit.errors import EmptyCorpus, IdSetMismatch, SingleClassInput

from conftest import record_from_entropies
from oracles import oracle_pairwise_auc
from test_selection import score_row


def labeled_scores(correct_vals, incorrect_vals):
    scores, labels = [], {}
    for i, v in enumerate(correct_vals):
        s = score_row(f"c{i}", float(v))
        scores.append(s)
        labels[s.sample_id] = True
    for i, v in enumerate(incorrect_vals):
        s = score_row(f"i{i}", float(v))
        scores.append(s)
        labels[s.sample_id] = False
    return scores, labels


class TestSeparationReport:
    def test_perfect_separation(self):
        scores, labels = labeled_scores([1, 2, 3], [4, 5, 6])
        report = separation_report(scores, labels)
        assert report.auc == 1.0
        assert report.mean_gap == pytest.approx(3.0)
        assert report.correct.count == 3 and report.incorrect.count == 3

    def test_identical_multisets_give_half(self):
        scores, labels = labeled_scores([1, 2, 5], [1, 2, 5])
        assert separation_report(scores, labels).auc == 0.5

    def test_interleaved_example(self):
        scores, labels = labeled_scores([1, 3], [2, 4])
        assert separation_report(scores, labels).auc == 0.75

    def test_single_class_rejected(self):
        scores, labels = labeled_scores([1, 2], [])
        with pytest.raises(SingleClassInput):
            separation_report(scores, labels)

    def test_rank_auc_matches_pairwise_oracle(self, rng):
        for _ in range(100):
            nc, ni = int(rng.integers(1, 30)), int(rng.integers(1, 30))
            c = np.round(rng.uniform(0, 5, nc), 1)  # coarse grid forces ties
            i = np.round(rng.uniform(0, 5, ni), 1)
            assert abs(rank_auc(c, i) - oracle_pairwise_auc(list(c), list(i))) < 1e-12

    def test_works_for_all_metrics(self, rng):
        scores, labels = labeled_scores(rng.uniform(0, 5, 10), rng.uniform(0, 5, 10))
        for metric in ("hes_rel", "hes_abs", "es", "avg_e", "avg_he"):
            r = separation_report(scores, labels, metric)
            assert 0.0 <= r.auc <= 1.0
            assert r.metric == metric


class TestEntropyDistribution:
    def test_constant_corpus(self):
        records = [record_from_entropies([0.7] * 10, sample_id=f"s{i}") for i in range(5)]
        report = entropy_distribution(records, percentiles=[1, 50, 99.5, 100])
        assert report.token_count == 50
        assert all(v == 0.7 for v in report.percentiles.values())
        assert report.min == report.max == 0.7
        assert report.mean == pytest.approx(0.7, rel=1e-12)
        assert sum(report.counts) == 50

    def test_exponential_percentile_near_analytic(self):
        gen = np.random.default_rng(42)
        records = [
            record_from_entropies(gen.exponential(1.0, size=1000), sample_id=f"s{i}")
            for i in range(100)
        ]
        report = entropy_distribution(records, percentiles=[99.5])
        assert report.token_count == 100_000
        assert report.percentiles[99.5] == pytest.approx(math.log(200), abs=0.1)

    def test_order_invariant(self, rng):
        records = [
            record_from_entropies(rng.uniform(0, 3, 50), sample_id=f"s{i}") for i in range(20)
        ]
        a = entropy_distribution(records, percentiles=[90.0], bins=17)
        b = entropy_distribution(list(reversed(records)), percentiles=[90.0], bins=17)
        assert a == b

    def test_empty_corpus_rejected(self):
        with pytest.raises(EmptyCorpus):
            entropy_distribution([])

    def test_nearest_rank_on_small_data(self):
        values = np.array([1.0, 2.0, 3.0, 4.0])
        assert nearest_rank_percentile(values, 25.0) == 1.0
        assert nearest_rank_percentile(values, 50.0) == 2.0
        assert nearest_rank_percentile(values, 75.0) == 3.0
        assert nearest_rank_percentile(values, 100.0) == 4.0
        assert nearest_rank_percentile(values, 1.0) == 1.0


class TestTokenFrequency:
    def test_planted_marker_counted(self):
        records = []
        for i in range(3):
            e = [0.1] * 9 + [5.0]
            texts = [f"w{j}" for j in range(9)] + ["wait"]
            records.append(record_from_entropies(e, sample_id=f"s{i}", texts=texts))
        assert high_entropy_token_frequency(records, p=0.1) == [("wait", 3)]

    def test_tie_ordered_by_text(self):
        records = [
            record_from_entropies([0.1, 5.0], sample_id="s1", texts=["a", "zz"]),
            record_from_entropies([0.1, 5.0], sample_id="s2", texts=["a", "bb"]),
            record_from_entropies([0.1, 5.0], sample_id="s3", texts=["a", "zz"]),
            record_from_entropies([0.1, 5.0], sample_id="s4", texts=["a", "bb"]),
        ]
        assert high_entropy_token_frequency(records, p=0.5) == [("bb", 2), ("zz", 2)]

    def test_missing_text_falls_back_to_id(self):
        records = [record_from_entropies([5.0], sample_id="s1")]
        records[0].tokens[0].token_id = 42
        assert high_entropy_token_frequency(records, p=1.0) == [("id:42", 1)]

    def test_planted_positions_match_plan(self, rng):
        # Spikes planted above a low base must be exactly the counted tokens.
        plan = {"hmm": 7, "wait": 4, "so": 2}
        records = []
        k = 0
        for text, times in plan.items():
            for _ in range(times):
                n = int(rng.integers(20, 60))
                e = list(rng.uniform(0.0, 0.5, n))
                pos = int(rng.integers(0, n))
                e[pos] = 3.0
                texts = [f"f{j}" for j in range(n)]
                texts[pos] = text
                records.append(record_from_entropies(e, sample_id=f"s{k}", texts=texts))
                k += 1
        freq = dict(high_entropy_token_frequency(records, p=0.005))
        assert freq == plan


class TestCrossScorerAgreement:
    def test_identical_scores(self, rng):
        scores = [score_row(f"s{i}", float(v)) for i, v in enumerate(rng.uniform(0, 9, 10))]
        report = cross_scorer_agreement(scores, list(scores), ratio=0.2)
        assert report.spearman == pytest.approx(1.0)
        assert report.overlap_at_ratio == 1.0

    def test_reversed_ranking(self):
        a = [score_row(f"s{i}", float(i)) for i in range(10)]
        b = [score_row(f"s{i}", float(9 - i)) for i in range(10)]
        report = cross_scorer_agreement(a, b, ratio=0.2)
        assert report.spearman == pytest.approx(-1.0)
        assert report.overlap_at_ratio == 0.0

    def test_monotone_scaling_is_invisible(self, rng):
        vals = rng.uniform(0, 9, 12)
        a = [score_row(f"s{i}", float(v)) for i, v in enumerate(vals)]
        b = [score_row(f"s{i}", float(2 * v)) for i, v in enumerate(vals)]
        report = cross_scorer_agreement(a, b, ratio=0.25)
        assert report.spearman == pytest.approx(1.0)
        assert report.overlap_at_ratio == 1.0

    def test_symmetry(self, rng):
        a = [score_row(f"s{i}", float(v)) for i, v in enumerate(rng.uniform(0, 9, 15))]
        b = [score_row(f"s{i}", float(v)) for i, v in enumerate(rng.uniform(0, 9, 15))]
        ab = cross_scorer_agreement(a, b, ratio=0.3)
        ba = cross_scorer_agreement(b, a, ratio=0.3)
        assert ab.overlap_at_ratio == ba.overlap_at_ratio
        assert ab.spearman == pytest.approx(ba.spearman)

    def test_id_mismatch_rejected(self):
        a = [score_row("s1", 1.0)]
        b = [score_row("s2", 1.0)]
        with pytest.raises(IdSetMismatch):
            cross_scorer_agreement(a, b)
