from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hes_toolkit.errors import EmptyDistribution, EmptySequence, MassExceedsOne, SchemaViolation
from hes_toolkit.metrics import (
    MetricConfig,
    TokenObservation,
    compute_token_entropy,
    identify_high_entropy_tokens,
    score_sample,
    token_entropies,
    top_fraction_count,
)

from conftest import random_entropies, record_from_entropies
from oracles import oracle_high_indices, oracle_metrics, relative_error


def lp(*probs: float) -> list[tuple[str, float]]:
    return [(f"t{i}", math.log(p)) for i, p in enumerate(probs)]


class TestComputeTokenEntropy:
    def test_one_hot_is_zero(self):
        assert compute_token_entropy(TokenObservation(top_logprobs=lp(1.0))) == 0.0

    def test_uniform_four(self):
        h = compute_token_entropy(TokenObservation(top_logprobs=lp(0.25, 0.25, 0.25, 0.25)))
        assert h == pytest.approx(math.log(4), rel=1e-12)

    def test_half_quarter_quarter(self):
        h = compute_token_entropy(TokenObservation(top_logprobs=lp(0.5, 0.25, 0.25)))
        assert h == pytest.approx(1.5 * math.log(2), rel=1e-12)

    def test_lump_mode_folds_tail(self):
        expected = -math.fsum(p * math.log(p) for p in (0.7, 0.2, 0.1))
        h = compute_token_entropy(TokenObservation(top_logprobs=lp(0.7, 0.2)), "lump")
        assert h == pytest.approx(expected, rel=1e-12)
        assert h == pytest.approx(0.801819, abs=1e-6)

    def test_ignore_mode_drops_tail(self):
        expected = -math.fsum(p * math.log(p) for p in (0.7, 0.2))
        h = compute_token_entropy(TokenObservation(top_logprobs=lp(0.7, 0.2)), "ignore")
        assert h == pytest.approx(expected, rel=1e-12)

    def test_tiny_tail_is_dropped_in_lump_mode(self):
        # Mass sums to 1 up to float noise; no tail pseudo-symbol.
        h = compute_token_entropy(TokenObservation(top_logprobs=lp(0.5, 0.5)), "lump")
        assert h == pytest.approx(math.log(2), rel=1e-12)

    def test_direct_entropy_returned_verbatim(self):
        assert compute_token_entropy(TokenObservation(entropy=2.25)) == 2.25

    def test_tiny_negative_entropy_clamped(self):
        assert compute_token_entropy(TokenObservation(entropy=-1e-9)) == 0.0

    def test_large_negative_entropy_rejected(self):
        with pytest.raises(SchemaViolation):
            compute_token_entropy(TokenObservation(entropy=-1e-3))

    def test_empty_observation_rejected(self):
        with pytest.raises(EmptyDistribution):
            compute_token_entropy(TokenObservation())

    def test_mass_above_one_rejected(self):
        with pytest.raises(MassExceedsOne):
            compute_token_entropy(TokenObservation(top_logprobs=lp(0.7, 0.7)))

    def test_zero_probability_contributes_nothing(self):
        obs = TokenObservation(top_logprobs=[("a", 0.0), ("b", float("-inf"))])
        assert compute_token_entropy(obs) == 0.0

    def test_bad_tail_mode(self):
        with pytest.raises(ValueError):
            compute_token_entropy(TokenObservation(entropy=1.0), "fold")

    @pytest.mark.parametrize("bad", [float("nan"), float("inf"), float("-inf")])
    def test_non_finite_entropy_rejected(self, bad):
        with pytest.raises(SchemaViolation):
            compute_token_entropy(TokenObservation(entropy=bad))

    def test_nan_logprob_rejected(self):
        obs = TokenObservation(top_logprobs=[("a", float("nan")), ("b", -1.0)])
        with pytest.raises(MassExceedsOne):
            compute_token_entropy(obs)

    def test_positive_logprob_rejected(self):
        obs = TokenObservation(top_logprobs=[("a", 0.5)])
        with pytest.raises(MassExceedsOne):
            compute_token_entropy(obs)


class TestCountRule:
    @pytest.mark.parametrize(
        "n,expected",
        [(1, 1), (10, 1), (199, 1), (200, 1), (201, 2), (400, 2), (401, 3)],
    )
    def test_default_fraction_edges(self, n, expected):
        assert top_fraction_count(0.005, n) == expected

    def test_full_fraction_keeps_everything(self):
        assert top_fraction_count(1.0, 7) == 7

    def test_clamped_to_total(self):
        assert top_fraction_count(1.0, 1) == 1

    @pytest.mark.parametrize("frac,n", [(0.25, 4), (0.4, 5), (0.2, 10), (0.5, 3)])
    def test_matches_exact_arithmetic(self, frac, n):
        from fractions import Fraction

        exact = math.ceil(Fraction(str(frac)) * n)
        assert top_fraction_count(frac, n) == min(n, max(1, exact))


class TestIdentifyHighEntropyTokens:
    def test_single_winner(self):
        assert identify_high_entropy_tokens([0.1, 2.0, 0.3, 1.5], 0.25) == [1]

    def test_all_ties_pick_earliest(self):
        assert identify_high_entropy_tokens([0.5] * 10, 0.005) == [0]

    def test_full_fraction_returns_all_positions(self):
        assert identify_high_entropy_tokens([0.3, 0.1, 0.9], 1.0) == [0, 1, 2]

    def test_tie_at_cut_goes_to_earliest(self):
        # Two tokens tied at 1.0; only one slot: position 1 wins over 3.
        assert identify_high_entropy_tokens([0.2, 1.0, 0.5, 1.0], 0.25) == [1]

    def test_empty_rejected(self):
        with pytest.raises(EmptySequence):
            identify_high_entropy_tokens([], 0.5)

    def test_bad_fraction_rejected(self):
        with pytest.raises(ValueError):
            identify_high_entropy_tokens([1.0], 0.0)

    def test_matches_oracle_on_random_inputs(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 400))
            e = random_entropies(rng, n)
            p = float(rng.uniform(0.002, 1.0))
            assert identify_high_entropy_tokens(e, p) == oracle_high_indices(list(e), p)


class TestScoreSample:
    def test_worked_example(self):
        record = record_from_entropies([3.0, 0.1, 2.5, 0.2, 0.2])
        score = score_sample(record, MetricConfig(high_entropy_fraction=0.4, absolute_threshold=1.6))
        assert score.high_count == 2
        assert score.high_indices == [0, 2]
        assert score.hes_rel == pytest.approx(5.5, rel=1e-12)
        assert score.avg_he == pytest.approx(2.75, rel=1e-12)
        assert score.es == pytest.approx(6.0, rel=1e-12)
        assert score.avg_e == pytest.approx(1.2, rel=1e-12)
        assert score.hes_abs == pytest.approx(5.5, rel=1e-12)

    @pytest.mark.parametrize("p", [0.005, 0.1, 0.5, 1.0])
    def test_single_token_hes_rel_is_its_entropy(self, p):
        record = record_from_entropies([0.77])
        score = score_sample(record, MetricConfig(high_entropy_fraction=p))
        assert score.hes_rel == pytest.approx(0.77, rel=1e-12)

    @pytest.mark.parametrize("h,expected", [(2.0, 2.0), (1.6, 0.0), (0.5, 0.0)])
    def test_single_token_hes_abs_strictly_above_threshold(self, h, expected):
        score = score_sample(record_from_entropies([h]), MetricConfig())
        assert score.hes_abs == expected

    def test_default_config(self):
        score = score_sample(record_from_entropies([1.0, 2.0]))
        assert score.config.high_entropy_fraction == 0.005
        assert score.config.absolute_threshold == 1.6
        assert score.config.tail_mode == "lump"

    def test_token_error_carries_position(self):
        record = record_from_entropies([1.0, 2.0])
        record.tokens[1] = TokenObservation()  # invalid: nothing usable
        with pytest.raises(EmptyDistribution, match="token 1"):
            score_sample(record)

    def test_matches_oracle_on_random_inputs(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 800))
            e = random_entropies(rng, n)
            p = float(rng.uniform(0.002, 1.0))
            tau = float(rng.uniform(0.0, 3.0))
            score = score_sample(
                record_from_entropies(e),
                MetricConfig(high_entropy_fraction=p, absolute_threshold=tau),
            )
            want = oracle_metrics(list(e), p, tau)
            assert score.high_indices == want["high_indices"]
            assert score.high_count == want["high_count"]
            for name in ("es", "avg_e", "hes_rel", "hes_abs", "avg_he"):
                assert relative_error(score.metric(name), want[name]) < 1e-9


class TestScoreProperties:
    def test_identities_hold(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 500))
            e = random_entropies(rng, n)
            s = score_sample(record_from_entropies(e), MetricConfig(high_entropy_fraction=0.05))
            assert relative_error(s.avg_e * s.n_tokens, s.es) < 1e-9
            assert relative_error(s.avg_he * s.high_count, s.hes_rel) < 1e-9
            assert 0.0 <= s.hes_rel <= s.es + 1e-12
            assert 0.0 <= s.hes_abs <= s.es + 1e-12

    def test_monotonicity_in_high_set(self, rng):
        cfg = MetricConfig(high_entropy_fraction=0.1)
        for _ in range(100):
            n = int(rng.integers(2, 300))
            e = random_entropies(rng, n)
            base = score_sample(record_from_entropies(e), cfg)
            bumped = e.copy()
            pick = base.high_indices[int(rng.integers(0, len(base.high_indices)))]
            bumped[pick] += float(rng.uniform(0.0, 2.0))
            after = score_sample(record_from_entropies(bumped), cfg)
            assert after.hes_rel >= base.hes_rel - 1e-12

    def test_threshold_just_below_high_set_matches_relative(self, rng):
        # No ties: tau set just under the weakest high-set member makes the
        # absolute and relative sums cover the same tokens.
        for _ in range(50):
            n = int(rng.integers(5, 200))
            e = rng.permutation(np.linspace(0.1, 4.0, n))
            m = top_fraction_count(0.2, n)
            high = identify_high_entropy_tokens(e, 0.2)
            floor = min(e[i] for i in high)
            below = max((x for x in e if x < floor), default=0.0)
            tau = (floor + below) / 2
            s = score_sample(
                record_from_entropies(e),
                MetricConfig(high_entropy_fraction=0.2, absolute_threshold=tau),
            )
            assert sum(1 for x in e if x > tau) == m
            assert s.hes_abs == s.hes_rel

    def test_permutation_covariance_without_ties(self, rng):
        cfg = MetricConfig(high_entropy_fraction=0.3)
        for _ in range(50):
            n = int(rng.integers(2, 200))
            e = rng.permutation(np.linspace(0.01, 5.0, n))
            perm = rng.permutation(n)
            base = score_sample(record_from_entropies(e), cfg)
            moved = score_sample(record_from_entropies(e[perm]), cfg)
            # position j in the permuted sample holds old position perm[j]
            expected = sorted(j for j in range(n) if perm[j] in set(base.high_indices))
            assert moved.high_indices == expected
            for name in ("es", "avg_e", "hes_rel", "hes_abs", "avg_he"):
                assert relative_error(moved.metric(name), base.metric(name)) < 1e-9

    @given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=60), st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_permutation_leaves_scalars_unchanged(self, values, seed):
        cfg = MetricConfig(high_entropy_fraction=0.25)
        perm_rng = np.random.default_rng(seed)
        e = np.array(values)
        base = score_sample(record_from_entropies(e), cfg)
        moved = score_sample(record_from_entropies(e[perm_rng.permutation(e.size)]), cfg)
        for name in ("es", "avg_e", "hes_rel", "hes_abs", "avg_he"):
            assert relative_error(moved.metric(name), base.metric(name)) < 1e-9


class TestTokenEntropies:
    def test_vectorized_and_scalar_paths_agree(self, rng):
        tokens = []
        for _ in range(40):
            probs = rng.dirichlet(np.ones(5)) * rng.uniform(0.6, 1.0)
            tokens.append(TokenObservation(top_logprobs=[(f"t{i}", float(np.log(p))) for i, p in enumerate(probs)]))
        fast = token_entropies(tokens, "lump")
        slow = np.array([compute_token_entropy(t, "lump") for t in tokens])
        assert np.array_equal(fast, slow)

    def test_mixed_evidence_kinds(self):
        tokens = [
            TokenObservation(entropy=0.5),
            TokenObservation(top_logprobs=lp(0.5, 0.5)),
        ]
        e = token_entropies(tokens, "lump")
        assert e[0] == 0.5
        assert e[1] == pytest.approx(math.log(2), rel=1e-12)

    def test_ragged_logprob_lists(self):
        tokens = [
            TokenObservation(top_logprobs=lp(1.0)),
            TokenObservation(top_logprobs=lp(0.25, 0.25, 0.25, 0.25)),
        ]
        e = token_entropies(tokens, "lump")
        assert e[0] == 0.0
        assert e[1] == pytest.approx(math.log(4), rel=1e-12)

    def test_vectorized_mass_error_carries_position(self):
        tokens = [
            TokenObservation(top_logprobs=lp(0.5, 0.5)),
            TokenObservation(top_logprobs=lp(0.8, 0.8)),
        ]
        with pytest.raises(MassExceedsOne, match="token 1"):
            token_entropies(tokens, "lump")

    def test_vectorized_nan_logprob_rejected(self):
        tokens = [
            TokenObservation(top_logprobs=lp(0.5, 0.5)),
            TokenObservation(top_logprobs=[("a", float("nan")), ("b", -1.0)]),
        ]
        with pytest.raises(MassExceedsOne, match="token 1"):
            token_entropies(tokens, "lump")

    def test_vectorized_non_finite_entropy_rejected(self):
        tokens = [TokenObservation(entropy=0.5), TokenObservation(entropy=float("inf"))]
        with pytest.raises(SchemaViolation, match="tokens\\[1\\]"):
            token_entropies(tokens, "lump")

    def test_empty_sequence_rejected(self):
        with pytest.raises(EmptySequence):
            token_entropies([], "lump")
