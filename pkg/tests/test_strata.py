import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from pwer.errors import ConfigurationError
from pwer.strata import (
    CONTROL_ARM,
    PRAGMATIC_ARRIVAL,
    RANDOM_ARRIVAL,
    SINGLE_TREATMENT,
    STRATIFIED,
    BiomarkerModel,
    CountTable,
    PrevalenceVector,
    StrataIndex,
    allocate,
    eligible_arms,
    empty_probability,
    enumerate_strata,
    sample_counts,
    strata_probabilities,
)


class TestEnumerate:
    def test_m1(self):
        assert [s.members for s in enumerate_strata(1)] == [(1,)]

    def test_m2(self):
        assert [s.members for s in enumerate_strata(2)] == [(1,), (2,), (1, 2)]

    def test_m3_has_all_seven_cells(self):
        got = {s.members for s in enumerate_strata(3)}
        assert got == {(1,), (2,), (3,), (1, 2), (1, 3), (2, 3), (1, 2, 3)}

    def test_ascending_mask_order_no_duplicates(self):
        masks = [s.mask for s in enumerate_strata(5)]
        assert masks == sorted(set(masks)) == list(range(1, 32))

    @pytest.mark.parametrize("m", [0, 17, -3])
    def test_out_of_range(self, m):
        with pytest.raises(ConfigurationError):
            enumerate_strata(m)

    def test_from_members_roundtrip(self):
        s = StrataIndex.from_members([3, 1], 4)
        assert s.members == (1, 3)
        assert s.label() == "1,3"
        assert s.size == 2
        assert s.contains(3) and not s.contains(2)


class TestStrataProbabilities:
    def test_single_population_gets_all_mass(self):
        prev = strata_probabilities(BiomarkerModel((0.3,)))
        assert prev.weights[0] == pytest.approx(1.0)

    def test_half_half_independent_gives_thirds(self):
        prev = strata_probabilities(BiomarkerModel((0.5, 0.5)))
        np.testing.assert_allclose(prev.weights, [1 / 3, 1 / 3, 1 / 3],
                                   atol=1e-14)

    def test_identity_copula_matches_independent(self):
        p = (0.5, 0.5)
        independent = strata_probabilities(BiomarkerModel(p))
        copula = strata_probabilities(BiomarkerModel(p, np.eye(2)))
        np.testing.assert_allclose(copula.weights, independent.weights,
                                   atol=2e-5)

    def test_copula_matches_dichotomized_gaussian_simulation(self, rng):
        p = (0.4, 0.7, 0.2)
        r = np.array([[1.0, 0.5, -0.3], [0.5, 1.0, 0.1], [-0.3, 0.1, 1.0]])
        prev = strata_probabilities(BiomarkerModel(p, r))
        n = 400_000
        latent = rng.multivariate_normal(np.zeros(3), r, size=n)
        from scipy.special import ndtri
        expressed = latent <= ndtri(np.array(p))
        masks = expressed @ np.array([1, 2, 4])
        masks = masks[masks > 0]
        for mask in range(1, 8):
            freq = np.mean(masks == mask)
            se = np.sqrt(freq * (1 - freq) / len(masks)) + 1e-9
            assert abs(prev.weights[mask - 1] - freq) < 4.5 * se

    @given(st.lists(st.floats(0.05, 0.95), min_size=1, max_size=6))
    @settings(max_examples=40, deadline=None)
    def test_sums_to_one_with_weights_in_range(self, probs):
        prev = strata_probabilities(BiomarkerModel(tuple(probs)))
        assert abs(prev.weights.sum() - 1.0) < 1e-12
        assert np.all(prev.weights >= 0) and np.all(prev.weights <= 1)

    @given(st.lists(st.floats(0.05, 0.95), min_size=1, max_size=6))
    @settings(max_examples=40, deadline=None)
    def test_marginal_consistency_before_renormalization(self, probs):
        # summing unnormalized stratum masses of population j recovers p_j
        p = np.array(probs)
        m = len(p)
        prev = strata_probabilities(BiomarkerModel(tuple(p)))
        normalizer = 1.0 - np.prod(1.0 - p)
        for j in range(m):
            total = sum(prev.weights[mask - 1] for mask in range(1, 1 << m)
                        if mask >> j & 1)
            assert total * normalizer == pytest.approx(p[j], abs=1e-10)

    def test_all_zero_probabilities_rejected(self):
        with pytest.raises(ConfigurationError):
            BiomarkerModel((0.0, 0.0))

    def test_empty_probability_independent(self):
        model = BiomarkerModel((0.4, 0.7, 0.2))
        assert empty_probability(model) == pytest.approx(0.6 * 0.3 * 0.8)


class TestSampleCounts:
    def test_zero_total(self, rng):
        prev = strata_probabilities(BiomarkerModel((0.5, 0.5)))
        counts = sample_counts(prev, 0, rng)
        assert counts.total == 0

    def test_degenerate_prevalence(self, rng):
        prev = PrevalenceVector(2, np.array([0.0, 0.0, 1.0]))
        counts = sample_counts(prev, 57, rng)
        assert counts.sizes.tolist() == [0, 0, 57]

    def test_goodness_of_fit_over_many_draws(self, rng):
        prev = strata_probabilities(BiomarkerModel((0.3, 0.6)))
        draws = rng.multinomial(50, prev.weights, size=10_000)
        # LLN: mean frequencies near the weights, within 3 binomial SEs
        n_total = 50 * 10_000
        mean_freq = draws.sum(axis=0) / n_total
        se = np.sqrt(prev.weights * (1 - prev.weights) / n_total)
        assert np.all(np.abs(mean_freq - prev.weights) < 3 * se)
        stat = chisquare(draws.sum(axis=0), prev.weights * n_total)
        assert stat.pvalue > 0.001

    def test_reproducible_given_seed(self):
        prev = strata_probabilities(BiomarkerModel((0.3, 0.6)))
        a = sample_counts(prev, 100, np.random.default_rng(7))
        b = sample_counts(prev, 100, np.random.default_rng(7))
        assert a.sizes.tolist() == b.sizes.tolist()

    def test_screened_out_count(self, rng):
        model = BiomarkerModel((0.05, 0.05))
        prev = strata_probabilities(model)
        p_empty = empty_probability(model)
        draws = [sample_counts(prev, 50, rng, empty_prob=p_empty).n_empty
                 for _ in range(2000)]
        # negative-binomial mean: 50 * p/(1-p)
        expected = 50 * p_empty / (1 - p_empty)
        assert np.mean(draws) == pytest.approx(expected, rel=0.1)


class TestAllocate:
    def _table(self, m, sizes):
        return CountTable(m, np.array(sizes))

    def test_stratified_exact_split(self, rng):
        counts = allocate(self._table(2, [0, 0, 9]), STRATIFIED, rng)
        assert counts.arms[3] == {"C": 3, "T1": 3, "T2": 3}

    def test_stratified_remainder_goes_to_control_first(self, rng):
        counts = allocate(self._table(2, [0, 0, 10]), STRATIFIED, rng)
        assert counts.arms[3] == {"C": 4, "T1": 3, "T2": 3}

    def test_stratified_empty_stratum(self, rng):
        counts = allocate(self._table(2, [0, 5, 0]), STRATIFIED, rng)
        assert counts.arms[3] == {"C": 0, "T1": 0, "T2": 0}

    @given(st.integers(0, 200), st.integers(1, 4))
    @settings(max_examples=60, deadline=None)
    def test_stratified_balance(self, n, size):
        m = 4
        mask = (1 << size) - 1
        sizes = np.zeros((1 << m) - 1, dtype=int)
        sizes[mask - 1] = n
        counts = allocate(CountTable(m, sizes), STRATIFIED,
                          np.random.default_rng(0))
        cells = list(counts.arms[mask].values())
        assert sum(cells) == n
        assert max(cells) - min(cells) <= 1

    def test_random_arrival_sums(self, rng):
        counts = allocate(self._table(2, [4, 5, 33]), RANDOM_ARRIVAL, rng)
        for stratum in enumerate_strata(2):
            assert (sum(counts.arms[stratum.mask].values())
                    == counts.size(stratum))

    def test_pragmatic_balances_subtrials(self, rng):
        counts = allocate(self._table(2, [20, 20, 40]), PRAGMATIC_ARRIVAL, rng)
        # within each subtrial the treatment versus control split is 1:1
        for i in (1, 2):
            treat = counts.population_arm_count(i, f"T{i}")
            assert treat >= 1
        total = counts.total
        assert sum(sum(v.values()) for v in counts.arms.values()) == total

    def test_pragmatic_single_treatment(self, rng):
        counts = allocate(self._table(2, [3, 3, 10]), PRAGMATIC_ARRIVAL, rng,
                          SINGLE_TREATMENT)
        treat = sum(c.get("T", 0) for c in counts.arms.values())
        ctrl = sum(c.get("C", 0) for c in counts.arms.values())
        assert abs(treat - ctrl) <= 1

    def test_eligible_arms(self):
        s = StrataIndex.from_members([1, 3], 3)
        assert eligible_arms(s) == (CONTROL_ARM, "T1", "T3")
        assert eligible_arms(s, SINGLE_TREATMENT) == (CONTROL_ARM, "T")

    def test_unknown_policy(self, rng):
        with pytest.raises(ConfigurationError):
            allocate(self._table(1, [3]), "alphabetical", rng)


class TestCountTable:
    def test_arm_sums_validated(self):
        with pytest.raises(ConfigurationError):
            CountTable(1, np.array([5]), {1: {"C": 2, "T1": 2}})

    def test_population_accessors(self, rng):
        counts = allocate(CountTable(2, np.array([6, 6, 9])), STRATIFIED, rng)
        assert counts.population_size(1) == 15
        # T1 cells: {1} gets 3, {1,2} gets 3
        assert counts.population_arm_count(1, "T1") == 6
        assert counts.population_arm_count(1, CONTROL_ARM) == 3 + 3

    def test_digest_is_stable(self):
        a = CountTable(2, np.array([1, 2, 3]))
        b = CountTable(2, np.array([1, 2, 3]))
        assert a.digest() == b.digest()


class TestPrevalenceVector:
    def test_rejects_bad_sum(self):
        with pytest.raises(ConfigurationError):
            PrevalenceVector(2, np.array([0.5, 0.2, 0.2]))

    def test_normalized_clips_and_scales(self):
        prev = PrevalenceVector.normalized(2, np.array([3.0, -1e-18, 1.0]))
        assert prev.weights.sum() == pytest.approx(1.0, abs=1e-15)
        assert prev.weights[1] == 0.0

    def test_as_dict_labels(self):
        prev = PrevalenceVector(2, np.array([0.2, 0.3, 0.5]))
        assert prev.as_dict() == {"1": 0.2, "2": 0.3, "1,2": 0.5}
