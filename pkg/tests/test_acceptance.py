"""Acceptance suite.

Each test prints one [PASS]/[FAIL] line (visible with ``pytest -s``).  The
Monte Carlo criteria run full scenario studies and take minutes; they are
marked ``slow`` but run by default:

    pytest tests/test_acceptance.py -v -s
"""

import dataclasses
import math
import os
from contextlib import contextmanager

import numpy as np
import pytest

from helpers import mc_rect_prob, random_correlation
from pwer.control import error_rates, solve_equal
from pwer.design import (
    KnownHeterogeneous,
    KnownHomogeneous,
    UnknownHomogeneous,
    build_model,
    pooled_df_from_counts,
)
from pwer.errors import UndefinedStatisticError
from pwer.mvdist import CorrelationMatrix, mvn_cdf, mvt_cdf
from pwer.sim import (
    KNOWN_HET,
    KNOWN_HOM,
    UNKNOWN_HET,
    UNKNOWN_HOM,
    ScenarioSpec,
    empty_stratum_study,
    lfc_check,
    run_scenario,
    summarize,
)
from pwer.strata import (
    ALL_DIFFERENT,
    SINGLE_TREATMENT,
    STRATIFIED,
    BiomarkerModel,
    allocate,
    sample_counts,
    strata_probabilities,
    treatment_arm,
)

THREADS = min(4, os.cpu_count() or 1)
REPLICATES = 2000
SEED = 20240801

_SCENARIOS: dict[int, object] = {}


def m3_result(n_total):
    """One shared scenario run per sample size (criteria 1, 2, 3, 9)."""
    if n_total not in _SCENARIOS:
        spec = ScenarioSpec(m=3, n_total=n_total, replicates=REPLICATES,
                            alpha=0.025, variance_regime=UNKNOWN_HOM,
                            seed=SEED)
        _SCENARIOS[n_total] = run_scenario(spec, threads=THREADS)
    return _SCENARIOS[n_total]


@contextmanager
def criterion(num, description):
    try:
        yield
    except AssertionError:
        print(f"[FAIL] criterion {num}: {description}")
        raise
    print(f"[PASS] criterion {num}: {description}")


@pytest.mark.slow
def test_criterion_1_reference_row_m3_n500():
    with criterion(1, "m=3, N=500 pooled-t scenario mean/sd"):
        s = summarize(m3_result(500), "true_pwer")
        assert s.mean == pytest.approx(0.02501, abs=0.0003)
        assert 0.00042 * 0.75 <= s.sd <= 0.00042 * 1.25


@pytest.mark.slow
def test_criterion_2_small_sample_row_m3_n25():
    with criterion(2, "m=3, N=25 pooled-t scenario mean/sd"):
        s = summarize(m3_result(25), "true_pwer")
        assert s.mean == pytest.approx(0.02516, abs=0.0006)
        assert 0.00186 * 0.75 <= s.sd <= 0.00186 * 1.25


@pytest.mark.slow
def test_criterion_3_max_strata_rate_diagnostics():
    with criterion(3, "m=3, N=500 mean maximal strata-wise rate"):
        s = summarize(m3_result(500), "max_swer")
        assert s.mean == pytest.approx(0.04597, abs=0.003)
        assert s.mean < 0.05 + 0.005


@pytest.mark.slow
def test_criterion_4_heterogeneous_variance_procedure():
    with criterion(4, "m=2, N=500 per-population procedure mean rate"):
        spec = ScenarioSpec(m=2, n_total=500, replicates=2000,
                            variance_regime=UNKNOWN_HET,
                            data_replicates=2000, seed=SEED + 1)
        result = run_scenario(spec, threads=THREADS)
        assert len(result.records) > 1500
        s = summarize(result, "true_pwer")
        assert s.mean == pytest.approx(0.02512, abs=0.002)


@pytest.mark.slow
def test_criterion_5_minimal_prevalence_study_m6():
    with criterion(5, "m=6 floored-prevalence study means"):
        spec = ScenarioSpec(m=6, n_total=500, replicates=150,
                            prob_range=(0.0, 0.1),
                            variance_regime=UNKNOWN_HOM, seed=SEED + 2)
        study = empty_stratum_study(spec, threads=THREADS)
        assert len(study.records) >= 100
        summ = study.summaries()
        pwer_plain, pwer_floored = summ["true_pwer"]
        max_plain, max_floored = summ["max_swer"]
        assert pwer_floored.mean == pytest.approx(0.01403, abs=0.003)
        assert max_floored.mean == pytest.approx(0.0723, abs=0.01)
        assert pwer_floored.mean < pwer_plain.mean
        assert max_floored.mean < max_plain.mean


def test_criterion_6_numerical_kernel_oracles():
    with criterion(6, "integration kernel against closed forms and MC"):
        res = mvn_cdf([0.0, 0.0], CorrelationMatrix([[1, .5], [.5, 1]]))
        assert abs(res.value - 1 / 3) < 1e-6

        sigma = CorrelationMatrix([[1, .35], [.35, 1]])
        t_big = mvt_cdf([1.1, 0.4], sigma, 1e6)
        z_ref = mvn_cdf([1.1, 0.4], sigma)
        assert abs(t_big.value - z_ref.value) < 1e-4

        rng = np.random.default_rng(SEED)
        for trial in range(100):
            d = int(rng.integers(2, 9))
            corr = random_correlation(d, rng)
            upper = rng.uniform(-1.0, 2.5, d)
            df = float(rng.integers(5, 60)) if trial % 3 == 0 else None
            sigma = CorrelationMatrix(corr)
            if df is None:
                res = mvn_cdf(upper, sigma)
            else:
                res = mvt_cdf(upper, sigma, df)
            ref, se = mc_rect_prob([-np.inf] * d, upper, corr, df=df,
                                   n=400_000, seed=trial)
            assert abs(res.value - ref) < 3 * (res.error_estimate + se)


def test_criterion_7_solver_round_trip():
    with criterion(7, "boundary solve round-trips to alpha on 50 designs"):
        rng = np.random.default_rng(SEED + 3)
        alpha = 0.025
        solved = 0
        while solved < 50:
            m = int(rng.integers(2, 5))
            probs = tuple(rng.uniform(0.15, 0.9, m))
            prev = strata_probabilities(BiomarkerModel(probs))
            counts = allocate(sample_counts(prev, int(rng.integers(60, 400)),
                                            rng), STRATIFIED, rng)
            kind = solved % 3
            try:
                if kind == 0:
                    regime = KnownHomogeneous(float(rng.uniform(0.5, 2.0)))
                elif kind == 1:
                    regime = KnownHeterogeneous(
                        {(mask, arm): float(rng.uniform(0.5, 2.0))
                         for mask, arms in counts.arms.items()
                         for arm in arms})
                else:
                    regime = UnknownHomogeneous(
                        1.0, pooled_df_from_counts(counts))
                model = build_model(counts, regime)
            except UndefinedStatisticError:
                continue
            res = solve_equal(prev, model, alpha)
            report = error_rates(res.boundary, prev, model)
            assert abs(report.pwer - alpha) <= 2e-6 + report.numerical_error
            solved += 1


def test_criterion_8_correlation_formula_vs_simulation():
    with criterion(8, "statistic correlations match 1e5-rep simulation"):
        rng = np.random.default_rng(SEED + 4)
        reps = 100_000
        for trial in range(20):
            structure = ALL_DIFFERENT if trial % 2 == 0 else SINGLE_TREATMENT
            m = int(rng.integers(2, 4))
            probs = tuple(rng.uniform(0.25, 0.9, m))
            prev = strata_probabilities(BiomarkerModel(probs))
            counts = allocate(sample_counts(prev, 400, rng), STRATIFIED, rng,
                              structure)
            regime = KnownHeterogeneous(
                {(mask, arm): float(rng.uniform(0.5, 2.0))
                 for mask, arms in counts.arms.items() for arm in arms})
            model = build_model(counts, regime, structure)
            cells = [(mask, arm, n)
                     for mask, arms in sorted(counts.arms.items())
                     for arm, n in sorted(arms.items()) if n > 0]
            sd = np.array([math.sqrt(regime.cell_variances[(mask, arm)] / n)
                           for mask, arm, n in cells])
            means = rng.standard_normal((reps, len(cells))) * sd
            stats = np.empty((reps, m))
            for i in range(1, m + 1):
                acc = np.zeros(reps)
                t_arm = treatment_arm(i, structure)
                n_t = counts.population_arm_count(i, t_arm)
                n_c = counts.population_arm_count(i, "C")
                for c, (mask, arm, n) in enumerate(cells):
                    if not mask >> (i - 1) & 1:
                        continue
                    if arm == t_arm:
                        acc += n / n_t * means[:, c]
                    elif arm == "C":
                        acc -= n / n_c * means[:, c]
                stats[:, i - 1] = acc / math.sqrt(model.variances[i - 1])
            emp = np.corrcoef(stats.T)
            assert np.max(np.abs(emp - model.correlation.values)) < 0.01


@pytest.mark.slow
def test_criterion_9_convergence_in_sample_size():
    with criterion(9, "spread shrinks in N; N=200 rates within 10% of alpha"):
        sds = []
        for n_total in (25, 50, 100, 200, 500):
            sds.append(summarize(m3_result(n_total), "true_pwer").sd)
        assert all(a > b for a, b in zip(sds, sds[1:])), sds
        values = m3_result(200).metric("true_pwer")
        assert np.all(np.abs(values - 0.025) < 0.1 * 0.025)


def test_criterion_10_worst_case_configuration():
    with criterion(10, "nonpositive effects never raise the empirical rate"):
        rng = np.random.default_rng(SEED + 5)
        for trial in range(20):
            m = int(rng.integers(2, 4))
            probs = tuple(rng.uniform(0.3, 0.8, m))
            base = ScenarioSpec(
                m=m, n_total=int(rng.integers(100, 300)), replicates=1,
                biomarker_mode="fixed", probabilities=probs,
                variance_regime=KNOWN_HOM if trial % 2 else UNKNOWN_HOM,
                data_replicates=20_000, seed=int(rng.integers(1 << 30)))
            effects = {}
            for mask in range(1, 1 << m):
                for i in range(1, m + 1):
                    if mask >> (i - 1) & 1 and rng.random() < 0.7:
                        effects[(mask, f"T{i}")] = float(-rng.uniform(0, 1.5))
            if not effects:
                effects[(1, "T1")] = -0.5
            shifted = dataclasses.replace(base, effects=effects)
            report = lfc_check(shifted, base)
            assert report.difference <= 3 * report.se
            assert not report.violation
