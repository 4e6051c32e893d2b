"""Scenario engine: Monte Carlo studies of boundary estimation.

Each replicate draws biomarker probabilities, strata counts and an
allocation, solves the rejection boundary from the *estimated* prevalences,
then evaluates the error rates implied by the *true* prevalences at that
boundary.  Replicates are seeded independently from (seed, index), so
results are identical under any execution parallelism.

Data-level rates (needed under unknown heterogeneous variances and for the
worst-case-configuration check) are simulated from per-cell sufficient
statistics: cell means are normal and cell variances scaled chi-square,
which reproduces the joint law of the raw responses exactly at a fraction
of the cost.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .control import (
    error_rates,
    solve_equal,
    solve_min_adjusted,
    solve_per_population,
)
from .design import (
    DesignModel,
    KnownHeterogeneous,
    KnownHomogeneous,
    UnknownHeterogeneous,
    UnknownHomogeneous,
    build_model,
    pooled_df_from_counts,
)
from .errors import (
    ConfigurationError,
    DegenerateModelError,
    SpecificationError,
    UndefinedStatisticError,
    VarianceInestimableError,
)
from .mvdist import Budget
from .prevalence import MarginalInput, marginal, min_prevalence_adjust, mle
from .strata import (
    ALL_DIFFERENT,
    CONTROL_ARM,
    STRATIFIED,
    BiomarkerModel,
    CountTable,
    PrevalenceVector,
    StrataIndex,
    allocate,
    empty_probability,
    sample_counts,
    strata_probabilities,
    treatment_arm,
)

FIXED_PROBS = "fixed"
UNIFORM_RANDOM = "uniform"
ONE_PINNED = "pinned"

EST_MLE = "mle"
EST_MARGINAL = "marginal"
EST_MLE_MIN_PREV = "mle_min_prevalence"

KNOWN_HOM = "known_homogeneous"
KNOWN_HET = "known_heterogeneous"
UNKNOWN_HOM = "unknown_homogeneous"
UNKNOWN_HET = "unknown_heterogeneous"

_BIOMARKER_MODES = (FIXED_PROBS, UNIFORM_RANDOM, ONE_PINNED)
_ESTIMATORS = (EST_MLE, EST_MARGINAL, EST_MLE_MIN_PREV)
_REGIMES = (KNOWN_HOM, KNOWN_HET, UNKNOWN_HOM, UNKNOWN_HET)

# replicate-level failures recorded under these reasons and excluded
_REPLICATE_FAILURES = {
    UndefinedStatisticError: "undefined_statistic",
    VarianceInestimableError: "variance_inestimable",
    DegenerateModelError: "degenerate_model",
}


@dataclass(frozen=True)
class ScenarioSpec:
    """Complete, seedable description of one simulation scenario."""

    m: int
    n_total: int
    replicates: int = 10_000
    alpha: float = 0.025
    biomarker_mode: str = UNIFORM_RANDOM
    probabilities: tuple[float, ...] | None = None
    prob_range: tuple[float, float] = (0.0, 1.0)
    pinned_stratum: int = 1
    pinned_value: float = 0.5
    dependence: tuple[tuple[float, ...], ...] | None = None
    variance_regime: str = UNKNOWN_HOM
    known_variance: float = 1.0
    variance_range: tuple[float, float] = (0.5, 2.0)
    structure: str = ALL_DIFFERENT
    allocation: str = STRATIFIED
    estimator: str = EST_MLE
    pi_min: float | None = None
    effects: Mapping[tuple[int, str], float] | None = None
    data_replicates: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.m <= 16:
            raise ConfigurationError(f"m must be in [1, 16], got {self.m}")
        if self.n_total < 1:
            raise ConfigurationError("n_total must be at least 1")
        if self.replicates < 1:
            raise ConfigurationError("replicates must be at least 1")
        if not 0.0 < self.alpha <= 0.5:
            raise ConfigurationError("alpha must be in (0, 0.5]")
        if self.biomarker_mode not in _BIOMARKER_MODES:
            raise ConfigurationError(
                f"unknown biomarker mode {self.biomarker_mode!r}")
        if self.biomarker_mode == FIXED_PROBS:
            if self.probabilities is None or len(self.probabilities) != self.m:
                raise ConfigurationError(
                    "fixed biomarker mode needs m probabilities")
            object.__setattr__(self, "probabilities",
                               tuple(float(p) for p in self.probabilities))
        lo, hi = self.prob_range
        if not 0.0 <= lo < hi <= 1.0:
            raise ConfigurationError(f"bad prob_range {self.prob_range}")
        if self.biomarker_mode == ONE_PINNED:
            if not 0 < self.pinned_stratum < (1 << self.m):
                raise ConfigurationError("pinned stratum mask out of range")
            if not 0.0 < self.pinned_value < 1.0:
                raise ConfigurationError("pinned prevalence must be in (0, 1)")
        if self.dependence is not None:
            dep = tuple(tuple(float(x) for x in row) for row in self.dependence)
            if len(dep) != self.m or any(len(row) != self.m for row in dep):
                raise ConfigurationError("dependence matrix must be m x m")
            object.__setattr__(self, "dependence", dep)
        if self.variance_regime not in _REGIMES:
            raise ConfigurationError(
                f"unknown variance regime {self.variance_regime!r}")
        if self.known_variance <= 0:
            raise ConfigurationError("known_variance must be positive")
        vlo, vhi = self.variance_range
        if not 0.0 < vlo <= vhi:
            raise ConfigurationError(f"bad variance_range {self.variance_range}")
        if self.estimator not in _ESTIMATORS:
            raise ConfigurationError(f"unknown estimator {self.estimator!r}")
        if self.variance_regime == UNKNOWN_HET and self.estimator != EST_MLE:
            raise ConfigurationError(
                "per-population boundaries are defined for the multinomial "
                "estimate only")
        if self.data_replicates < 1:
            raise ConfigurationError("data_replicates must be at least 1")
        if self.effects is not None:
            object.__setattr__(self, "effects", dict(self.effects))


@dataclass(frozen=True)
class RepRecord:
    """Outcome of one replicate of a scenario."""

    replicate: int
    true_pwer: float
    max_swer: float
    mean_swer: float
    boundary: float | tuple[float, ...]
    boundary_components: dict[str, float]
    had_empty_stratum: bool
    counts_digest: str
    mc_se: float | None = None


@dataclass(frozen=True)
class ScenarioResult:
    spec: ScenarioSpec
    records: list[RepRecord]
    failures: Counter

    def metric(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    sd: float
    min: float
    q1: float
    median: float
    q3: float
    max: float


def summarize(records, metric: str = "true_pwer") -> SummaryStats:
    """Location and spread summary; quantiles interpolate linearly between
    order statistics at probability points (k-1)/(n-1)."""
    if isinstance(records, ScenarioResult):
        x = records.metric(metric)
    else:
        seq = list(records)
        if seq and isinstance(seq[0], RepRecord):
            x = np.array([getattr(r, metric) for r in seq], dtype=float)
        else:
            x = np.asarray(seq, dtype=float)
    if x.size == 0:
        raise ConfigurationError("cannot summarize zero records")
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    return SummaryStats(float(x.mean()), sd, float(x.min()), float(q1),
                        float(med), float(q3), float(x.max()))


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent, reproducible substream for one replicate."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def _draw_probabilities(spec: ScenarioSpec, rng) -> tuple[float, ...]:
    if spec.biomarker_mode == FIXED_PROBS:
        return spec.probabilities
    lo, hi = spec.prob_range
    return tuple(rng.uniform(lo, hi, spec.m))


def _pin_prevalences(prev: PrevalenceVector, mask: int,
                     value: float) -> PrevalenceVector:
    w = prev.weights.copy()
    others = w.sum() - w[mask - 1]
    if others <= 0.0:
        raise DegenerateModelError(
            "pinning leaves no mass for the remaining strata")
    w *= (1.0 - value) / others
    w[mask - 1] = value
    return PrevalenceVector.normalized(prev.m, w)


def _populated_cells(counts: CountTable) -> list[tuple[int, str, int]]:
    cells = []
    for mask in sorted(counts.arms):
        for arm, n in sorted(counts.arms[mask].items()):
            if n > 0:
                cells.append((mask, arm, n))
    return cells


def _draw_cell_variances(counts: CountTable, spec: ScenarioSpec, rng
                         ) -> dict[tuple[int, str], float]:
    lo, hi = spec.variance_range
    return {(mask, arm): float(rng.uniform(lo, hi))
            for mask, arm, _ in _populated_cells(counts)}


def _draw_dataset(counts: CountTable, true_cells, rng, effects=None):
    """Sufficient statistics of one dataset: (n, mean, variance) per cell.

    Requires every populated cell to hold at least two observations, since
    cell-level variance estimates exist only then.
    """
    stats = {}
    for mask, arm, n in _populated_cells(counts):
        if n < 2:
            raise VarianceInestimableError(
                f"cell (stratum {mask}, arm {arm}) has a single observation")
        var = true_cells[(mask, arm)]
        mu = 0.0 if effects is None else float(effects.get((mask, arm), 0.0))
        mean = mu + rng.normal(0.0, math.sqrt(var / n))
        var_hat = var * rng.chisquare(n - 1) / (n - 1)
        stats[(mask, arm)] = (n, float(mean), float(var_hat))
    return stats


def _population_variances(counts: CountTable, structure: str, dataset
                          ) -> dict[int, tuple[float, float]]:
    """Pooled-union sample variance of each population's two arms."""
    out = {}
    for i in range(1, counts.m + 1):
        bit = 1 << (i - 1)
        pair = []
        for arm in (treatment_arm(i, structure), CONTROL_ARM):
            cells = [dataset[(mask, arm)] for mask in sorted(counts.arms)
                     if mask & bit and (mask, arm) in dataset]
            n_tot = sum(c[0] for c in cells)
            if n_tot < 2:
                raise VarianceInestimableError(
                    f"population {i} arm {arm} has fewer than 2 observations")
            grand = sum(c[0] * c[1] for c in cells) / n_tot
            ss = sum((c[0] - 1) * c[2] + c[0] * (c[1] - grand) ** 2
                     for c in cells)
            pair.append(ss / (n_tot - 1))
        out[i] = (pair[0], pair[1])
    return out


def _estimate_prevalences(spec: ScenarioSpec, counts: CountTable
                          ) -> PrevalenceVector:
    if spec.estimator == EST_MARGINAL:
        return marginal(MarginalInput.from_counts(counts))
    return mle(counts)


@dataclass(frozen=True)
class McRates:
    """Simulation-based error rates at fixed boundaries."""

    pwer: float
    se: float
    max_swer: float
    mean_swer: float
    swer: dict[int, float]
    replicates: int


def mc_true_pwer(model: DesignModel, boundaries, true_prev: PrevalenceVector,
                 replicates: int, rng: np.random.Generator, *,
                 true_variances=None, effects=None) -> McRates:
    """Rejection-frequency estimate of the error rates at given boundaries.

    Draws ``replicates`` datasets (per-cell sufficient statistics) under the
    supplied cell means (zero = the worst-case configuration), recomputes
    the statistics the model's variance regime prescribes, and averages the
    per-stratum any-rejection indicators weighted by ``true_prev``.

    ``true_variances`` is the data-generating truth: a scalar for
    homogeneous regimes or a per-cell mapping; defaults to the regime's own
    values, which for estimated regimes only makes sense in oracle checks.
    """
    if replicates < 1:
        raise ConfigurationError("replicates must be at least 1")
    counts = model.counts
    regime = model.regime
    if true_variances is None:
        if isinstance(regime, KnownHomogeneous):
            true_variances = regime.variance
        elif isinstance(regime, UnknownHomogeneous):
            true_variances = regime.variance_estimate
        else:
            true_variances = regime.cell_variances
    cells = _populated_cells(counts)
    # per-cell variance estimates exist only with two observations; the
    # pooled regime instead zero-weights singleton cells
    if (isinstance(regime, UnknownHeterogeneous)
            and any(n < 2 for _, _, n in cells)):
        raise VarianceInestimableError(
            "every populated cell needs two observations to re-estimate "
            "cell-level variances")

    def cell_var(mask, arm):
        if isinstance(true_variances, Mapping):
            return float(true_variances[(mask, arm)])
        return float(true_variances)

    m = model.m
    n_cells = len(cells)
    var_true = np.array([cell_var(mask, arm) for mask, arm, _ in cells])
    sizes = np.array([n for _, _, n in cells], dtype=float)
    mu = np.zeros(n_cells)
    if effects is not None:
        mu = np.array([float(effects.get((mask, arm), 0.0))
                       for mask, arm, _ in cells])

    w_diff = np.zeros((m, n_cells))
    for i in range(1, m + 1):
        bit = 1 << (i - 1)
        t_arm = treatment_arm(i, model.structure)
        n_t = counts.population_arm_count(i, t_arm)
        n_c = counts.population_arm_count(i, CONTROL_ARM)
        for c, (mask, arm, n) in enumerate(cells):
            if not mask & bit:
                continue
            if arm == t_arm:
                w_diff[i - 1, c] += n / n_t
            elif arm == CONTROL_ARM:
                w_diff[i - 1, c] -= n / n_c

    means = (mu + rng.standard_normal((replicates, n_cells))
             * np.sqrt(var_true / sizes))
    diffs = means @ w_diff.T

    if isinstance(regime, (KnownHomogeneous, KnownHeterogeneous)):
        stats = diffs / np.sqrt(model.variances)
    else:
        chunks = rng.chisquare(np.maximum(sizes - 1, 1.0),
                               (replicates, n_cells))
        cell_var_hat = var_true * chunks / np.maximum(sizes - 1.0, 1.0)
        if isinstance(regime, UnknownHomogeneous):
            df = pooled_df_from_counts(counts)
            coef = (sizes - 1.0) / df
            pooled = cell_var_hat @ coef
            stats = diffs / (np.sqrt(pooled)[:, None]
                             * np.sqrt(model.size_factors))
        else:
            v_weights = np.zeros((m, n_cells))
            for i in range(1, m + 1):
                bit = 1 << (i - 1)
                t_arm = treatment_arm(i, model.structure)
                n_t = counts.population_arm_count(i, t_arm)
                n_c = counts.population_arm_count(i, CONTROL_ARM)
                for c, (mask, arm, n) in enumerate(cells):
                    if not mask & bit:
                        continue
                    if arm == t_arm:
                        v_weights[i - 1, c] += n / n_t ** 2
                    elif arm == CONTROL_ARM:
                        v_weights[i - 1, c] += n / n_c ** 2
            v_hat = cell_var_hat @ v_weights.T
            stats = diffs / np.sqrt(v_hat)

    bounds = np.asarray(boundaries, dtype=float)
    reject = stats > bounds  # broadcasts a scalar or per-population bounds
    weighted = np.zeros(replicates)
    swer = {}
    masks = [mask for mask in range(1, 1 << m)
             if true_prev.weights[mask - 1] > 0.0]
    for mask in masks:
        idx = [i - 1 for i in StrataIndex(mask, m).members]
        any_rej = reject[:, idx].any(axis=1)
        rate = float(any_rej.mean())
        swer[mask] = rate
        weighted += true_prev.weights[mask - 1] * any_rej
    rates = np.array([swer[mask] for mask in masks])
    se = (float(np.std(weighted, ddof=1)) / math.sqrt(replicates)
          if replicates > 1 else 0.0)
    return McRates(pwer=float(weighted.mean()), se=se,
                   max_swer=float(rates.max()), mean_swer=float(rates.mean()),
                   swer=swer, replicates=replicates)


def _realized_design(spec: ScenarioSpec, rng, budget):
    """Draw one replicate's design.

    Returns (true_prev, counts, model, prev_hat, true_cells) where
    true_cells is the data-generating cell variance map (None for
    homogeneous regimes, where the scalar spec value applies).
    """
    probs = _draw_probabilities(spec, rng)
    bio = BiomarkerModel(probs, None if spec.dependence is None
                         else np.array(spec.dependence))
    true_prev = strata_probabilities(bio, budget)
    if spec.biomarker_mode == ONE_PINNED:
        true_prev = _pin_prevalences(true_prev, spec.pinned_stratum,
                                     spec.pinned_value)
    empty_p = (empty_probability(bio, budget)
               if spec.estimator == EST_MARGINAL else None)
    counts = sample_counts(true_prev, spec.n_total, rng, empty_prob=empty_p)
    counts = allocate(counts, spec.allocation, rng, spec.structure)

    true_cells = None
    if spec.variance_regime == KNOWN_HOM:
        regime = KnownHomogeneous(spec.known_variance)
    elif spec.variance_regime == KNOWN_HET:
        true_cells = _draw_cell_variances(counts, spec, rng)
        regime = KnownHeterogeneous(true_cells)
    elif spec.variance_regime == UNKNOWN_HOM:
        regime = UnknownHomogeneous(1.0, pooled_df_from_counts(counts))
    else:
        true_cells = _draw_cell_variances(counts, spec, rng)
        dataset = _draw_dataset(counts, true_cells, rng)
        regime = UnknownHeterogeneous(
            cell_variances={k: v[2] for k, v in dataset.items()},
            population_variances=_population_variances(
                counts, spec.structure, dataset))
    model = build_model(counts, regime, spec.structure)
    prev_hat = _estimate_prevalences(spec, counts)
    return true_prev, counts, model, prev_hat, true_cells


def _solve_boundary(spec: ScenarioSpec, prev_hat, model, budget):
    if spec.variance_regime == UNKNOWN_HET:
        return solve_per_population(prev_hat, model, spec.alpha, budget,
                                    weighted_budget=True)
    if spec.estimator == EST_MLE_MIN_PREV:
        return solve_min_adjusted(prev_hat, model, spec.alpha, spec.pi_min,
                                  budget, weighted_budget=True)
    return solve_equal(prev_hat, model, spec.alpha, budget,
                       weighted_budget=True)


def _run_replicate(spec: ScenarioSpec, index: int, budget) -> RepRecord:
    rng = replicate_rng(spec.seed, index)
    true_prev, counts, model, prev_hat, true_cells = _realized_design(
        spec, rng, budget)
    solved = _solve_boundary(spec, prev_hat, model, budget)
    if spec.variance_regime == UNKNOWN_HET:
        mc = mc_true_pwer(model, solved.boundary, true_prev,
                          spec.data_replicates, rng,
                          true_variances=true_cells)
        return RepRecord(
            replicate=index, true_pwer=mc.pwer, max_swer=mc.max_swer,
            mean_swer=mc.mean_swer,
            boundary=tuple(float(c) for c in solved.boundary),
            boundary_components=dict(solved.components),
            had_empty_stratum=bool((counts.sizes == 0).any()),
            counts_digest=counts.digest(), mc_se=mc.se)
    report = error_rates(solved.boundary, true_prev, model, budget,
                         weighted_budget=True)
    return RepRecord(
        replicate=index, true_pwer=report.pwer, max_swer=report.max_swer,
        mean_swer=report.mean_swer, boundary=float(solved.boundary),
        boundary_components=dict(solved.components),
        had_empty_stratum=bool((counts.sizes == 0).any()),
        counts_digest=counts.digest())


def _run_chunk(spec: ScenarioSpec, start: int, stop: int, budget):
    records = []
    failures = Counter()
    for index in range(start, stop):
        try:
            records.append(_run_replicate(spec, index, budget))
        except tuple(_REPLICATE_FAILURES) as exc:
            failures[_REPLICATE_FAILURES[type(exc)]] += 1
    return records, failures


def run_scenario(spec: ScenarioSpec, threads: int = 1,
                 budget: Budget | None = None) -> ScenarioResult:
    """Run all replicates of a scenario.

    Boundaries are solved from each replicate's estimated prevalences; the
    recorded rates plug the true prevalences into the same design (or, under
    unknown heterogeneous variances, simulate them).  Rates refer to the
    worst-case parameter point (all effects zero); replicate failures are
    counted by reason, never silently dropped.
    """
    budget = budget or Budget()
    if threads <= 1 or spec.replicates == 1:
        records, failures = _run_chunk(spec, 0, spec.replicates, budget)
        return ScenarioResult(spec, records, failures)
    chunk = max(1, math.ceil(spec.replicates / (threads * 4)))
    spans = [(start, min(start + chunk, spec.replicates))
             for start in range(0, spec.replicates, chunk)]
    records: list[RepRecord] = []
    failures: Counter = Counter()
    args = [(spec, a, b, budget) for a, b in spans]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        for recs, fails in pool.map(_run_chunk, *zip(*args)):
            records.extend(recs)
            failures.update(fails)
    records.sort(key=lambda r: r.replicate)
    return ScenarioResult(spec, records, failures)


@dataclass(frozen=True)
class LfcReport:
    """Comparison of data-level error rates under shifted vs zero effects."""

    pwer_shifted: float
    pwer_null: float
    difference: float
    se: float
    violation: bool
    replicates: int


def _effect_shifts(spec: ScenarioSpec) -> dict[tuple[int, str], float]:
    effects = spec.effects or {}
    shifts = {}
    for (mask, arm) in effects:
        if arm == CONTROL_ARM:
            continue
        shifts[(mask, arm)] = (effects.get((mask, arm), 0.0)
                               - effects.get((mask, CONTROL_ARM), 0.0))
    return shifts


def lfc_check(spec_shifted: ScenarioSpec, spec_null: ScenarioSpec,
              replicates: int | None = None,
              budget: Budget | None = None) -> LfcReport:
    """Empirical check that nonpositive effects cannot raise the error rate.

    Both specs must agree except in their effects, all treatment-vs-control
    shifts must be <= 0, and the zero-effect spec is the reference.  One
    design is drawn and solved per the common spec; both effect settings are
    then simulated at the same boundary.  A violation is flagged only when
    the difference exceeds three standard errors.
    """
    if replace(spec_shifted, effects=None) != replace(spec_null, effects=None):
        raise SpecificationError(
            "the two specs must be identical apart from their effects")
    for shift in _effect_shifts(spec_null).values():
        if shift != 0.0:
            raise SpecificationError(
                "the reference spec must have zero effects")
    for (mask, arm), shift in _effect_shifts(spec_shifted).items():
        if shift > 1e-12:
            raise SpecificationError(
                f"positive effect for (stratum {mask}, arm {arm}); the "
                "worst-case comparison needs all shifts <= 0")
    budget = budget or Budget()
    reps = replicates or spec_shifted.data_replicates
    rng = replicate_rng(spec_shifted.seed, 0)
    common = replace(spec_shifted, effects=None)
    true_prev, counts, model, prev_hat, true_cells = _realized_design(
        common, rng, budget)
    solved = _solve_boundary(common, prev_hat, model, budget)
    mc_shift = mc_true_pwer(model, solved.boundary, true_prev, reps,
                            replicate_rng(spec_shifted.seed, 1),
                            true_variances=true_cells,
                            effects=spec_shifted.effects)
    mc_null = mc_true_pwer(model, solved.boundary, true_prev, reps,
                           replicate_rng(spec_shifted.seed, 2),
                           true_variances=true_cells,
                           effects=spec_null.effects)
    diff = mc_shift.pwer - mc_null.pwer
    se = math.sqrt(mc_shift.se ** 2 + mc_null.se ** 2)
    return LfcReport(pwer_shifted=mc_shift.pwer, pwer_null=mc_null.pwer,
                     difference=diff, se=se,
                     violation=bool(diff > 3.0 * se), replicates=reps)


@dataclass(frozen=True)
class PairedRecord:
    """One qualifying replicate of the unobserved-strata study."""

    replicate: int
    boundary: float
    boundary_floored: float
    true_pwer: float
    true_pwer_floored: float
    max_swer: float
    max_swer_floored: float
    mean_swer: float
    mean_swer_floored: float
    counts_digest: str


@dataclass(frozen=True)
class EmptyStratumStudy:
    records: list[PairedRecord]
    failures: Counter
    total_replicates: int

    def summaries(self) -> dict[str, tuple[SummaryStats, SummaryStats]]:
        out = {}
        for name in ("true_pwer", "max_swer", "mean_swer"):
            plain = summarize([getattr(r, name) for r in self.records])
            floored = summarize([getattr(r, name + "_floored")
                                 for r in self.records])
            out[name] = (plain, floored)
        return out


def _empty_stratum_chunk(spec, pi_min, start, stop, budget):
    records = []
    failures = Counter()
    for index in range(start, stop):
        rng = replicate_rng(spec.seed, index)
        try:
            true_prev, counts, model, prev_hat, _ = _realized_design(
                spec, rng, budget)
            if not (counts.sizes == 0).any():
                continue
            plain = solve_equal(prev_hat, model, spec.alpha, budget,
                                weighted_budget=True)
            floored_prev = min_prevalence_adjust(prev_hat, pi_min)
            floored = solve_equal(floored_prev, model, spec.alpha, budget,
                                  weighted_budget=True)
            at_plain = error_rates(plain.boundary, true_prev, model, budget,
                                   weighted_budget=True)
            at_floored = error_rates(floored.boundary, true_prev, model,
                                     budget, weighted_budget=True)
        except tuple(_REPLICATE_FAILURES) as exc:
            failures[_REPLICATE_FAILURES[type(exc)]] += 1
            continue
        records.append(PairedRecord(
            replicate=index,
            boundary=float(plain.boundary),
            boundary_floored=float(floored.boundary),
            true_pwer=at_plain.pwer, true_pwer_floored=at_floored.pwer,
            max_swer=at_plain.max_swer, max_swer_floored=at_floored.max_swer,
            mean_swer=at_plain.mean_swer,
            mean_swer_floored=at_floored.mean_swer,
            counts_digest=counts.digest()))
    return records, failures


def empty_stratum_study(spec: ScenarioSpec, pi_min: float | None = None,
                        threads: int = 1,
                        budget: Budget | None = None) -> EmptyStratumStudy:
    """Paired comparison of plain vs floored-prevalence boundaries on the
    replicates where at least one stratum went unobserved.

    The scenario must restrict biomarker probabilities below 0.1 so that
    thin strata actually occur; rates at both boundaries are evaluated
    against the true prevalences, so unobserved strata count.
    """
    if spec.biomarker_mode != UNIFORM_RANDOM or spec.prob_range[1] > 0.1:
        raise ConfigurationError(
            "the study needs uniform biomarker probabilities restricted to "
            "(0, 0.1]")
    if spec.variance_regime == UNKNOWN_HET:
        raise SpecificationError(
            "analytic rate evaluation is unavailable under unknown "
            "heterogeneous variances")
    if spec.estimator != EST_MLE:
        raise ConfigurationError(
            "the study compares boundaries built on the multinomial "
            "estimate; use the mle estimator")
    budget = budget or Budget()
    if threads <= 1:
        records, failures = _empty_stratum_chunk(spec, pi_min, 0,
                                                 spec.replicates, budget)
    else:
        chunk = max(1, math.ceil(spec.replicates / (threads * 4)))
        spans = [(start, min(start + chunk, spec.replicates))
                 for start in range(0, spec.replicates, chunk)]
        records = []
        failures = Counter()
        args = [(spec, pi_min, a, b, budget) for a, b in spans]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for recs, fails in pool.map(_empty_stratum_chunk, *zip(*args)):
                records.extend(recs)
                failures.update(fails)
        records.sort(key=lambda r: r.replicate)
    if not records:
        raise ConfigurationError(
            "no replicate left a stratum unobserved; increase the replicate "
            "budget or lower the biomarker probabilities")
    return EmptyStratumStudy(records, failures, spec.replicates)
