"""Error-rate evaluation and critical-value solving.

The population-wise error rate at a common boundary c is the
prevalence-weighted average of the per-stratum familywise rates
1 - F(c, ..., c) over the correlation submatrix of each stratum; it is
continuous and strictly decreasing in c, so boundaries are found by
bracketed bisection, which is robust to the (deterministic, seeded)
quasi-Monte Carlo noise of the integrator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BudgetExceededError,
    ConfigurationError,
    SolverError,
    SpecificationError,
)
from .mvdist import Budget, equicoordinate_cdf
from .design import DesignModel
from .prevalence import min_prevalence_adjust
from .strata import PrevalenceVector, StrataIndex

MODE_EQUAL = "equal"
MODE_PER_POPULATION = "per_population"
MODE_MIN_PREVALENCE = "min_prevalence_adjusted"

_USE_MODEL_DF = object()

# per-stratum tolerance cap when budgets are weighted by prevalence
_WEIGHTED_TOL_CAP = 1e-3


@dataclass(frozen=True)
class ErrorRateReport:
    """Error rates at one boundary.

    ``swer`` maps stratum mask -> familywise rate for the strata carrying
    positive weight in the supplied prevalence vector; ``numerical_error``
    bounds the accumulated integration error of ``pwer``.
    """

    pwer: float
    swer: dict[int, float]
    max_swer: float
    mean_swer: float
    numerical_error: float


@dataclass(frozen=True)
class CriticalValueResult:
    """Solved rejection boundary (scalar, or one per population)."""

    boundary: float | np.ndarray
    achieved: float | np.ndarray
    alpha: float
    iterations: int
    bracket: tuple[float, float]
    mode: str
    numerical_error: float
    components: dict[str, float] = field(default_factory=dict)


def _stratum_tolerance(budget: Budget, weight: float, n_positive: int,
                       weighted: bool) -> Budget:
    if not weighted:
        return budget
    tol = budget.abs_tol / (n_positive * weight)
    tol = min(max(tol, budget.abs_tol), _WEIGHTED_TOL_CAP)
    return replace(budget, abs_tol=tol)


def error_rates(boundary: float, prev: PrevalenceVector, model: DesignModel,
                budget: Budget | None = None, *,
                df: float | None | object = _USE_MODEL_DF,
                weighted_budget: bool = False) -> ErrorRateReport:
    """PWER and per-stratum familywise rates at a common boundary.

    Max and mean rates run over the strata with positive weight in
    ``prev``; pass the true prevalence vector to include strata the sample
    missed.  ``df`` overrides the model's degrees of freedom (used by the
    per-population approximate procedure).
    """
    if prev.m != model.m:
        raise ConfigurationError("prevalence vector and model disagree on m")
    if df is _USE_MODEL_DF:
        if model.satterthwaite is not None:
            raise SpecificationError(
                "the joint law under unknown heterogeneous variances is not "
                "available; pass an explicit df (per-population procedure) "
                "or use the simulation-based rate estimate")
        df = model.df
    budget = budget or Budget()
    c = float(boundary)

    masks = [mask for mask in range(1, 1 << model.m)
             if prev.weights[mask - 1] > 0.0]
    swer: dict[int, float] = {}
    pwer = 0.0
    num_err = 0.0
    for mask in masks:
        w = float(prev.weights[mask - 1])
        members = StrataIndex(mask, model.m).members
        sub = model.correlation.submatrix([i - 1 for i in members])
        try:
            res = equicoordinate_cdf(
                c, sub, df, _stratum_tolerance(budget, w, len(masks),
                                               weighted_budget))
        except BudgetExceededError as exc:
            exc.partial_report = None
            if swer:
                done = np.array(list(swer.values()))
                exc.partial_report = ErrorRateReport(
                    pwer=pwer, swer=dict(swer), max_swer=float(done.max()),
                    mean_swer=float(done.mean()), numerical_error=num_err)
            raise
        rate = min(max(1.0 - res.value, 0.0), 1.0)
        swer[mask] = rate
        pwer += w * rate
        num_err += w * res.error_estimate
    rates = np.array([swer[mask] for mask in masks])
    return ErrorRateReport(
        pwer=pwer, swer=swer,
        max_swer=float(rates.max()), mean_swer=float(rates.mean()),
        numerical_error=num_err)


def solve_equal(prev: PrevalenceVector, model: DesignModel, alpha: float,
                budget: Budget | None = None, *,
                df: float | None | object = _USE_MODEL_DF,
                weighted_budget: bool = False,
                boundary_tol: float = 1e-8, rate_tol: float = 1e-6,
                bracket: tuple[float, float] = (0.0, 12.0)
                ) -> CriticalValueResult:
    """Smallest common boundary whose PWER does not exceed alpha.

    Stops when the bracket is narrower than ``boundary_tol`` or the
    achieved rate is within ``rate_tol`` of alpha, whichever binds first.
    """
    if not 0.0 < alpha <= 0.5:
        raise ConfigurationError(f"alpha must be in (0, 0.5], got {alpha}")
    budget = budget or Budget()

    def pwer_at(c, tol):
        b = budget if tol <= budget.abs_tol else replace(budget, abs_tol=tol)
        return error_rates(c, prev, model, b, df=df,
                           weighted_budget=weighted_budget)

    lo, hi = bracket
    report = pwer_at(hi, budget.abs_tol)
    extensions = 0
    while report.pwer > alpha:
        if extensions >= 6:
            raise SolverError(
                f"no boundary up to {hi} brings the rate below {alpha}")
        lo, hi = hi, hi * 2.0
        report = pwer_at(hi, budget.abs_tol)
        extensions += 1

    # invariant: c == hi is the smallest boundary known to satisfy the level.
    # Away from the root a loose integration tolerance decides the sign just
    # as well; evaluations landing within twice that tolerance of alpha are
    # redone at full precision before any decision is taken.
    iterations = 0
    c, tight = hi, True
    while hi - lo > boundary_tol:
        mid = 0.5 * (lo + hi)
        mid_tol = min(1e-3, max(budget.abs_tol, 3e-3 * (hi - lo)))
        report_mid = pwer_at(mid, mid_tol)
        mid_tight = mid_tol <= budget.abs_tol
        if not mid_tight and abs(report_mid.pwer - alpha) <= 2.0 * mid_tol:
            report_mid = pwer_at(mid, budget.abs_tol)
            mid_tight = True
        iterations += 1
        if mid_tight and abs(report_mid.pwer - alpha) <= rate_tol:
            c, report, tight = mid, report_mid, True
            break
        if report_mid.pwer > alpha:
            lo = mid
        else:
            hi = mid
            c, report, tight = mid, report_mid, mid_tight
    if not tight:
        report = pwer_at(c, budget.abs_tol)
    return CriticalValueResult(
        boundary=c, achieved=report.pwer, alpha=alpha, iterations=iterations,
        bracket=(lo, hi), mode=MODE_EQUAL,
        numerical_error=report.numerical_error)


def solve_min_adjusted(prev_hat: PrevalenceVector, model: DesignModel,
                       alpha: float, pi_min: float | None = None,
                       budget: Budget | None = None, *,
                       weighted_budget: bool = False) -> CriticalValueResult:
    """Boundary under the minimal-prevalence floor.

    Solves once from the estimated weights and once from the floored,
    rescaled weights, then keeps the larger boundary (the floored one is
    not necessarily larger when low-overlap strata fall below the floor).
    """
    plain = solve_equal(prev_hat, model, alpha, budget,
                        weighted_budget=weighted_budget)
    adjusted_prev = min_prevalence_adjust(prev_hat, pi_min)
    adjusted = solve_equal(adjusted_prev, model, alpha, budget,
                           weighted_budget=weighted_budget)
    winner = adjusted if adjusted.boundary >= plain.boundary else plain
    return CriticalValueResult(
        boundary=winner.boundary, achieved=winner.achieved, alpha=alpha,
        iterations=plain.iterations + adjusted.iterations,
        bracket=winner.bracket, mode=MODE_MIN_PREVALENCE,
        numerical_error=winner.numerical_error,
        components={"boundary_unadjusted": float(plain.boundary),
                    "boundary_adjusted": float(adjusted.boundary)})


def solve_per_population(prev_hat: PrevalenceVector, model: DesignModel,
                         alpha: float, budget: Budget | None = None, *,
                         weighted_budget: bool = False) -> CriticalValueResult:
    """One approximate boundary per population under unknown heterogeneous
    variances: each solves the common-boundary condition with that
    population's Satterthwaite degrees of freedom and plug-in correlations.
    """
    if model.satterthwaite is None:
        raise SpecificationError(
            "per-population boundaries need an unknown-heterogeneous model "
            "with Satterthwaite degrees of freedom")
    boundaries = np.empty(model.m)
    achieved = np.empty(model.m)
    iterations = 0
    num_err = 0.0
    last_bracket = (0.0, 12.0)
    for i in range(model.m):
        res = solve_equal(prev_hat, model, alpha, budget,
                          df=float(model.satterthwaite[i]),
                          weighted_budget=weighted_budget)
        boundaries[i] = res.boundary
        achieved[i] = res.achieved
        iterations += res.iterations
        num_err = max(num_err, res.numerical_error)
        last_bracket = res.bracket
    return CriticalValueResult(
        boundary=boundaries, achieved=achieved, alpha=alpha,
        iterations=iterations, bracket=last_bracket,
        mode=MODE_PER_POPULATION, numerical_error=num_err)
