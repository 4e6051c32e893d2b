"""Prevalence estimators and the minimal-prevalence adjustment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateModelError,
    EmptySampleError,
    InfeasibleAdjustmentError,
)
from .strata import CountTable, PrevalenceVector


def mle(counts: CountTable) -> PrevalenceVector:
    """Multinomial maximum-likelihood estimate: stratum share of the sample."""
    n = counts.total
    if n < 1:
        raise EmptySampleError("cannot estimate prevalences from zero patients")
    return PrevalenceVector(counts.m, counts.sizes / n)


@dataclass(frozen=True)
class MarginalInput:
    """Screening-level frequencies feeding the marginal-product estimator.

    Built from a count table that recorded the biomarker-free screenees;
    ``tau_empty`` is their share of everyone screened and ``marginals`` are
    the per-biomarker expression frequencies.
    """

    m: int
    tau_empty: float
    marginals: np.ndarray

    @classmethod
    def from_counts(cls, counts: CountTable) -> "MarginalInput":
        if counts.n_empty is None:
            raise ConfigurationError(
                "marginal estimation needs the screened biomarker-free count")
        screened = counts.total + counts.n_empty
        if screened < 1:
            raise EmptySampleError("no screened patients")
        tau = counts.sizes / screened
        marg = np.array([
            sum(tau[mask - 1] for mask in range(1, 1 << counts.m)
                if mask >> i & 1)
            for i in range(counts.m)])
        return cls(counts.m, counts.n_empty / screened, marg)


def marginal(input: MarginalInput,
             use_model_denominator: bool = False) -> PrevalenceVector:
    """Independence-model estimate from marginal biomarker frequencies.

    The product-form weights are renormalized to an exact unit sum, which
    makes the two candidate denominators (observed marker-free share vs the
    model-implied one, toggled by ``use_model_denominator``) equivalent up
    to the reported residual; see :func:`marginal_with_residual`.
    """
    return marginal_with_residual(input, use_model_denominator)[0]


def marginal_with_residual(input: MarginalInput,
                           use_model_denominator: bool = False
                           ) -> tuple[PrevalenceVector, float]:
    """Marginal estimate plus the pre-normalization deviation from 1."""
    m = input.m
    p = np.asarray(input.marginals, dtype=np.float64)
    if use_model_denominator:
        denom = 1.0 - float(np.prod(1.0 - p))
    else:
        denom = 1.0 - input.tau_empty
    if denom <= 1e-12:
        raise DegenerateModelError(
            "all screened patients are biomarker-free; marginal estimator "
            "is undefined")
    raw = np.empty((1 << m) - 1)
    for mask in range(1, 1 << m):
        inside = [i for i in range(m) if mask >> i & 1]
        outside = [i for i in range(m) if not mask >> i & 1]
        raw[mask - 1] = np.prod(p[inside]) * np.prod(1.0 - p[outside]) / denom
    residual = float(raw.sum() - 1.0)
    return PrevalenceVector.normalized(m, raw), residual


def default_min_prevalence(m: int) -> float:
    """Half the weight each stratum would carry under an equal split."""
    return 1.0 / (2 ** (m + 1) - 2)


def min_prevalence_adjust(prev: PrevalenceVector,
                          pi_min: float | None = None) -> PrevalenceVector:
    """Raise every stratum below the floor to exactly the floor.

    One non-iterative pass: strata below ``pi_min`` are set to it, the rest
    are scaled down proportionally.  A rescaled stratum may itself end
    below the floor; it is left as-is, keeping the rule deterministic.
    """
    m = prev.m
    if pi_min is None:
        pi_min = default_min_prevalence(m)
    n_strata = (1 << m) - 1
    if not 0.0 < pi_min < 1.0 / n_strata:
        raise ConfigurationError(
            f"pi_min must lie in (0, 1/{n_strata}), got {pi_min}")
    w = prev.weights
    low = w < pi_min
    n_low = int(low.sum())
    if n_low == 0:
        return prev
    floor_mass = n_low * pi_min
    if floor_mass >= 1.0:
        raise InfeasibleAdjustmentError(
            f"{n_low} strata at the floor would carry mass {floor_mass:.3f}")
    rest = w[~low].sum()
    out = np.where(low, pi_min, w * ((1.0 - floor_mass) / rest))
    return PrevalenceVector(m, out)
