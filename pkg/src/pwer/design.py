"""Joint distribution of the per-population test statistics.

Each population i compares its treatment arm against the shared control
with a standardized mean difference.  Conditional on the realized counts,
the statistic vector is multivariate normal (known variances) or
multivariate t (pooled variance, df = N - s); with unknown cell-level
variances the joint law is not available and the model instead carries
plug-in correlations plus per-population Satterthwaite degrees of freedom
for the approximate procedure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    SpecificationError,
    UndefinedStatisticError,
    VarianceInestimableError,
)
from .mvdist import CorrelationMatrix
from .strata import (
    ALL_DIFFERENT,
    CONTROL_ARM,
    CountTable,
    enumerate_strata,
    treatment_arm,
)


@dataclass(frozen=True)
class KnownHomogeneous:
    """One known residual variance shared by every cell."""

    variance: float = 1.0

    def __post_init__(self):
        if self.variance <= 0:
            raise ConfigurationError("variance must be positive")


@dataclass(frozen=True)
class KnownHeterogeneous:
    """Known residual variance per (stratum mask, arm) cell."""

    cell_variances: Mapping[tuple[int, str], float]

    def __post_init__(self):
        if any(v <= 0 for v in self.cell_variances.values()):
            raise ConfigurationError("cell variances must be positive")
        object.__setattr__(self, "cell_variances", dict(self.cell_variances))


@dataclass(frozen=True)
class UnknownHomogeneous:
    """Pooled variance estimate with its degrees of freedom."""

    variance_estimate: float = 1.0
    df: int = 1

    def __post_init__(self):
        if self.variance_estimate <= 0:
            raise ConfigurationError("pooled variance must be positive")
        if self.df < 1:
            raise ConfigurationError("pooled degrees of freedom must be >= 1")


@dataclass(frozen=True)
class UnknownHeterogeneous:
    """Cell-level variance estimates plus population-level summaries.

    ``population_variances`` maps population -> (treatment-arm variance,
    control-arm variance) of all its responses pooled across strata; these
    feed the Satterthwaite degrees of freedom.
    """

    cell_variances: Mapping[tuple[int, str], float]
    population_variances: Mapping[int, tuple[float, float]]

    def __post_init__(self):
        if any(v <= 0 for v in self.cell_variances.values()):
            raise ConfigurationError("cell variances must be positive")
        if any(vt <= 0 or vc <= 0
               for vt, vc in self.population_variances.values()):
            raise ConfigurationError("population variances must be positive")
        object.__setattr__(self, "cell_variances", dict(self.cell_variances))
        object.__setattr__(self, "population_variances",
                           dict(self.population_variances))


VarianceRegime = (KnownHomogeneous | KnownHeterogeneous
                  | UnknownHomogeneous | UnknownHeterogeneous)


@dataclass(frozen=True)
class DesignModel:
    """Everything the error-rate computations need about one realized trial."""

    m: int
    counts: CountTable
    regime: VarianceRegime
    structure: str
    variances: np.ndarray          # per-population variance of the mean difference
    size_factors: np.ndarray | None  # 1/n_treat + 1/n_control (homogeneous only)
    correlation: CorrelationMatrix
    df: float | None               # None for Gaussian / unknown-heterogeneous
    satterthwaite: np.ndarray | None = None
    noncentrality: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.noncentrality is None:
            object.__setattr__(self, "noncentrality", np.zeros(self.m))

    @property
    def is_t(self) -> bool:
        return self.df is not None


def _cell_variance(regime, mask: int, arm: str) -> float:
    if isinstance(regime, KnownHomogeneous):
        return regime.variance
    if isinstance(regime, UnknownHomogeneous):
        return regime.variance_estimate
    try:
        return regime.cell_variances[(mask, arm)]
    except KeyError:
        raise SpecificationError(
            f"no variance supplied for populated cell (stratum {mask}, "
            f"arm {arm})") from None


def build_model(counts: CountTable, regime: VarianceRegime,
                structure: str = ALL_DIFFERENT) -> DesignModel:
    """Assemble variances, correlations and degrees of freedom from counts."""
    m = counts.m
    if counts.arms is None:
        raise ConfigurationError("counts must be allocated to arms first")
    homogeneous = isinstance(regime, (KnownHomogeneous, UnknownHomogeneous))

    n_treat = np.empty(m, dtype=np.int64)
    n_ctrl = np.empty(m, dtype=np.int64)
    for i in range(1, m + 1):
        n_treat[i - 1] = counts.population_arm_count(i, treatment_arm(i, structure))
        n_ctrl[i - 1] = counts.population_arm_count(i, CONTROL_ARM)
        if n_treat[i - 1] < 1:
            raise UndefinedStatisticError(
                f"population {i} has no patients on its treatment arm")
        if n_ctrl[i - 1] < 1:
            raise UndefinedStatisticError(
                f"population {i} has no patients on the control arm")

    size_factors = 1.0 / n_treat + 1.0 / n_ctrl
    if homogeneous:
        sigma2 = (regime.variance if isinstance(regime, KnownHomogeneous)
                  else regime.variance_estimate)
        variances = sigma2 * size_factors
    else:
        variances = np.zeros(m)
        for stratum in enumerate_strata(m):
            mask = stratum.mask
            for i in stratum.members:
                t_arm = treatment_arm(i, structure)
                nt = counts.arm_count(mask, t_arm)
                nc = counts.arm_count(mask, CONTROL_ARM)
                if nt:
                    variances[i - 1] += (nt * _cell_variance(regime, mask, t_arm)
                                         / n_treat[i - 1] ** 2)
                if nc:
                    variances[i - 1] += (nc * _cell_variance(regime, mask,
                                                             CONTROL_ARM)
                                         / n_ctrl[i - 1] ** 2)

    # with all treatments different only shared controls correlate; a single
    # shared treatment adds its own overlap terms.  In the homogeneous
    # all-different case sigma^2 cancels, so it is stripped from both the
    # numerator and the standardization.
    strip_sigma = homogeneous and structure == ALL_DIFFERENT
    scale = np.sqrt(size_factors) if strip_sigma else np.sqrt(variances)
    corr = np.eye(m)
    for stratum in enumerate_strata(m):
        if stratum.size < 2:
            continue
        mask = stratum.mask
        members = stratum.members
        nc = counts.arm_count(mask, CONTROL_ARM)
        shared = (treatment_arm(members[0], structure)
                  if structure != ALL_DIFFERENT else None)
        nt = counts.arm_count(mask, shared) if shared else 0
        for ai, i in enumerate(members):
            for j in members[ai + 1:]:
                num = 0.0
                if nc:
                    var_c = (1.0 if strip_sigma
                             else _cell_variance(regime, mask, CONTROL_ARM))
                    num += nc * var_c / (n_ctrl[i - 1] * n_ctrl[j - 1])
                if nt:
                    num += (nt * _cell_variance(regime, mask, shared)
                            / (n_treat[i - 1] * n_treat[j - 1]))
                num /= scale[i - 1] * scale[j - 1]
                corr[i - 1, j - 1] += num
                corr[j - 1, i - 1] += num

    df = None
    satter = None
    if isinstance(regime, UnknownHomogeneous):
        df = float(regime.df)
    elif isinstance(regime, UnknownHeterogeneous):
        satter = np.empty(m)
        for i in range(1, m + 1):
            try:
                var_t, var_c = regime.population_variances[i]
            except KeyError:
                raise SpecificationError(
                    f"no population-level variances supplied for population {i}"
                ) from None
            satter[i - 1] = satterthwaite_df(var_t, int(n_treat[i - 1]),
                                             var_c, int(n_ctrl[i - 1]))

    return DesignModel(
        m=m, counts=counts, regime=regime, structure=structure,
        variances=np.asarray(variances, dtype=np.float64),
        size_factors=size_factors if homogeneous else None,
        correlation=CorrelationMatrix(corr), df=df, satterthwaite=satter)


@dataclass(frozen=True)
class PooledVariance:
    estimate: float
    contributing_cells: int
    df: int


def pooled_variance(samples: Mapping[tuple[int, str], Sequence[float]]
                    ) -> PooledVariance:
    """Pooled residual variance over all cells with at least two responses.

    df = N - s where N counts every observation and s the contributing
    cells; singleton cells add nothing to the numerator.
    """
    total = 0
    cells = 0
    weighted = 0.0
    for values in samples.values():
        x = np.asarray(values, dtype=np.float64)
        total += x.size
        if x.size > 1:
            cells += 1
            weighted += (x.size - 1) * float(np.var(x, ddof=1))
    if cells == 0:
        raise VarianceInestimableError(
            "no cell holds two or more observations")
    df = total - cells
    if df < 1:
        raise VarianceInestimableError(f"pooled df would be {df}")
    return PooledVariance(weighted / df, cells, df)


def pooled_df_from_counts(counts: CountTable) -> int:
    """Degrees of freedom N - s implied by the allocated counts alone."""
    if counts.arms is None:
        raise ConfigurationError("counts must be allocated to arms first")
    cells = sum(1 for cells in counts.arms.values()
                for n in cells.values() if n > 1)
    if cells == 0:
        raise VarianceInestimableError(
            "no cell holds two or more observations")
    df = counts.total - cells
    if df < 1:
        raise VarianceInestimableError(f"pooled df would be {df}")
    return df


def satterthwaite_df(var_treat: float, n_treat: int,
                     var_control: float, n_control: int) -> float:
    """Effective degrees of freedom for a two-sample variance combination."""
    if n_treat < 2 or n_control < 2:
        raise VarianceInestimableError(
            "both arms need at least two observations for Satterthwaite df")
    if var_treat <= 0 or var_control <= 0:
        raise ConfigurationError("variances must be positive")
    a = var_treat / n_treat
    b = var_control / n_control
    return (a + b) ** 2 / (a * a / (n_treat - 1) + b * b / (n_control - 1))


def noncentrality(model: DesignModel,
                  effects: Mapping[tuple[int, str], float]) -> np.ndarray:
    """Location of the statistic vector under given cell means.

    ``effects`` maps (stratum mask, arm) to the mean response; every
    populated cell of each population's two arms must be covered.
    """
    counts = model.counts
    nu = np.zeros(model.m)
    for i in range(1, model.m + 1):
        t_arm = treatment_arm(i, model.structure)
        n_t = counts.population_arm_count(i, t_arm)
        n_c = counts.population_arm_count(i, CONTROL_ARM)
        acc = 0.0
        bit = 1 << (i - 1)
        for mask in range(1, 1 << model.m):
            if not mask & bit:
                continue
            for arm, n_pop, sign in ((t_arm, n_t, 1.0), (CONTROL_ARM, n_c, -1.0)):
                n_cell = counts.arm_count(mask, arm)
                if n_cell == 0:
                    continue
                try:
                    mu = effects[(mask, arm)]
                except KeyError:
                    raise SpecificationError(
                        f"no mean supplied for populated cell (stratum {mask}, "
                        f"arm {arm})") from None
                acc += sign * n_cell / n_pop * mu
        nu[i - 1] = acc / math.sqrt(model.variances[i - 1])
    return nu
