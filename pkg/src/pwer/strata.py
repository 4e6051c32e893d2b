"""Partition of overlapping populations into disjoint strata.

Populations are indexed 1..m; a stratum is the set of patients belonging to
exactly the populations in one nonempty subset, encoded as an m-bit mask.
Within a stratum the eligible arms are the treatments of its populations
plus the shared control.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError, DegenerateModelError, MatrixError
from .mvdist import Budget, CorrelationMatrix, mvn_rectangle

MAX_POPULATIONS = 16

CONTROL_ARM = "C"
SHARED_TREATMENT_ARM = "T"

ALL_DIFFERENT = "all_different"
SINGLE_TREATMENT = "single_treatment"

STRATIFIED = "stratified"
RANDOM_ARRIVAL = "random_arrival"
PRAGMATIC_ARRIVAL = "pragmatic_arrival"

_SUM_TOL = 1e-12


@dataclass(frozen=True, order=True)
class StrataIndex:
    """One cell of the partition: a nonempty subset of populations."""

    mask: int
    m: int

    def __post_init__(self):
        if not 1 <= self.m <= MAX_POPULATIONS:
            raise ConfigurationError(
                f"population count must be in [1, {MAX_POPULATIONS}], got {self.m}")
        if not 0 < self.mask < (1 << self.m):
            raise ConfigurationError(
                f"stratum mask {self.mask} out of range for m={self.m}")

    @property
    def members(self) -> tuple[int, ...]:
        """1-based indices of the populations this stratum belongs to."""
        return tuple(i + 1 for i in range(self.m) if self.mask >> i & 1)

    @property
    def size(self) -> int:
        return bin(self.mask).count("1")

    def contains(self, population: int) -> bool:
        return bool(self.mask >> (population - 1) & 1)

    def label(self) -> str:
        return ",".join(str(i) for i in self.members)

    @classmethod
    def from_members(cls, members, m: int) -> "StrataIndex":
        mask = 0
        for i in members:
            if not 1 <= i <= m:
                raise ConfigurationError(f"population index {i} out of [1, {m}]")
            mask |= 1 << (i - 1)
        return cls(mask, m)

    def __str__(self):
        return "{" + self.label() + "}"


def enumerate_strata(m: int) -> list[StrataIndex]:
    """All 2^m - 1 nonempty subsets in ascending mask order."""
    if not 1 <= m <= MAX_POPULATIONS:
        raise ConfigurationError(
            f"population count must be in [1, {MAX_POPULATIONS}], got {m}")
    return [StrataIndex(mask, m) for mask in range(1, 1 << m)]


def eligible_arms(stratum: StrataIndex, structure: str = ALL_DIFFERENT
                  ) -> tuple[str, ...]:
    """Arm labels available in a stratum, control first."""
    if structure == ALL_DIFFERENT:
        return (CONTROL_ARM,) + tuple(f"T{i}" for i in stratum.members)
    if structure == SINGLE_TREATMENT:
        return (CONTROL_ARM, SHARED_TREATMENT_ARM)
    raise ConfigurationError(f"unknown treatment structure {structure!r}")


def treatment_arm(population: int, structure: str = ALL_DIFFERENT) -> str:
    """Label of the treatment arm tested in a population."""
    if structure == ALL_DIFFERENT:
        return f"T{population}"
    if structure == SINGLE_TREATMENT:
        return SHARED_TREATMENT_ARM
    raise ConfigurationError(f"unknown treatment structure {structure!r}")


@dataclass(frozen=True)
class BiomarkerModel:
    """Binary biomarker expression model defining the populations.

    ``correlation`` is the latent Gaussian correlation of a dichotomized
    normal vector (marker i expressed iff its latent coordinate falls below
    the p_i-quantile); None means independent markers.
    """

    probabilities: tuple[float, ...]
    correlation: np.ndarray | None = None

    def __post_init__(self):
        p = tuple(float(x) for x in self.probabilities)
        object.__setattr__(self, "probabilities", p)
        m = len(p)
        if not 1 <= m <= MAX_POPULATIONS:
            raise ConfigurationError(
                f"need 1..{MAX_POPULATIONS} biomarkers, got {m}")
        if any(not 0.0 <= x <= 1.0 for x in p):
            raise ConfigurationError("expression probabilities must be in [0, 1]")
        if all(x == 0.0 for x in p):
            raise ConfigurationError(
                "at least one expression probability must be positive")
        if self.correlation is not None:
            r = np.asarray(self.correlation, dtype=np.float64)
            if r.shape != (m, m):
                raise ConfigurationError(
                    f"latent correlation must be {m}x{m}, got {r.shape}")
            try:
                r = CorrelationMatrix(r).values
            except MatrixError as exc:
                raise ConfigurationError(f"invalid latent correlation: {exc}")
            object.__setattr__(self, "correlation", r)

    @property
    def m(self) -> int:
        return len(self.probabilities)


@dataclass(frozen=True)
class PrevalenceVector:
    """Weights over all 2^m - 1 nonempty strata, summing to one.

    Zeros are stored explicitly so downstream adjustment rules can see
    unobserved strata.
    """

    m: int
    weights: np.ndarray  # index = mask - 1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != ((1 << self.m) - 1,):
            raise ConfigurationError(
                f"expected {(1 << self.m) - 1} weights for m={self.m}, "
                f"got shape {w.shape}")
        if np.any(w < -1e-15) or not np.all(np.isfinite(w)):
            raise ConfigurationError("weights must be nonnegative and finite")
        w = np.maximum(w, 0.0)
        if abs(w.sum() - 1.0) > _SUM_TOL:
            raise ConfigurationError(
                f"weights sum to {w.sum():.15f}, expected 1 within 1e-12")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def normalized(cls, m: int, raw) -> "PrevalenceVector":
        """Clip tiny negatives and rescale to an exact unit sum."""
        w = np.maximum(np.asarray(raw, dtype=np.float64), 0.0)
        total = w.sum()
        if total <= 0.0:
            raise ConfigurationError("cannot normalize an all-zero vector")
        return cls(m, w / total)

    def weight(self, stratum: StrataIndex) -> float:
        return float(self.weights[stratum.mask - 1])

    def items(self):
        for stratum in enumerate_strata(self.m):
            yield stratum, float(self.weights[stratum.mask - 1])

    def as_dict(self) -> dict[str, float]:
        return {s.label(): w for s, w in self.items()}


def strata_probabilities(model: BiomarkerModel,
                         budget: Budget | None = None) -> PrevalenceVector:
    """Strata weights implied by a biomarker model, conditioned on at least
    one marker being expressed (marker-free patients are screened out)."""
    m = model.m
    p = np.asarray(model.probabilities)
    raw = np.empty((1 << m) - 1)
    if model.correlation is None:
        for mask in range(1, 1 << m):
            inside = [i for i in range(m) if mask >> i & 1]
            outside = [i for i in range(m) if not mask >> i & 1]
            raw[mask - 1] = np.prod(p[inside]) * np.prod(1.0 - p[outside])
    else:
        sigma = CorrelationMatrix(model.correlation)
        thresholds = ndtri(np.clip(p, 0.0, 1.0))
        for mask in range(1, 1 << m):
            lower = np.where([mask >> i & 1 for i in range(m)],
                             -np.inf, thresholds)
            upper = np.where([mask >> i & 1 for i in range(m)],
                             thresholds, np.inf)
            raw[mask - 1] = mvn_rectangle(lower, upper, sigma, budget).value
    total = raw.sum()
    if total <= _SUM_TOL:
        raise DegenerateModelError(
            "the probability of expressing any biomarker is numerically zero")
    return PrevalenceVector.normalized(m, raw)


def empty_probability(model: BiomarkerModel,
                      budget: Budget | None = None) -> float:
    """Probability that a screened patient expresses no biomarker."""
    p = np.asarray(model.probabilities)
    if model.correlation is None:
        return float(np.prod(1.0 - p))
    sigma = CorrelationMatrix(model.correlation)
    thresholds = ndtri(np.clip(p, 0.0, 1.0))
    res = mvn_rectangle(thresholds, np.full(model.m, np.inf), sigma, budget)
    return res.value


@dataclass(frozen=True)
class CountTable:
    """Observed stratum sizes and, once allocated, per-arm counts.

    ``sizes`` is indexed by mask - 1; ``arms`` maps mask -> arm label ->
    count and is None until :func:`allocate` fills it.  ``n_empty`` is the
    number of screened, biomarker-free patients when that was recorded.
    """

    m: int
    sizes: np.ndarray
    arms: Mapping[int, Mapping[str, int]] | None = None
    n_empty: int | None = None

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=np.int64)
        if sizes.shape != ((1 << self.m) - 1,):
            raise ConfigurationError(
                f"expected {(1 << self.m) - 1} stratum sizes for m={self.m}")
        if np.any(sizes < 0):
            raise ConfigurationError("stratum sizes must be nonnegative")
        sizes.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)
        if self.n_empty is not None and self.n_empty < 0:
            raise ConfigurationError("empty-stratum count must be nonnegative")
        if self.arms is not None:
            arms = {int(mask): dict(cells) for mask, cells in self.arms.items()}
            for mask, cells in arms.items():
                if not 0 < mask < (1 << self.m):
                    raise ConfigurationError(f"arm table has bad mask {mask}")
                if any(n < 0 for n in cells.values()):
                    raise ConfigurationError("arm counts must be nonnegative")
                if sum(cells.values()) != int(sizes[mask - 1]):
                    raise ConfigurationError(
                        f"arm counts in stratum {mask} do not sum to its size")
            object.__setattr__(self, "arms", arms)

    @property
    def total(self) -> int:
        return int(self.sizes.sum())

    def size(self, stratum: StrataIndex) -> int:
        return int(self.sizes[stratum.mask - 1])

    def arm_count(self, mask: int, arm: str) -> int:
        if self.arms is None:
            raise ConfigurationError("counts have not been allocated to arms")
        return int(self.arms.get(mask, {}).get(arm, 0))

    def population_size(self, population: int) -> int:
        bit = 1 << (population - 1)
        return int(sum(self.sizes[mask - 1]
                       for mask in range(1, 1 << self.m) if mask & bit))

    def population_arm_count(self, population: int, arm: str) -> int:
        """Patients on an arm across all strata of one population."""
        bit = 1 << (population - 1)
        return sum(self.arm_count(mask, arm)
                   for mask in range(1, 1 << self.m) if mask & bit)

    def digest(self) -> str:
        import hashlib
        payload = repr((self.m, self.sizes.tolist(),
                        None if self.arms is None else sorted(
                            (k, sorted(v.items())) for k, v in self.arms.items()),
                        self.n_empty))
        return hashlib.sha1(payload.encode()).hexdigest()[:12]


def sample_counts(prev: PrevalenceVector, n_total: int,
                  rng: np.random.Generator,
                  empty_prob: float | None = None) -> CountTable:
    """Multinomial draw of stratum sizes for n_total enrolled patients.

    When ``empty_prob`` (unconditional probability of a marker-free
    screenee) is given, the number of screened-out patients is drawn as the
    negative-binomial count of failures before the n_total-th enrolment.
    """
    if n_total < 0:
        raise ConfigurationError("total sample size must be nonnegative")
    sizes = rng.multinomial(n_total, prev.weights)
    n_empty = None
    if empty_prob is not None:
        if not 0.0 <= empty_prob < 1.0:
            raise ConfigurationError("empty_prob must be in [0, 1)")
        if n_total == 0 or empty_prob == 0.0:
            n_empty = 0
        else:
            n_empty = int(rng.negative_binomial(n_total, 1.0 - empty_prob))
    return CountTable(prev.m, sizes, None, n_empty)


def allocate(counts: CountTable, policy: str, rng: np.random.Generator,
             structure: str = ALL_DIFFERENT) -> CountTable:
    """Assign each stratum's patients to its eligible arms.

    Stratified: even split with the remainder rotated one-per-arm starting
    at control, so the shared control cell is never the smallest.  Random
    arrival: each patient uniform over eligible arms.  Pragmatic arrival:
    each patient joins the eligible subtrial with currently fewest patients
    (ties uniform at random) and is split 1:1 between its treatment and
    control.
    """
    if policy == STRATIFIED:
        arms = _allocate_stratified(counts, structure)
    elif policy == RANDOM_ARRIVAL:
        arms = _allocate_random(counts, structure, rng)
    elif policy == PRAGMATIC_ARRIVAL:
        arms = _allocate_pragmatic(counts, structure, rng)
    else:
        raise ConfigurationError(f"unknown allocation policy {policy!r}")
    return CountTable(counts.m, counts.sizes, arms, counts.n_empty)


def _allocate_stratified(counts, structure):
    arms = {}
    for stratum in enumerate_strata(counts.m):
        n = counts.size(stratum)
        labels = eligible_arms(stratum, structure)
        base, rem = divmod(n, len(labels))
        arms[stratum.mask] = {
            lab: base + (1 if pos < rem else 0)
            for pos, lab in enumerate(labels)}
    return arms


def _allocate_random(counts, structure, rng):
    arms = {}
    for stratum in enumerate_strata(counts.m):
        n = counts.size(stratum)
        labels = eligible_arms(stratum, structure)
        draw = rng.multinomial(n, np.full(len(labels), 1.0 / len(labels)))
        arms[stratum.mask] = dict(zip(labels, (int(x) for x in draw)))
    return arms


def _allocate_pragmatic(counts, structure, rng):
    m = counts.m
    arrivals = np.repeat(np.arange(1, (1 << m)), counts.sizes)
    rng.shuffle(arrivals)
    subtrial_total = {}   # subtrial key -> patients assigned so far
    split = {}            # subtrial key -> (treatment count, control count)
    arms = {s.mask: {lab: 0 for lab in eligible_arms(s, structure)}
            for s in enumerate_strata(m)}
    for mask in arrivals:
        if structure == ALL_DIFFERENT:
            eligible = [i + 1 for i in range(m) if mask >> i & 1]
        else:
            eligible = [0]  # single shared subtrial
        totals = [subtrial_total.get(k, 0) for k in eligible]
        fewest = min(totals)
        chosen = [k for k, t in zip(eligible, totals) if t == fewest]
        trial = (chosen[0] if len(chosen) == 1
                 else chosen[rng.integers(len(chosen))])
        treat, ctrl = split.get(trial, (0, 0))
        if treat < ctrl or (treat == ctrl and rng.integers(2) == 0):
            label = (treatment_arm(trial, structure) if trial
                     else SHARED_TREATMENT_ARM)
            split[trial] = (treat + 1, ctrl)
        else:
            label = CONTROL_ARM
            split[trial] = (treat, ctrl + 1)
        subtrial_total[trial] = subtrial_total.get(trial, 0) + 1
        arms[int(mask)][label] += 1
    return arms
