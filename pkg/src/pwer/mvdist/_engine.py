"""Multivariate normal and t probabilities with error estimates.

Equicoordinate and rectangle probabilities are the inner loop of every
boundary solve, so dimensions are dispatched by cost: dimension 1 uses the
exact univariate cdf, dimension 2 closed forms and deterministic
quadrature, and higher dimensions a randomized quasi-Monte Carlo rule
(independently scrambled Sobol replicates) applied to the
separation-of-variables integrand after greedy variable reordering
(smallest conditional truncation mass first) fused with the Cholesky
factorization.  The t case adds one integration variable for the chi scale,
whose quantiles are computed outside the kernel so both kernel backends see
identical inputs.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaincinv, ndtr, ndtri, owens_t, stdtr, stdtrit
from scipy.stats import qmc

from ..errors import BudgetExceededError, MatrixError
from ._backend import BACKEND, kernel

__all__ = [
    "BACKEND",
    "Budget",
    "CorrelationMatrix",
    "ProbResult",
    "equicoordinate_cdf",
    "mvn_cdf",
    "mvn_rectangle",
    "mvt_cdf",
]

MAX_DIM = 16

_SYM_TOL = 1e-12
_EIG_FLOOR = -1e-10
_JITTER = 1e-12
# trailing uniform clamp so chi quantiles stay finite and positive
_U_LO = 1e-15
_U_HI = 1.0 - 1e-16


@dataclass(frozen=True)
class Budget:
    """Accuracy target and effort limits for one probability evaluation."""

    abs_tol: float = 5e-6
    max_evals: int = 1 << 23
    shifts: int = 8
    start_points: int = 512
    seed: int = 0


DEFAULT_BUDGET = Budget()


@dataclass(frozen=True)
class ProbResult:
    """A probability plus an account of how it was obtained.

    ``error_estimate`` is the half-width of a 99% confidence bound on the
    integration error (zero-ish for the deterministic paths); ``method``
    records the rule and scrambling scheme for audit.
    """

    value: float
    error_estimate: float
    evaluations: int
    method: str
    seed: int | None = None


class CorrelationMatrix:
    """Symmetric, unit-diagonal, numerically PSD matrix.

    Entries are clipped to [-1, 1] and the diagonal is pinned to exactly 1.
    Eigenvalues may dip to -1e-10 (rounding from nearly collinear
    statistics, e.g. nested populations sharing controls); anything lower
    raises :class:`MatrixError`.
    """

    __slots__ = ("values",)

    def __init__(self, values):
        a = np.asarray(values, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise MatrixError(f"expected a square matrix, got shape {a.shape}")
        if a.shape[0] < 1:
            raise MatrixError("empty matrix")
        if not np.all(np.isfinite(a)):
            raise MatrixError("non-finite entries")
        if np.max(np.abs(a - a.T)) > _SYM_TOL:
            raise MatrixError("matrix is not symmetric within 1e-12")
        if np.max(np.abs(np.diag(a) - 1.0)) > _SYM_TOL:
            raise MatrixError("diagonal differs from 1 beyond 1e-12")
        a = np.clip((a + a.T) / 2.0, -1.0, 1.0)
        np.fill_diagonal(a, 1.0)
        if a.shape[0] > 1 and np.linalg.eigvalsh(a)[0] < _EIG_FLOOR:
            raise MatrixError(
                "matrix is not positive semidefinite (eigenvalue below -1e-10)")
        a.setflags(write=False)
        object.__setattr__(self, "values", a)

    def __setattr__(self, name, value):
        raise AttributeError("CorrelationMatrix is immutable")

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def submatrix(self, indices) -> "CorrelationMatrix":
        idx = np.asarray(indices, dtype=np.intp)
        return CorrelationMatrix(self.values[np.ix_(idx, idx)])

    def __repr__(self):
        return f"CorrelationMatrix(dim={self.dim})"


def _ci_factor(shifts: int) -> float:
    # 99% two-sided t bound on the mean of the shift replicates
    return float(stdtrit(shifts - 1, 0.995)) / math.sqrt(shifts)


def _ordered_cholesky(lower, upper, corr):
    """Greedy variable reordering fused with the Cholesky factorization.

    At each elimination step the remaining variable with the smallest
    expected conditional truncation mass is pivoted in; the conditional
    expectation of the truncated normal drives subsequent steps.  Affects
    the integration error, never the value.
    """
    d = corr.shape[0]
    a = np.array(lower, dtype=np.float64)
    b = np.array(upper, dtype=np.float64)
    c = corr + _JITTER * np.eye(d)
    low = np.zeros((d, d))
    y = np.zeros(d)
    for i in range(d):
        best, best_p, best_lo, best_hi = i, np.inf, -np.inf, np.inf
        for k in range(i, d):
            s2 = max(c[k, k] - low[k, :i] @ low[k, :i], 1e-24)
            sd = math.sqrt(s2)
            t = low[k, :i] @ y[:i]
            lo = (a[k] - t) / sd
            hi = (b[k] - t) / sd
            p = ndtr(hi) - ndtr(lo)
            if p < best_p:
                best, best_p, best_lo, best_hi = k, p, lo, hi
        if best != i:
            for arr in (a, b):
                arr[[i, best]] = arr[[best, i]]
            c[[i, best], :] = c[[best, i], :]
            c[:, [i, best]] = c[:, [best, i]]
            low[[i, best], :i] = low[[best, i], :i]
        s2 = max(c[i, i] - low[i, :i] @ low[i, :i], 1e-24)
        low[i, i] = math.sqrt(s2)
        for k in range(i + 1, d):
            low[k, i] = (c[k, i] - low[i, :i] @ low[k, :i]) / low[i, i]
        # E[Z | lo < Z < hi] for the standard normal
        p = max(best_p, 1e-300)
        phi_lo = math.exp(-0.5 * best_lo * best_lo) / math.sqrt(2 * math.pi) \
            if np.isfinite(best_lo) else 0.0
        phi_hi = math.exp(-0.5 * best_hi * best_hi) / math.sqrt(2 * math.pi) \
            if np.isfinite(best_hi) else 0.0
        y[i] = (phi_lo - phi_hi) / p
    return a, b, low


# chi-scale quantile grids: a z-space grid keeps the interpolant smooth out
# to the tails; below this df the quantile is curvy enough that the direct
# (slow) inverse is used instead
_CHI_GRID_MIN_DF = 8.0
_CHI_GRID_Z = 8.5
_CHI_GRID_N = 8193


@lru_cache(maxsize=64)
def _chi_scale_grid(df: float):
    z = np.linspace(-_CHI_GRID_Z, _CHI_GRID_Z, _CHI_GRID_N)
    s = np.sqrt(2.0 * gammaincinv(0.5 * df, ndtr(z)) / df)
    z.setflags(write=False)
    s.setflags(write=False)
    return z, s


def _chi_scale(u, df):
    """sqrt(chi2(df) quantile / df) of each u, the t bound-scaling factor."""
    u = np.clip(u, _U_LO, _U_HI)
    if df < _CHI_GRID_MIN_DF:
        return np.sqrt(2.0 * gammaincinv(0.5 * df, u) / df)
    grid_z, grid_s = _chi_scale_grid(float(df))
    z = np.clip(ndtri(u), -_CHI_GRID_Z, _CHI_GRID_Z)
    return np.interp(z, grid_z, grid_s)


# Scrambled point sets are a pure function of (seed, dimension, replicate),
# so blocks are memoized: repeated solves with one budget reuse identical
# points instead of paying engine setup per probability call.  The memo is
# lock-guarded and holds immutable arrays, keeping concurrent evaluation
# safe and values independent of call interleaving.
_SOBOL_LOCK = threading.Lock()
_SOBOL_LEVELS: dict[tuple, list] = {}
_SOBOL_ENGINES: dict[tuple, list] = {}
_SOBOL_CACHE_MAX = 1 << 16  # per-replicate points kept in the memo


def _fresh_engine(seed, dim, replicate):
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(replicate,))
    return qmc.Sobol(dim, scramble=True, seed=np.random.default_rng(ss))


def _sobol_block(key, level, n_add, total_before):
    """Points for refinement level `level`: one (n_add, dim) array per
    scramble replicate, identical for every call sharing the key."""
    seed, dim, shifts, _ = key
    if total_before + n_add <= _SOBOL_CACHE_MAX:
        with _SOBOL_LOCK:
            levels = _SOBOL_LEVELS.setdefault(key, [])
            if level < len(levels):
                return levels[level]
            engines = _SOBOL_ENGINES.get(key)
            if engines is None:
                engines = [_fresh_engine(seed, dim, r) for r in range(shifts)]
                _SOBOL_ENGINES[key] = engines
            block = [engine.random(n_add) for engine in engines]
            for arr in block:
                arr.setflags(write=False)
            levels.append(block)
            return block
    block = []
    for r in range(shifts):
        engine = _fresh_engine(seed, dim, r)
        engine.fast_forward(total_before)
        block.append(engine.random(n_add))
    return block


def _rqmc(lower, upper, chol, df, budget):
    """Adaptive scrambled-Sobol integration of the reordered problem.

    Refinement levels extend each replicate's point set instead of
    discarding it; the error estimate is a 99% t-bound across the
    replicate means.
    """
    d = chol.shape[0]
    dim_eff = (d - 1) + (1 if df is not None else 0)
    factor = _ci_factor(budget.shifts)
    key = (budget.seed, dim_eff, budget.shifts, budget.start_points)
    sums = np.zeros(budget.shifts)
    count = 0
    level = 0
    n_add = budget.start_points
    evals = 0
    method = f"rqmc-sobol-owen(shifts={budget.shifts})"
    while True:
        for r, pts in enumerate(_sobol_block(key, level, n_add, count)):
            if df is not None:
                scale = _chi_scale(pts[:, 0], df)
                w = np.ascontiguousarray(pts[:, 1:])
            else:
                scale = np.ones(n_add)
                w = np.ascontiguousarray(pts)
            vals = kernel.genz_integrand(w, scale, lower, upper, chol)
            sums[r] += np.add.reduce(vals)
        count += n_add
        level += 1
        evals += n_add * budget.shifts
        means = sums / count
        value = float(means.mean())
        err = float(factor * means.std(ddof=1))
        result = ProbResult(min(max(value, 0.0), 1.0), err, evals, method,
                            budget.seed)
        if err <= budget.abs_tol:
            return result
        if evals + count * budget.shifts > budget.max_evals:
            raise BudgetExceededError(
                f"integration error {err:.2e} above tolerance "
                f"{budget.abs_tol:.2e} after {evals} evaluations",
                result=result)
        n_add = count


def _bvn_cdf(h, k, rho):
    """P(X <= h, Y <= k) for a standard bivariate normal, vectorized in h, k.

    Uses the Owen T-function identity; exact special cases for rho in
    {0, +-1}.  Coordinates exactly at zero are nudged by 1e-12 (error below
    1e-12) to keep the 1/h factors finite.
    """
    h = np.asarray(h, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    h, k = np.broadcast_arrays(h, k)
    if rho == 0.0:
        return ndtr(h) * ndtr(k)
    if rho >= 1.0 - _SYM_TOL:
        return ndtr(np.minimum(h, k))
    if rho <= -1.0 + _SYM_TOL:
        return np.maximum(ndtr(h) + ndtr(k) - 1.0, 0.0)
    hs = np.where(h == 0.0, 1e-12, h)
    ks = np.where(k == 0.0, 1e-12, k)
    # infinities leave the generic identity; fix them up afterwards
    hf = np.where(np.isfinite(hs), hs, 1.0)
    kf = np.where(np.isfinite(ks), ks, 1.0)
    den = math.sqrt(1.0 - rho * rho)
    ah = (kf - rho * hf) / (hf * den)
    ak = (hf - rho * kf) / (kf * den)
    val = (0.5 * (ndtr(hf) + ndtr(kf)) - owens_t(hf, ah) - owens_t(kf, ak)
           - np.where(hf * kf > 0.0, 0.0, 0.5))
    val = np.clip(val, 0.0, 1.0)
    val = np.where(np.isneginf(hs) | np.isneginf(ks), 0.0, val)
    val = np.where(np.isposinf(hs), ndtr(ks), val)
    val = np.where(np.isposinf(ks) & np.isfinite(hs), ndtr(hs), val)
    val = np.where(np.isposinf(hs) & np.isposinf(ks), 1.0, val)
    return val


def _bvn_rect(lo1, hi1, lo2, hi2, rho):
    """P(lo1 < X <= hi1, lo2 < Y <= hi2), vectorized; inclusion-exclusion."""
    return (_bvn_cdf(hi1, hi2, rho) - _bvn_cdf(lo1, hi2, rho)
            - _bvn_cdf(hi1, lo2, rho) + _bvn_cdf(lo1, lo2, rho))


@lru_cache(maxsize=4096)
def _chi_scale_nodes(df: float, n: int):
    """Gauss-Legendre nodes for the chi-scale mixture, cached per (df, n)."""
    x, w = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (x + 1.0)
    scale = np.sqrt(2.0 * gammaincinv(0.5 * df, u) / df)
    scale.setflags(write=False)
    weights = 0.5 * w
    weights.setflags(write=False)
    return scale, weights


def _bvt_rect(lower, upper, rho, df, tol):
    """Bivariate t rectangle via quadrature over the chi scale.

    Returns (value, error_estimate) or None when the doubled-order check
    does not certify the requested tolerance (caller then falls back to the
    lattice rule).
    """
    base = 64 if df >= 20 else (128 if df >= 5 else 256)
    vals = []
    for n in (base, 2 * base):
        s, w = _chi_scale_nodes(float(df), n)
        probs = _bvn_rect(lower[0] * s, upper[0] * s, lower[1] * s,
                          upper[1] * s, rho)
        vals.append(float(np.add.reduce(probs * w)))
    err = abs(vals[1] - vals[0]) + 1e-15
    if err > tol:
        return None
    return vals[1], err, 3 * base


def _prob(lower, upper, sigma, df, budget):
    """Common evaluation path for all public probability operations."""
    if budget is None:
        budget = DEFAULT_BUDGET
    if df is not None and df < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    lo = np.atleast_1d(np.asarray(lower, dtype=np.float64)).copy()
    hi = np.atleast_1d(np.asarray(upper, dtype=np.float64)).copy()
    if lo.shape != hi.shape or lo.ndim != 1:
        raise ValueError("lower and upper must be vectors of equal length")
    if lo.shape[0] != sigma.dim:
        raise ValueError(
            f"bounds have length {lo.shape[0]} but matrix has dim {sigma.dim}")
    if sigma.dim > MAX_DIM:
        raise ValueError(f"dimension {sigma.dim} above the {MAX_DIM} cap")
    if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
        raise ValueError("NaN bound")
    if np.any(lo > hi):
        raise ValueError("lower bound above upper bound")
    if np.any(lo == hi) or np.any(np.isneginf(hi)) or np.any(np.isposinf(lo)):
        return ProbResult(0.0, 0.0, 0, "exact")
    # marginalize out unconstrained coordinates
    keep = ~(np.isneginf(lo) & np.isposinf(hi))
    if not np.all(keep):
        idx = np.flatnonzero(keep)
        if idx.size == 0:
            return ProbResult(1.0, 0.0, 0, "exact")
        lo, hi = lo[idx], hi[idx]
        sigma = sigma.submatrix(idx)
    d = sigma.dim

    if d == 1:
        if df is None:
            value = float(ndtr(hi[0]) - ndtr(lo[0]))
        else:
            value = float(_t_cdf1(hi[0], df) - _t_cdf1(lo[0], df))
        return ProbResult(min(max(value, 0.0), 1.0), 1e-15, 1, "exact")

    if d == 2:
        rho = float(sigma.values[0, 1])
        if df is None:
            value = float(_bvn_rect(lo[0], hi[0], lo[1], hi[1], rho))
            return ProbResult(min(max(value, 0.0), 1.0), 1e-11, 4, "bvn-owen-t")
        quad = _bvt_rect(lo, hi, rho, df, budget.abs_tol)
        if quad is not None:
            value, err, evals = quad
            return ProbResult(min(max(value, 0.0), 1.0), err, evals,
                              "bvt-gauss-legendre-chi")

    a, b, low = _ordered_cholesky(lo, hi, sigma.values)
    return _rqmc(a, b, low, df, budget)


def _t_cdf1(x, df):
    if np.isposinf(x):
        return 1.0
    if np.isneginf(x):
        return 0.0
    return stdtr(df, x)


def mvn_cdf(upper, sigma: CorrelationMatrix, budget: Budget | None = None
            ) -> ProbResult:
    """P(Z <= upper componentwise) for Z ~ N(0, sigma)."""
    upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
    return _prob(np.full(upper.shape, -np.inf), upper, sigma, None, budget)


def mvn_rectangle(lower, upper, sigma: CorrelationMatrix,
                  budget: Budget | None = None) -> ProbResult:
    """P(lower <= Z <= upper componentwise) for Z ~ N(0, sigma)."""
    return _prob(lower, upper, sigma, None, budget)


def mvt_cdf(upper, sigma: CorrelationMatrix, df: float,
            budget: Budget | None = None) -> ProbResult:
    """Central multivariate t probability P(T <= upper componentwise)."""
    upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
    return _prob(np.full(upper.shape, -np.inf), upper, sigma, float(df),
                 budget)


def equicoordinate_cdf(c: float, sigma: CorrelationMatrix,
                       df: float | None = None,
                       budget: Budget | None = None) -> ProbResult:
    """P(all coordinates <= c); Gaussian when df is None, t otherwise."""
    upper = np.full(sigma.dim, float(c))
    return _prob(np.full(sigma.dim, -np.inf), upper, sigma,
                 None if df is None else float(df), budget)
