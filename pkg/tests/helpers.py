"""Independent oracles shared by the test modules.

Everything here deliberately avoids the library's own integration and
solver paths: plain Monte Carlo, quadrature via scipy, and closed forms.
"""

import math

import numpy as np
from scipy import integrate
from scipy.special import ndtr
from scipy.stats import chi as chi_dist


def mc_rect_prob(lower, upper, corr, df=None, n=200_000, seed=0):
    """Plain Monte Carlo rectangle probability with its standard error."""
    rng = np.random.default_rng(seed)
    d = corr.shape[0]
    chol = np.linalg.cholesky(corr + 1e-12 * np.eye(d))
    z = rng.standard_normal((n, d)) @ chol.T
    if df is not None:
        z = z / np.sqrt(rng.chisquare(df, n) / df)[:, None]
    inside = np.all((z >= np.asarray(lower)) & (z <= np.asarray(upper)),
                    axis=1)
    p = float(inside.mean())
    se = math.sqrt(max(p * (1 - p), 1e-12) / n)
    return p, se


def bvn_cdf_quad(h, k, rho):
    """Bivariate normal cdf via the angular integral and scipy.quad."""
    if rho == 0.0:
        return ndtr(h) * ndtr(k)

    def integrand(theta):
        s = math.sin(theta)
        c2 = math.cos(theta) ** 2
        return math.exp(-(h * h + k * k - 2.0 * h * k * s) / (2.0 * c2))

    tail, _ = integrate.quad(integrand, 0.0, math.asin(rho), limit=200)
    return ndtr(h) * ndtr(k) + tail / (2.0 * math.pi)


def equicorr(d, rho):
    return np.full((d, d), rho) + (1.0 - rho) * np.eye(d)


def orthant3_equicorr(rho):
    """P(Z <= 0 three times) under equicorrelation, closed form."""
    return 0.125 + 3.0 * math.asin(rho) / (4.0 * math.pi)


def bvt_scale_mixture(c, df):
    """P(T1 <= c, T2 <= c) for independent-normal bivariate t via the chi
    scale mixture and scipy.quad."""
    dist = chi_dist(df, scale=1.0 / math.sqrt(df))
    val, _ = integrate.quad(lambda s: ndtr(c * s) ** 2 * dist.pdf(s),
                            0.0, dist.ppf(1.0 - 1e-12), limit=200)
    return val


def random_correlation(d, rng):
    a = rng.normal(size=(d, d + 3))
    c = a @ a.T
    scale = np.sqrt(np.diag(c))
    return c / np.outer(scale, scale)
