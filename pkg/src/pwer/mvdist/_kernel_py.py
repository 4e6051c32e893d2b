"""NumPy fallback for the integrand kernel.

Mirrors ``_kernel.pyx`` operation for operation (same special functions,
same accumulation order per point, same infinite-bound shortcuts) so the
two backends agree bitwise; the compiled kernel is simply faster per point.
"""

import numpy as np
from scipy.special import ndtr, ndtri

# clamps keeping ndtri finite once a truncation interval has collapsed
_ARG_LO = 1e-300
_ARG_HI = 1.0 - 1e-16

BACKEND_NAME = "python"


def genz_integrand(w, scale, lower, upper, chol):
    """Separation-of-variables integrand for P(lower <= X <= upper).

    Parameters
    ----------
    w : (n, d-1) float array
        Points in the unit cube driving the conditional quantile transform.
    scale : (n,) float array
        Per-point bound scaling (chi realizations for the t case, ones for
        the normal case).
    lower, upper : (d,) float arrays
        Integration bounds after variable reordering; +-inf allowed.
    chol : (d, d) float array
        Lower-triangular Cholesky factor of the (reordered) correlation
        matrix.

    Returns
    -------
    (n,) array of integrand values in [0, 1].
    """
    n = w.shape[0]
    d = chol.shape[0]
    prod = np.ones(n)
    tsum = 0.0
    ys = np.empty((d - 1, n)) if d > 1 else None
    for i in range(d):
        if i > 0:
            tsum = chol[i, 0] * ys[0]
            for j in range(1, i):
                tsum = tsum + chol[i, j] * ys[j]
        diag = chol[i, i]
        if lower[i] == -np.inf:
            dv = 0.0
        else:
            dv = ndtr((lower[i] * scale - tsum) / diag)
        if upper[i] == np.inf:
            ev = 1.0
        else:
            ev = ndtr((upper[i] * scale - tsum) / diag)
        f = np.maximum(ev - dv, 0.0)
        prod = prod * f
        if i < d - 1:
            arg = dv + w[:, i] * f
            arg = np.clip(arg, _ARG_LO, _ARG_HI)
            ys[i] = ndtri(arg)
    return prod
