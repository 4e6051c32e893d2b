"""Benchmark: compiled integrand kernel vs the NumPy fallback.

The adaptive integrator mostly evaluates small point blocks (refinement
starts at 512 points per scramble), where per-call dispatch overhead
dominates and the compiled kernel wins; on large vectorizable blocks the
NumPy kernel catches up.  Both backends must agree bitwise.  Run:

    python benchmarks/bench_kernel.py [--repeats 30]
"""

import argparse
import time

import numpy as np

from pwer.mvdist import _kernel_py
from pwer.mvdist import _engine
from pwer.mvdist._engine import _chi_scale, _ordered_cholesky

try:
    from pwer.mvdist import _kernel as _kernel_c
except ImportError:
    _kernel_c = None


def make_problem(dim, rng):
    a = rng.normal(size=(dim, dim + 3))
    corr = a @ a.T
    scale = np.sqrt(np.diag(corr))
    corr /= np.outer(scale, scale)
    upper = rng.uniform(0.0, 2.5, dim)
    return _ordered_cholesky(np.full(dim, -np.inf), upper, corr)


def bench(kernel, w, s, lower, upper, chol, repeats):
    kernel.genz_integrand(w, s, lower, upper, chol)  # warm-up
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        kernel.genz_integrand(w, s, lower, upper, chol)
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_table(repeats):
    rng = np.random.default_rng(0)
    label = "points  dim  df    numpy-us  cython-us  speedup  max|diff|"
    print(label)
    print("-" * len(label))
    for points in (128, 512, 4096):
        for dim in (2, 3, 5, 8):
            for df in (None, 50.0):
                lower, upper, chol = make_problem(dim, rng)
                w = rng.random((points, dim - 1))
                s = (_chi_scale(rng.random(points), df) if df
                     else np.ones(points))
                t_py = bench(_kernel_py, w, s, lower, upper, chol, repeats)
                ref = _kernel_py.genz_integrand(w, s, lower, upper, chol)
                df_s = f"{int(df):>4d}" if df else "   -"
                if _kernel_c is None:
                    print(f"{points:>6d} {dim:>4d} {df_s}  "
                          f"{t_py * 1e6:8.1f}   (compiled kernel not built)")
                    continue
                t_c = bench(_kernel_c, w, s, lower, upper, chol, repeats)
                got = _kernel_c.genz_integrand(w, s, lower, upper, chol)
                gap = float(np.max(np.abs(got - ref)))
                assert gap < 1e-12, f"backends disagree by {gap}"
                print(f"{points:>6d} {dim:>4d} {df_s}  {t_py * 1e6:8.1f}  "
                      f"{t_c * 1e6:9.1f}  {t_py / t_c:7.2f}  {gap:9.1e}")


def solve_timing():
    """End-to-end boundary solve with each kernel swapped in."""
    from pwer.control import solve_equal
    from pwer.design import UnknownHomogeneous, build_model, pooled_df_from_counts
    from pwer.prevalence import mle
    from pwer.strata import (STRATIFIED, BiomarkerModel, allocate,
                             sample_counts, strata_probabilities)

    rng = np.random.default_rng(1)
    prev = strata_probabilities(BiomarkerModel((0.5, 0.6, 0.4)))
    counts = allocate(sample_counts(prev, 500, rng), STRATIFIED, rng)
    model = build_model(counts,
                        UnknownHomogeneous(1.0, pooled_df_from_counts(counts)))
    prev_hat = mle(counts)

    print()
    print("boundary solve (m=3, N=500, pooled t)")
    active = _engine.kernel
    try:
        for name, kern in (("numpy", _kernel_py), ("cython", _kernel_c)):
            if kern is None:
                continue
            _engine.kernel = kern
            solve_equal(prev_hat, model, 0.025)  # warm caches
            t0 = time.perf_counter()
            res = solve_equal(prev_hat, model, 0.025)
            dt = time.perf_counter() - t0
            print(f"  {name:>6}: {dt * 1e3:7.1f} ms  "
                  f"(boundary {res.boundary:.6f})")
    finally:
        _engine.kernel = active


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()
    kernel_table(args.repeats)
    solve_timing()


if __name__ == "__main__":
    main()
