import numpy as np
import pytest
from scipy.special import ndtr, stdtrit

from helpers import (
    bvn_cdf_quad,
    bvt_scale_mixture,
    equicorr,
    mc_rect_prob,
    orthant3_equicorr,
    random_correlation,
)
from pwer.errors import BudgetExceededError, MatrixError
from pwer.mvdist import (
    BACKEND,
    Budget,
    CorrelationMatrix,
    mvn_cdf,
    mvn_rectangle,
    mvt_cdf,
)
from pwer.mvdist import _kernel_py
from pwer.mvdist._engine import _bvn_cdf, _chi_scale, _ordered_cholesky


class TestCorrelationMatrix:
    def test_rejects_asymmetric(self):
        with pytest.raises(MatrixError):
            CorrelationMatrix([[1.0, 0.2], [0.3, 1.0]])

    def test_rejects_bad_diagonal(self):
        with pytest.raises(MatrixError):
            CorrelationMatrix([[1.0, 0.2], [0.2, 0.9]])

    def test_rejects_indefinite(self):
        with pytest.raises(MatrixError):
            CorrelationMatrix([[1.0, 0.8, -0.8], [0.8, 1.0, 0.8],
                               [-0.8, 0.8, 1.0]])

    def test_clips_rounding_artifacts(self):
        m = CorrelationMatrix([[1.0, 1.0 + 5e-13], [1.0 + 5e-13, 1.0]])
        assert m.values[0, 1] == 1.0

    def test_submatrix(self):
        m = CorrelationMatrix(equicorr(4, 0.3))
        sub = m.submatrix([0, 2])
        assert sub.dim == 2
        assert sub.values[0, 1] == pytest.approx(0.3)


class TestUnivariate:
    def test_gaussian_quantile(self):
        res = mvn_cdf([1.959964], CorrelationMatrix([[1.0]]))
        assert res.value == pytest.approx(0.975, abs=1e-8)
        assert res.method == "exact"

    def test_t_quantile(self):
        q = stdtrit(10, 0.975)
        res = mvt_cdf([q], CorrelationMatrix([[1.0]]), 10)
        assert res.value == pytest.approx(0.975, abs=1e-12)


class TestBivariateNormal:
    def test_independence_factorizes(self):
        res = mvn_cdf([1.3, -0.4], CorrelationMatrix(np.eye(2)))
        assert res.value == pytest.approx(ndtr(1.3) * ndtr(-0.4), abs=1e-14)

    def test_orthant_arcsine_law(self):
        res = mvn_cdf([0.0, 0.0], CorrelationMatrix(equicorr(2, 0.5)))
        assert res.value == pytest.approx(1 / 3, abs=1e-10)

    @pytest.mark.parametrize("h,k,rho", [
        (0.7, -1.1, 0.6), (-2.0, -0.5, -0.8), (1.5, 1.5, 0.95),
        (0.0, 0.8, -0.4), (3.0, -3.0, 0.3),
    ])
    def test_against_quadrature(self, h, k, rho):
        got = float(_bvn_cdf(h, k, rho))
        assert got == pytest.approx(bvn_cdf_quad(h, k, rho), abs=1e-10)

    def test_unit_box_rectangle(self):
        res = mvn_rectangle([0, 0], [1, 1], CorrelationMatrix(np.eye(2)))
        assert res.value == pytest.approx((ndtr(1) - ndtr(0)) ** 2, abs=1e-13)

    def test_degenerate_rectangles(self):
        sigma = CorrelationMatrix(equicorr(2, 0.4))
        assert mvn_rectangle([1, 1], [1, 1], sigma).value == 0.0
        assert mvn_rectangle([-np.inf] * 2, [np.inf] * 2, sigma).value == 1.0

    def test_rectangle_reduces_to_cdf(self):
        sigma = CorrelationMatrix(equicorr(2, 0.4))
        a = mvn_rectangle([-np.inf, -np.inf], [0.5, 1.0], sigma)
        b = mvn_cdf([0.5, 1.0], sigma)
        assert a.value == pytest.approx(b.value, abs=1e-13)


class TestMultivariateT:
    def test_large_df_matches_gaussian(self):
        sigma = CorrelationMatrix(equicorr(2, 0.5))
        t = mvt_cdf([1.2, 0.7], sigma, 1e6)
        z = mvn_cdf([1.2, 0.7], sigma)
        assert t.value == pytest.approx(z.value, abs=1e-4)

    def test_scale_mixture_oracle(self):
        c = 1.1
        res = mvt_cdf([c, c], CorrelationMatrix(np.eye(2)), 5)
        assert res.value == pytest.approx(bvt_scale_mixture(c, 5), abs=2e-6)

    def test_low_df_against_monte_carlo(self):
        sigma = equicorr(3, 0.5)
        res = mvt_cdf([1.5, 1.5, 1.5], CorrelationMatrix(sigma), 3)
        ref, se = mc_rect_prob([-np.inf] * 3, [1.5] * 3, sigma, df=3,
                               n=400_000, seed=10)
        assert abs(res.value - ref) < 3 * (res.error_estimate + se)

    def test_chi_scale_interpolant_accuracy(self):
        from scipy.special import gammaincinv
        rng = np.random.default_rng(0)
        u = rng.random(5000)
        for df in (8.0, 30.0, 481.0):
            exact = np.sqrt(2 * gammaincinv(df / 2, u) / df)
            np.testing.assert_allclose(_chi_scale(u, df), exact, atol=5e-8)


class TestTrivariatePlus:
    def test_orthant_closed_form(self):
        for rho in (0.1, 0.5, 0.9):
            res = mvn_cdf([0.0] * 3, CorrelationMatrix(equicorr(3, rho)))
            assert abs(res.value - orthant3_equicorr(rho)) < max(
                3 * res.error_estimate, 1e-6)

    def test_error_estimate_within_tolerance(self):
        res = mvn_cdf([1.0, 0.5, 2.0], CorrelationMatrix(equicorr(3, 0.3)))
        assert res.error_estimate <= Budget().abs_tol

    def test_monotone_in_bounds(self):
        rng = np.random.default_rng(3)
        sigma = CorrelationMatrix(random_correlation(4, rng))
        base = np.array([0.5, -0.2, 1.0, 0.3])
        lowr = mvn_cdf(base, sigma)
        for i in range(4):
            bumped = base.copy()
            bumped[i] += 0.4
            upr = mvn_cdf(bumped, sigma)
            assert (upr.value - lowr.value
                    >= -(upr.error_estimate + lowr.error_estimate))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        c = random_correlation(4, rng)
        upper = np.array([0.3, 1.2, -0.1, 0.8])
        ref = mvn_cdf(upper, CorrelationMatrix(c))
        perm = rng.permutation(4)
        res = mvn_cdf(upper[perm], CorrelationMatrix(c[np.ix_(perm, perm)]))
        assert abs(res.value - ref.value) <= 2 * (res.error_estimate
                                                  + ref.error_estimate)

    def test_reproducible_bit_for_bit(self):
        sigma = CorrelationMatrix(equicorr(5, 0.4))
        a = mvn_cdf([1.0] * 5, sigma)
        b = mvn_cdf([1.0] * 5, sigma)
        assert a.value == b.value and a.evaluations == b.evaluations

    def test_seed_changes_value_slightly(self):
        sigma = CorrelationMatrix(equicorr(5, 0.4))
        a = mvn_cdf([1.0] * 5, sigma)
        b = mvn_cdf([1.0] * 5, sigma, Budget(seed=99))
        assert a.value != b.value
        assert abs(a.value - b.value) < 3 * (a.error_estimate
                                             + b.error_estimate)

    def test_qmc_against_monte_carlo(self, rng):
        for trial in range(10):
            d = int(rng.integers(2, 7))
            c = random_correlation(d, rng)
            upper = rng.uniform(-0.5, 2.5, d)
            res = mvn_cdf(upper, CorrelationMatrix(c))
            ref, se = mc_rect_prob([-np.inf] * d, upper, c, n=200_000,
                                   seed=trial)
            assert abs(res.value - ref) < 3 * (res.error_estimate + se) + 1e-4

    def test_marginalizes_unbounded_coordinates(self):
        sigma = CorrelationMatrix(equicorr(3, 0.5))
        full = mvn_rectangle([-np.inf, -np.inf, -np.inf],
                             [0.7, np.inf, 1.1], sigma)
        sub = mvn_rectangle([-np.inf, -np.inf], [0.7, 1.1],
                            CorrelationMatrix(equicorr(2, 0.5)))
        assert full.value == pytest.approx(sub.value, abs=1e-12)

    def test_budget_exceeded_carries_best_estimate(self):
        sigma = CorrelationMatrix(equicorr(4, 0.5))
        with pytest.raises(BudgetExceededError) as err:
            mvn_cdf([1.0] * 4, sigma, Budget(abs_tol=1e-12, max_evals=4096,
                                             start_points=128))
        assert err.value.result is not None
        assert 0.0 <= err.value.result.value <= 1.0

    def test_near_singular_matrix(self):
        c = equicorr(3, 1.0 - 1e-13)
        res = mvn_cdf([1.0, 1.0, 1.0], CorrelationMatrix(c))
        # perfectly correlated coordinates collapse to one
        assert res.value == pytest.approx(ndtr(1.0), abs=1e-3)


class TestKernelBackends:
    def _inputs(self):
        rng = np.random.default_rng(11)
        sigma = random_correlation(4, rng)
        lower, upper, chol = _ordered_cholesky(
            np.full(4, -np.inf), np.array([0.5, 1.0, -0.2, 2.0]), sigma)
        w = rng.random((256, 3))
        scale = np.ones(256)
        return w, scale, lower, upper, chol

    def test_python_kernel_matches_active_backend(self):
        from pwer.mvdist._backend import kernel
        w, scale, lower, upper, chol = self._inputs()
        a = kernel.genz_integrand(w, scale, lower, upper, chol)
        b = _kernel_py.genz_integrand(w, scale, lower, upper, chol)
        np.testing.assert_allclose(a, b, atol=5e-14)

    @pytest.mark.skipif(BACKEND != "cython",
                        reason="compiled kernel not built")
    def test_compiled_kernel_bitwise_close(self):
        from pwer.mvdist import _kernel
        w, scale, lower, upper, chol = self._inputs()
        a = _kernel.genz_integrand(w, scale, lower, upper, chol)
        b = _kernel_py.genz_integrand(w, scale, lower, upper, chol)
        assert np.max(np.abs(a - b)) < 5e-14
