import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memv.core import DataError, Dataset, ErrorModel, als_estimate
from memv.inference import (
    DegenerateResidualError,
    alpha_from_z,
    eval_estimating_functions,
    estimating_function_matrix,
    memv_test,
    normal_cdf,
    normal_sf,
    sandwich,
    suggest_sigma0,
    z_from_alpha,
)

from conftest import random_dataset, random_psd


class TestEstimatingFunctions:
    def test_zero_parameters(self):
        v = eval_estimating_functions(2.5, [1.0, -2.0], [0.0, 0.0], 0.0, np.zeros((2, 2)))
        np.testing.assert_array_equal(v.s_c, [2.5, -5.0])
        assert v.s_sigma2 == 6.25

    def test_zero_residual(self):
        w = np.array([1.0, 3.0])
        c = np.array([0.5, -1.0])
        v = eval_estimating_functions(float(c @ w), w, c, 0.0, np.zeros((2, 2)))
        assert v.s_sigma2 == 0.0

    def test_hand_arithmetic(self):
        # s_c = 6 - (9 - 0.2) * 0.5; s_sigma2 = (2 - 1.5)^2 - 0.2 * 0.5^2 - 1
        v = eval_estimating_functions(2.0, [3.0], [0.5], 1.0, [[0.2]])
        assert v.s_c[0] == pytest.approx(1.6, abs=1e-14)
        assert v.s_sigma2 == pytest.approx(-0.8, abs=1e-14)

    def test_matrix_form_matches_pointwise(self):
        rng = np.random.default_rng(3)
        d = random_dataset(rng, n=7, m=3)
        S = random_psd(rng, 3)
        c = rng.normal(size=3)
        M = estimating_function_matrix(d, S, c, 0.3)
        for i in range(d.n):
            v = eval_estimating_functions(d.y[i], d.w[i], c, 0.3, S)
            np.testing.assert_allclose(M[i], v.s_theta, rtol=1e-12, atol=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            eval_estimating_functions(1.0, [1.0, 2.0], [1.0], 0.0, np.eye(2))


class TestSandwich:
    def test_structure(self):
        rng = np.random.default_rng(4)
        d = random_dataset(rng, n=50, m=3)
        em = ErrorModel(random_psd(rng, 3, 0.01))
        th = als_estimate(d, em)
        sw = sandwich(d, em, th)
        M = d.w.T @ d.w / d.n - em.S
        np.testing.assert_allclose(sw.A_hat[:3, :3], M, rtol=1e-14)
        assert sw.A_hat[3, 3] == 1.0
        assert not sw.A_hat[:3, 3].any() and not sw.A_hat[3, :3].any()
        assert sw.v_sigma2_sq == sw.B_hat[3, 3]
        assert sw.se_hat == pytest.approx(math.sqrt(sw.v_sigma2_sq) / math.sqrt(d.n), rel=1e-15)
        assert np.all(np.linalg.eigvalsh(sw.B_hat) > -1e-12 * np.abs(sw.B_hat).max())
        Ainv = np.linalg.inv(sw.A_hat)
        np.testing.assert_allclose(sw.Sigma_hat, Ainv @ sw.B_hat @ Ainv, rtol=1e-9, atol=1e-12)
        assert sw.Sigma_hat[3, 3] == pytest.approx(sw.v_sigma2_sq, rel=1e-12)

    def test_toy_constant_residual_magnitude(self):
        # (w, y) = (1, 0), (1, 2) with c = 1: residuals -1, 1, sigma^2 = 1, s_sigma2 = 0
        d = Dataset([0.0, 2.0], [1.0, 1.0])
        em = ErrorModel.zero(1)
        th = als_estimate(d, em)
        assert th.c_hat[0] == pytest.approx(1.0)
        assert th.sigma_hat_sq == pytest.approx(1.0)
        sw = sandwich(d, em, th)
        assert sw.v_sigma2_sq == pytest.approx(0.0, abs=1e-28)
        assert sw.se_hat == pytest.approx(0.0, abs=1e-14)


def _noisy(rng, n=200, m=2, noise=0.5):
    return random_dataset(rng, n=n, m=m, noise=noise)


class TestMemvTest:
    def test_noiseless_data_does_not_reject(self):
        w = np.linspace(0.1, 2.0, 20)
        res = memv_test(Dataset(3.0 * w, w), ErrorModel([[0.0]], 0.5))
        assert not res.reject
        assert res.T < 0
        assert res.p_value > 0.5

    def test_zero_numerator_gives_half(self):
        rng = np.random.default_rng(5)
        d = _noisy(rng)
        th = als_estimate(d, ErrorModel.zero(2))
        res = memv_test(d, ErrorModel.zero(2, th.sigma_tilde_sq))
        assert res.T == pytest.approx(0.0, abs=1e-12)
        assert res.p_value == pytest.approx(0.5, abs=1e-12)

    def test_equal_magnitude_residuals_are_degenerate(self):
        d = Dataset([0.0, 2.0, 0.0, 2.0], [1.0, 1.0, 1.0, 1.0])
        with pytest.raises(DegenerateResidualError, match="degenerate residual"):
            memv_test(d, ErrorModel([[0.0]], 0.5))

    def test_requires_positive_sigma0(self):
        rng = np.random.default_rng(6)
        d = _noisy(rng)
        with pytest.raises(DataError):
            memv_test(d, ErrorModel.zero(2, 0.0))

    def test_requires_enough_rows(self):
        with pytest.raises(DataError):
            memv_test(Dataset([1.0, 2.0, 3.0], np.eye(3)), ErrorModel.zero(3, 1.0))

    def test_statistic_matches_formula(self):
        rng = np.random.default_rng(7)
        d = _noisy(rng)
        S = random_psd(rng, 2, 0.01)
        res = memv_test(d, ErrorModel(S, 0.2), z_alpha=2.0)
        c = res.theta.c_hat
        r = d.y - d.w @ c
        rss_n = np.mean(r**2)
        denom = math.sqrt(np.mean(r**4) - rss_n**2) / math.sqrt(d.n)
        assert res.T == pytest.approx((rss_n - 0.2 - c @ S @ c) / denom, rel=1e-10)
        assert res.p_value == pytest.approx(1 - normal_cdf(res.T), abs=1e-14)
        assert res.reject == (res.theta.sigma_hat_sq > 0.2 + 2.0 * res.se_hat)

    def test_negative_sigma_tilde_reports_bracket_gap(self):
        rng = np.random.default_rng(8)
        d = _noisy(rng, noise=0.05)
        S = 0.3 * (d.w.T @ d.w / d.n)
        res = memv_test(d, ErrorModel(S, 0.01))
        assert res.theta.sigma_tilde_sq < 0
        assert not res.reject
        assert abs(res.bracket_gap) > 0

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_p_monotone_in_sigma0(self, seed):
        rng = np.random.default_rng(seed)
        d = _noisy(rng, n=60)
        S = random_psd(rng, 2, 0.005)
        ps = [memv_test(d, ErrorModel(S, s0)).p_value for s0 in (0.05, 0.1, 0.2, 0.4)]
        Ts = [memv_test(d, ErrorModel(S, s0)).T for s0 in (0.05, 0.1, 0.2, 0.4)]
        assert all(a > b for a, b in zip(Ts, Ts[1:]))
        assert all(a <= b for a, b in zip(ps, ps[1:]))
        assert all(0.0 <= p <= 1.0 for p in ps)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), lam=st.floats(0.05, 20.0))
    def test_response_rescaling_invariance(self, seed, lam):
        rng = np.random.default_rng(seed)
        d = _noisy(rng, n=80)
        S = random_psd(rng, 2, 0.01)
        a = memv_test(d, ErrorModel(S, 0.2))
        b = memv_test(d.scaled(y_factor=lam), ErrorModel(S, 0.2 * lam**2))
        assert b.T == pytest.approx(a.T, rel=1e-9, abs=1e-9)
        assert b.p_value == pytest.approx(a.p_value, abs=1e-9)
        assert b.reject == a.reject


class TestNormalCdf:
    @pytest.mark.parametrize("t", [-30.0, -8.0, -3.0, -1.6448536269514722, -0.3, 0.0, 0.7, 1.0, 3.0, 8.0, 30.0])
    def test_against_mpmath(self, t):
        mpmath.mp.dps = 40
        assert abs(normal_cdf(t) - float(mpmath.ncdf(t))) <= 1e-12
        assert normal_sf(t) == pytest.approx(float(mpmath.ncdf(-t)), rel=1e-12, abs=1e-300)

    def test_reference_values(self):
        assert normal_cdf(0.0) == 0.5
        assert normal_cdf(3.0) == pytest.approx(0.998650101968370, abs=1e-12)
        assert normal_cdf(-1.6448536269514722) == pytest.approx(0.05, abs=1e-12)

    @settings(max_examples=200)
    @given(st.floats(-40, 40))
    def test_symmetry(self, t):
        assert abs(normal_cdf(-t) - (1 - normal_cdf(t))) <= 1e-12

    def test_alpha_z_roundtrip(self):
        for alpha in (0.001, 0.01, 0.05, 0.2):
            assert alpha_from_z(z_from_alpha(alpha)) == pytest.approx(alpha, rel=1e-10)
        assert z_from_alpha(0.05) == pytest.approx(1.6448536269514722, rel=1e-12)
        with pytest.raises(ValueError):
            z_from_alpha(0.6)


class TestSuggestSigma0:
    def test_zero_rss(self):
        w = np.arange(1.0, 5.0)
        d = Dataset(2 * w, w)
        assert suggest_sigma0(d, als_estimate(d, ErrorModel.zero(1))) == pytest.approx(0.0, abs=1e-24)

    def test_formula(self):
        rng = np.random.default_rng(9)
        d = random_dataset(rng, n=241, m=2)
        th = als_estimate(d, ErrorModel.zero(2))
        assert suggest_sigma0(d, th) == th.rss / 239

    def test_needs_more_rows_than_columns(self):
        d = Dataset([1.0, 2.0], np.eye(2))
        with pytest.raises(DataError):
            suggest_sigma0(d, als_estimate(d, ErrorModel.zero(2)))
