import numpy as np
import pytest

from skewtmix import (MvtParams, TruncatedTSpec, TruncationUnderflowError,
                      orthant_t_moments, trunc_t_mean, trunc_t_prob,
                      trunc_t_second_moment)
from skewtmix.skewt import half_t_mean

from conftest import quad_trunc_p1, quad_trunc_p2, random_spd, sample_trunc_moments


def spec(mu, sigma, nu, bound, side="upper"):
    return TruncatedTSpec(MvtParams(mu, sigma, nu), np.asarray(bound, float), side)


class TestSpecValidation:
    def test_bound_length(self):
        with pytest.raises(ValueError):
            spec([0.0, 0.0], np.eye(2), 5.0, [0.0, 0.0, 0.0])

    def test_side_value(self):
        with pytest.raises(ValueError):
            spec([0.0], [[1.0]], 5.0, [0.0], side="both")

    def test_underflow_raises(self):
        # polynomial tails need an enormous bound: T_5(-1e80) ~ 1e-400
        s = spec([0.0], [[1.0]], 5.0, [-1e80])
        with pytest.raises(TruncationUnderflowError):
            trunc_t_prob(s)


class TestProb:
    def test_median_half(self):
        for nu in (2.0, 7.0, 80.0):
            assert trunc_t_prob(spec([0.0], [[1.0]], nu, [0.0])) == pytest.approx(0.5, abs=1e-12)

    def test_independent_quadrant(self):
        s = spec([0.0, 0.0], np.eye(2), 7.0, [0.0, 0.0], side="lower")
        assert trunc_t_prob(s) == pytest.approx(0.25, abs=1e-9)

    def test_correlated_vs_quadrature(self):
        sigma = np.array([[1.0, 0.3 * np.sqrt(2.0)], [0.3 * np.sqrt(2.0), 2.0]])
        s = spec([0.0, 0.0], sigma, 5.0, [0.5, -0.2])
        c, _, _ = quad_trunc_p2(np.array([0.5, -0.2]), sigma, 5.0)
        assert trunc_t_prob(s) == pytest.approx(c, abs=1e-7)


class TestMean:
    def test_untruncated_limit(self, rng):
        sigma = random_spd(rng, 2)
        mu = np.array([0.7, -1.2])
        m = trunc_t_mean(spec(mu, sigma, 5.0, [np.inf, np.inf]))
        np.testing.assert_allclose(m, mu, atol=1e-12)

    def test_half_normal_like_case_quadrature(self):
        m = trunc_t_mean(spec([0.0], [[1.0]], 5.0, [0.0]))
        _, want, _ = quad_trunc_p1(0.0, 1.0, 5.0)
        assert m[0] == pytest.approx(want, rel=1e-9)

    def test_ohagan_closed_form(self):
        # E[T | T <= a] = -c^{-1} t_nu(a) (nu + a^2) / (nu - 1), unit scale
        from scipy.special import gammaln, stdtr
        a, nu = -0.8, 6.0
        dens = np.exp(gammaln(0.5 * (nu + 1)) - gammaln(0.5 * nu)
                      - 0.5 * np.log(nu * np.pi)
                      - 0.5 * (nu + 1) * np.log1p(a * a / nu))
        want = -dens * (nu + a * a) / (nu - 1.0) / stdtr(nu, a)
        got = trunc_t_mean(spec([0.0], [[1.0]], nu, [a]))
        assert got[0] == pytest.approx(want, rel=1e-10)

    def test_p2_against_quadrature(self, rng):
        for _ in range(4):
            sigma = random_spd(rng, 2)
            nu = rng.uniform(6.0, 14.0)
            bound = rng.normal(size=2)
            got = trunc_t_mean(spec([0.0, 0.0], sigma, nu, bound))
            _, want, _ = quad_trunc_p2(bound, sigma, nu)
            np.testing.assert_allclose(got, want, rtol=2e-6, atol=1e-8)

    def test_lower_tail_reflection_identity(self, rng):
        sigma = random_spd(rng, 2)
        mu = rng.normal(size=2)
        bound = rng.normal(size=2)
        lower = trunc_t_mean(spec(mu, sigma, 6.0, bound, side="lower"))
        upper = trunc_t_mean(spec(-mu, sigma, 6.0, -bound, side="upper"))
        # same code path by construction: bitwise equality
        assert np.array_equal(lower, -upper)

    def test_lower_tail_p2_sampling(self):
        mu = np.array([0.3, -0.1])
        sigma = np.array([[1.0, 0.4], [0.4, 2.0]])
        got = trunc_t_mean(spec(mu, sigma, 6.0, [0.0, 0.0], side="lower"))
        _, want, _, se, _ = sample_trunc_moments(
            np.zeros(2) - mu, sigma, 6.0, "lower", 400_000, seed=4)
        np.testing.assert_array_less(np.abs(got - (want + mu)), 3.5 * se + 1e-12)

    def test_mean_respects_bounds(self, rng):
        for _ in range(5):
            sigma = random_spd(rng, 3)
            bound = rng.normal(size=3)
            m = trunc_t_mean(spec(np.zeros(3), sigma, 7.0, bound))
            assert np.all(m <= bound + 1e-10)

    def test_requires_dof_above_one(self):
        with pytest.raises(ValueError, match="dof > 1"):
            trunc_t_mean(spec([0.0], [[1.0]], 0.9, [0.0]))


class TestSecondMoment:
    def test_untruncated_limit(self, rng):
        sigma = random_spd(rng, 2)
        mu = np.array([0.5, 1.0])
        nu = 7.0
        got = trunc_t_second_moment(spec(mu, sigma, nu, [np.inf, np.inf]))
        want = np.outer(mu, mu) + nu / (nu - 2.0) * sigma
        np.testing.assert_allclose(got, want, rtol=1e-10)

    def test_p1_quadrature(self):
        got = trunc_t_second_moment(spec([0.0], [[1.0]], 6.0, [0.0]))
        _, _, want = quad_trunc_p1(0.0, 1.0, 6.0)
        assert got[0, 0] == pytest.approx(want, rel=1e-9)

    def test_p2_against_quadrature(self, rng):
        for _ in range(3):
            sigma = random_spd(rng, 2)
            nu = rng.uniform(7.0, 15.0)
            bound = rng.normal(size=2)
            got = trunc_t_second_moment(spec([0.0, 0.0], sigma, nu, bound))
            _, _, want = quad_trunc_p2(bound, sigma, nu)
            np.testing.assert_allclose(got, want, rtol=5e-6, atol=1e-7)

    def test_p3_sampling_and_psd(self, rng):
        sigma = random_spd(rng, 3)
        nu = 8.0
        bound = np.array([0.0, 0.0, 0.0])
        s = spec(np.zeros(3), sigma, nu, bound, side="lower")
        mean = trunc_t_mean(s)
        second = trunc_t_second_moment(s)
        _, m_ref, s_ref, se_m, se_s = sample_trunc_moments(
            bound, sigma, nu, "lower", 500_000, seed=9)
        np.testing.assert_array_less(np.abs(mean - m_ref), 4 * se_m + 1e-12)
        np.testing.assert_array_less(np.abs(second - s_ref), 4 * se_s + 1e-12)
        cov = second - np.outer(mean, mean)
        assert np.linalg.eigvalsh(cov).min() >= -1e-8 * np.trace(cov)

    def test_requires_dof_above_two(self):
        with pytest.raises(ValueError, match="dof > 2"):
            trunc_t_second_moment(spec([0.0], [[1.0]], 1.8, [0.0]))


class TestOrthantMoments:
    def test_far_positive_location_untruncated(self):
        scale = np.diag([0.4, 0.9])
        q = np.array([12.0, 15.0])
        tm = orthant_t_moments(q, scale, 20.0)
        np.testing.assert_allclose(tm.mean, q, rtol=1e-3)
        assert tm.prob == pytest.approx(1.0, abs=1e-4)

    def test_half_t_mean(self):
        tm = orthant_t_moments(np.zeros(1), np.eye(1), 10.0)
        _, want, _ = quad_trunc_p1(0.0, 1.0, 10.0, side="lower")
        assert tm.mean[0] == pytest.approx(want, rel=1e-9)
        assert tm.mean[0] == pytest.approx(half_t_mean(10.0), rel=1e-9)
        assert tm.prob == pytest.approx(0.5, abs=1e-12)

    def test_diagonal_scale_against_quadrature(self, rng):
        # diagonal scale is not independence for the t (shared mixing
        # weight), so the exact oracle is the joint quadrature
        scale = np.diag([1.3, 0.6])
        q = np.array([0.4, -0.7])
        tm = orthant_t_moments(q, scale, 9.0)
        c, mean, _ = quad_trunc_p2(-q, scale, 9.0, side="lower")
        assert tm.prob == pytest.approx(c, abs=1e-8)
        np.testing.assert_allclose(tm.mean, q + mean, rtol=1e-6, atol=1e-9)

    def test_diagonal_product_structure_gaussian_limit(self):
        # the univariate-product factorization becomes exact as dof grows
        scale = np.diag([1.3, 0.6])
        q = np.array([0.4, -0.7])
        tm = orthant_t_moments(q, scale, 200.0)
        for i in range(2):
            uni = orthant_t_moments(q[[i]], scale[np.ix_([i], [i])], 200.0)
            assert tm.mean[i] == pytest.approx(uni.mean[0], rel=5e-3)

    def test_moments_container_consistency(self, rng):
        scale = random_spd(rng, 2)
        tm = orthant_t_moments(rng.normal(size=2), scale, 11.0)
        assert 0.0 < tm.prob <= 1.0
        assert np.all(tm.mean >= 0.0)
        cov = tm.second - np.outer(tm.mean, tm.mean)
        assert np.linalg.eigvalsh(cov).min() >= -1e-8 * np.trace(cov)
