"""Ground-truth sets and the score-optimality checks.

Reference lengths come from Gaussian quantiles (scipy) and masses from
adaptive quadrature, neither of which shares code with the bisection.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize, stats

from aqcp.conformal import CandidateGrid
from aqcp.datagen import NOISE_SIGMA, mu
from aqcp.oracle import (
    GaussianModel,
    MixtureModel,
    UniformModel,
    brute_force_knn_density,
    check_s1_equivalence,
    check_s2_gaussian_form,
    hdr_mass,
    optimal_set,
    superlevel_intervals,
    true_density,
)

Z95 = stats.norm.ppf(0.95)


def separated_x():
    """An input where the two modes are about 20 sigma apart."""
    return optimize.brentq(lambda x: mu(x) - 0.5, 0.0, 1.9)


def quad_mass(x, intervals):
    return sum(integrate.quad(lambda y: true_density(x, y), a, b, epsabs=1e-13)[0] for a, b in intervals)


class TestDensity:
    def test_coincident_peak(self):
        assert true_density(0.0, 0.0) == pytest.approx(1 / (0.05 * math.sqrt(2 * math.pi)))
        assert true_density(0.0, 0.0) == pytest.approx(7.9788, abs=1e-4)

    def test_mu_at_ten(self):
        assert mu(10.0) == pytest.approx(0.5 * math.sin(8) + 0.5)
        assert mu(10.0) == pytest.approx(0.99468, abs=1e-5)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-10, 10), st.floats(-2, 2))
    def test_symmetric(self, x, y):
        assert true_density(x, y) == pytest.approx(true_density(x, -y), rel=1e-12, abs=1e-300)

    @pytest.mark.parametrize("x", [-9.0, -2.5, 0.0, 0.3, 4.0])
    def test_normalised(self, x):
        total, _ = integrate.quad(lambda y: true_density(x, y), -3, 3, points=[-mu(x), mu(x)], limit=200)
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_matches_scipy_mixture(self):
        ys = np.linspace(-2, 2, 101)
        ref = MixtureModel(float(mu(1.3))).pdf(ys)
        assert np.allclose(true_density(1.3, ys), ref, rtol=1e-12)


class TestOptimalSet:
    def test_separated_length(self):
        c = optimal_set(separated_x(), 0.1)
        assert len(c.intervals) == 2
        assert c.length == pytest.approx(4 * Z95 * NOISE_SIGMA, abs=1e-4)
        assert c.length == pytest.approx(0.32897, abs=1e-3)

    def test_coincident_length(self):
        c = optimal_set(0.0, 0.1)
        assert len(c.intervals) == 1
        assert c.length == pytest.approx(2 * Z95 * NOISE_SIGMA, abs=1e-6)
        assert c.length == pytest.approx(0.16449, abs=1e-4)

    @pytest.mark.parametrize("alpha", [0.05, 0.1, 0.2])
    @pytest.mark.parametrize("x", [-7.3, -1.0, 0.0, 0.195, 2.2, 9.9])
    def test_mass_by_quadrature(self, x, alpha):
        c = optimal_set(x, alpha)
        assert c.mass == pytest.approx(1 - alpha, abs=1e-9)
        assert quad_mass(x, c.intervals) == pytest.approx(1 - alpha, abs=1e-4)

    def test_alpha_one_empty(self):
        c = optimal_set(1.0, 1.0)
        assert c.intervals == () and c.size == 0

    def test_alpha_zero_rejected(self):
        with pytest.raises(ValueError):
            optimal_set(1.0, 0.0)

    def test_grid_size_close_to_length(self):
        c = optimal_set(separated_x(), 0.1)
        assert abs(c.size - c.length) <= 2 * len(c.intervals) * CandidateGrid().spacing

    def test_smaller_than_any_other_mass_set(self):
        # any symmetric pair of intervals centred off the modes needs more length
        x = separated_x()
        c = optimal_set(x, 0.1)
        m = float(mu(x))
        for shift in (0.01, 0.02, 0.05):
            half = optimize.brentq(
                lambda h: 2 * (quad_mass(x, [(m + shift - h, m + shift + h)])) - 0.9, 0.01, 1.0
            )
            assert 4 * half > c.length

    def test_nested_in_alpha(self):
        x = 3.7
        small, big = optimal_set(x, 0.2), optimal_set(x, 0.05)
        assert np.all(big.prediction_set.mask[small.prediction_set.mask])
        assert big.length > small.length

    def test_superlevel_plain_gaussian(self):
        pdf = lambda y: stats.norm.pdf(y)
        t = stats.norm.pdf(1.0)
        (a, b), = superlevel_intervals(pdf, t, -5, 5)
        assert a == pytest.approx(-1.0, abs=1e-12) and b == pytest.approx(1.0, abs=1e-12)


class TestS1:
    def test_gaussian_true(self):
        assert check_s1_equivalence(0.0, GaussianModel(0.1, 0.3))

    def test_separated_mixture_false(self):
        assert not check_s1_equivalence(separated_x(), MixtureModel(0.5))

    def test_constant_density_true(self):
        assert check_s1_equivalence(0.0, UniformModel(-5, 5))


class TestS2:
    def test_at_mean(self):
        assert check_s2_gaussian_form(0.0, 0.3, 0.2, 0.3) == pytest.approx(0.0, abs=1e-12)

    def test_ninety_percent_point(self):
        y = 0.3 + Z95 * 0.2
        assert 2 * stats.norm.cdf(Z95) - 1 == pytest.approx(0.9)
        assert check_s2_gaussian_form(0.0, 0.3, 0.2, y) <= 1e-4

    def test_far_tail(self):
        assert check_s2_gaussian_form(0.0, 0.0, 1.0, 30.0) <= 1e-9

    def test_sigma_positive(self):
        with pytest.raises(ValueError):
            check_s2_gaussian_form(0.0, 0.0, 0.0, 1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-3, 3), st.floats(0.01, 2), st.floats(-6, 6))
    def test_residual_small(self, mean, sigma, z):
        assert check_s2_gaussian_form(0.0, mean, sigma, mean + z * sigma) <= 1e-4

    def test_hdr_mass_uniform_flank(self):
        pdf = lambda v: stats.norm.pdf(v, 1.0, 0.5)
        assert hdr_mass(pdf, 1.5, 1.0, -10, 10) == pytest.approx(2 * stats.norm.cdf(1.0) - 1, abs=1e-10)


class TestKnnDensity:
    def test_formula(self):
        assert brute_force_knn_density([0.0, 1.0, 2.0, 10.0], 0.0, 2) == pytest.approx(2 / (2 * 4 * 1.0))

    def test_zero_distance(self):
        assert brute_force_knn_density([0.5, 0.5], 0.5, 2) == math.inf

    def test_k_range(self):
        with pytest.raises(ValueError):
            brute_force_knn_density([0.0], 0.0, 2)

    def test_uniform_limit(self):
        samples = np.linspace(-1, 1, 10_001)
        k = math.ceil(math.sqrt(samples.size))
        assert brute_force_knn_density(samples, 0.0, k) == pytest.approx(0.5, rel=1e-2)
