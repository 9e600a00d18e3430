import math

import numpy as np
import pytest

from gatemix.divergence import QuadratureSpec, hellinger_sq, total_variation
from gatemix.measure import MixingMeasure, translate

from conftest import random_measure


def gaussian_pair(b1, b2, sigma):
    """Two single-expert measures with flat gates and x-free means."""
    g1 = MixingMeasure([0.0], [[0.0]], [[0.0]], [b1], [sigma])
    g2 = MixingMeasure([0.0], [[0.0]], [[0.0]], [b2], [sigma])
    return g1, g2


def phi(z):
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


SPEC = QuadratureSpec(n_x=64, n_y=2001, seed=0)


class TestHellinger:
    def test_identical_measures_zero(self, two_expert_1d):
        est = hellinger_sq(two_expert_1d, two_expert_1d, SPEC)
        assert abs(est.value) < 1e-12

    def test_translation_invariance(self, two_expert_1d):
        shifted = translate(two_expert_1d, 0.6, [-0.4])
        est = hellinger_sq(two_expert_1d, shifted, SPEC)
        assert abs(est.value) < 1e-10

    def test_equal_variance_closed_form(self):
        # Bhattacharyya coefficient of N(b1, s), N(b2, s) with variance s
        for b1, b2, sigma in [(0.0, 1.0, 0.5), (-1.0, 2.0, 1.3), (0.3, 0.4, 0.1)]:
            g1, g2 = gaussian_pair(b1, b2, sigma)
            expected = 1.0 - math.exp(-((b1 - b2) ** 2) / (8.0 * sigma))
            est = hellinger_sq(g1, g2, SPEC)
            assert abs(est.value - expected) < 1e-6

    def test_symmetry(self):
        rng = np.random.default_rng(10)
        g1 = random_measure(rng, 2, 1, margin=0.6)
        g2 = random_measure(rng, 2, 1, margin=0.6)
        a = hellinger_sq(g1, g2, SPEC)
        b = hellinger_sq(g2, g1, SPEC)
        assert abs(a.value - b.value) < 1e-10

    def test_range(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            g1 = random_measure(rng, int(rng.integers(1, 4)), 1, margin=0.6)
            g2 = random_measure(rng, int(rng.integers(1, 4)), 1, margin=0.6)
            est = hellinger_sq(g1, g2, SPEC)
            assert -1e-9 <= est.value <= 1.0 + 1e-9

    def test_triangle_inequality(self):
        rng = np.random.default_rng(12)
        for _ in range(5):
            g1 = random_measure(rng, 2, 1, margin=0.6)
            g2 = random_measure(rng, 2, 1, margin=0.6)
            g3 = random_measure(rng, 2, 1, margin=0.6)
            h12 = hellinger_sq(g1, g2, SPEC)
            h13 = hellinger_sq(g1, g3, SPEC)
            h32 = hellinger_sq(g3, g2, SPEC)
            lhs = math.sqrt(max(h12.value, 0.0))
            rhs = math.sqrt(max(h13.value, 0.0)) + math.sqrt(max(h32.value, 0.0))
            se = 3.0 * (h12.se + h13.se + h32.se)
            assert lhs <= rhs + se + 1e-9

    def test_rejects_too_small_interval(self, two_expert_1d):
        bad = QuadratureSpec(n_x=16, n_y=1001, y_halfwidth=1.0, seed=0)
        with pytest.raises(ValueError, match="y_halfwidth"):
            hellinger_sq(two_expert_1d, two_expert_1d, bad)

    def test_dimension_mismatch(self, two_expert_1d):
        other = MixingMeasure([0.0], [[0.0, 0.0]], [[0.0, 0.0]], [0.0], [1.0])
        with pytest.raises(ValueError):
            hellinger_sq(two_expert_1d, other, SPEC)


class TestTotalVariation:
    def test_identical_measures_zero(self, two_expert_1d):
        est = total_variation(two_expert_1d, two_expert_1d, SPEC)
        assert abs(est.value) < 1e-12

    def test_equal_variance_closed_form(self):
        for b1, b2, sigma in [(0.0, 1.0, 0.5), (-1.0, 2.0, 1.3), (0.3, 0.4, 0.1)]:
            g1, g2 = gaussian_pair(b1, b2, sigma)
            expected = 2.0 * phi(abs(b1 - b2) / (2.0 * math.sqrt(sigma))) - 1.0
            est = total_variation(g1, g2, SPEC)
            assert abs(est.value - expected) < 1e-6

    def test_bounded_by_scaled_hellinger(self):
        # V <= sqrt(2) h, checked with a 3-sigma allowance
        rng = np.random.default_rng(13)
        for _ in range(20):
            g1 = random_measure(rng, int(rng.integers(1, 4)), 1, margin=0.6)
            g2 = random_measure(rng, int(rng.integers(1, 4)), 1, margin=0.6)
            v = total_variation(g1, g2, SPEC)
            h2 = hellinger_sq(g1, g2, SPEC)
            h = math.sqrt(max(h2.value, 0.0))
            dh = h2.se / (2.0 * h) if h > 1e-9 else h2.se
            assert v.value <= math.sqrt(2.0) * h + 3.0 * (v.se + dh) + 1e-6

    def test_determinism(self, two_expert_1d, separated_1d):
        a = total_variation(two_expert_1d, separated_1d, SPEC)
        b = total_variation(two_expert_1d, separated_1d, SPEC)
        assert a.value == b.value and a.se == b.se
