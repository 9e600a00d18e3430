import math

import numpy as np
import pytest
from scipy.integrate import quad

from gatemix.measure import (
    Dataset,
    MixingMeasure,
    ThetaBox,
    conditional_density,
    log_likelihood,
    log_likelihood_grad,
    sample,
    softmax_gate,
    translate,
)

from conftest import random_measure


def density_oracle(measure, x, y):
    """Term-by-term direct summation with scalar math; no shared code path."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    logits = [float(measure.beta1[i] @ x) + measure.beta0[i] for i in range(measure.k)]
    denom = sum(math.exp(v) for v in logits)
    total = 0.0
    for i in range(measure.k):
        gate = math.exp(logits[i]) / denom
        mean = float(measure.a[i] @ x) + measure.b[i]
        var = measure.sigma[i]
        total += gate * math.exp(-((y - mean) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)
    return total


class TestSoftmaxGate:
    def test_symmetric_components_split_evenly(self):
        g = MixingMeasure([0.0, 0.0], [[0.0], [0.0]], [[1.0], [2.0]], [0.0, 0.0], [1.0, 1.0])
        w = softmax_gate(g, [0.7])
        np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-15)

    def test_log_odds_three_to_one(self):
        # exp(ln 3) / (exp(ln 3) + 1) = 3/4
        g = MixingMeasure([0.0, 0.0], [[1.0], [0.0]], [[1.0], [2.0]], [0.0, 0.0], [1.0, 1.0])
        w = softmax_gate(g, [math.log(3.0)])
        np.testing.assert_allclose(w, [0.75, 0.25], atol=1e-14)
        w0 = softmax_gate(g, [0.0])
        np.testing.assert_allclose(w0, [0.5, 0.5], atol=1e-15)

    def test_weights_positive_and_normalized(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            k = int(rng.integers(1, 6))
            d = int(rng.integers(1, 4))
            g = random_measure(rng, k, d)
            x = rng.uniform(-1, 1, d)
            w = softmax_gate(g, x)
            assert np.all(w > 0) and np.all(w < 1 + 1e-15)
            assert abs(w.sum() - 1.0) < 1e-12

    def test_overflow_safe_at_extreme_logits(self):
        g = MixingMeasure([5.0, -5.0], [[5.0], [-5.0]], [[0.0], [0.0]], [0.0, 0.0], [1.0, 1.0])
        w = softmax_gate(g, [1.0])
        assert np.all(np.isfinite(w)) and abs(w.sum() - 1.0) < 1e-12

    def test_dimension_mismatch_rejected(self):
        g = MixingMeasure([0.0], [[0.0]], [[1.0]], [0.0], [1.0])
        with pytest.raises(ValueError):
            softmax_gate(g, [0.0, 1.0])


class TestConditionalDensity:
    def test_single_component_mode(self):
        sigma = 0.4
        g = MixingMeasure([0.0], [[0.0]], [[0.0]], [2.0], [sigma])
        val = conditional_density(g, [0.0], 2.0)
        assert abs(val - 1.0 / math.sqrt(2 * math.pi * sigma)) < 1e-15

    def test_matches_direct_summation(self, two_expert_1d):
        val = conditional_density(two_expert_1d, [0.3], 0.7)
        assert abs(val - density_oracle(two_expert_1d, 0.3, 0.7)) < 1e-12

    def test_matches_direct_summation_random(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            g = random_measure(rng, int(rng.integers(1, 5)), 2)
            x = rng.uniform(-1, 1, 2)
            y = rng.uniform(-4, 4)
            assert abs(conditional_density(g, x, y) - density_oracle(g, x, y)) < 1e-12

    def test_translation_invariance_on_grid(self, two_expert_1d):
        shifted = translate(two_expert_1d, 0.8, [-0.6])
        xs = np.linspace(-1, 1, 13)
        ys = np.linspace(-3, 3, 13)
        for x in xs:
            for y in ys:
                d0 = conditional_density(two_expert_1d, [x], y)
                d1 = conditional_density(shifted, [x], y)
                assert abs(d0 - d1) < 1e-12

    def test_rejects_non_finite(self, two_expert_1d):
        with pytest.raises(ValueError):
            conditional_density(two_expert_1d, [np.nan], 0.0)
        with pytest.raises(ValueError):
            conditional_density(two_expert_1d, [0.0], np.inf)

    def test_integrates_to_one(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            g = random_measure(rng, int(rng.integers(1, 4)), 1)
            # interval wide enough for every expert's tails given the box
            mean_bound = float(np.max(np.abs(g.a)) + np.max(np.abs(g.b)))
            half = mean_bound + 8.0 * math.sqrt(float(np.max(g.sigma)))
            for x in np.linspace(-1, 1, 4):
                mass, _ = quad(lambda y: conditional_density(g, [x], y), -half, half, limit=200)
                assert abs(mass - 1.0) < 1e-6


class TestTranslate:
    def test_identity(self, two_expert_1d):
        g = translate(two_expert_1d, 0.0, [0.0])
        assert np.array_equal(g.beta0, two_expert_1d.beta0)
        assert np.array_equal(g.beta1, two_expert_1d.beta1)

    def test_group_inverse_exact(self, two_expert_1d):
        g = translate(translate(two_expert_1d, 0.37, [1.25]), -0.37, [-1.25])
        assert np.array_equal(g.beta0, two_expert_1d.beta0)
        assert np.array_equal(g.beta1, two_expert_1d.beta1)
        assert np.array_equal(g.a, two_expert_1d.a)

    def test_checked_mode_names_violated_bound(self, two_expert_1d, theta1d):
        with pytest.raises(ValueError, match="beta0"):
            translate(two_expert_1d, 100.0, [0.0], theta=theta1d)
        with pytest.raises(ValueError, match="beta1"):
            translate(two_expert_1d, 0.0, [100.0], theta=theta1d)

    def test_unchecked_mode_allows_out_of_box(self, two_expert_1d):
        g = translate(two_expert_1d, 100.0, [0.0])
        assert g.beta0[0] == 100.0


class TestSample:
    def test_deterministic_given_seed(self, two_expert_1d):
        d1 = sample(two_expert_1d, 500, seed=42)
        d2 = sample(two_expert_1d, 500, seed=42)
        assert np.array_equal(d1.x, d2.x)
        assert np.array_equal(d1.y, d2.y)

    def test_mean_matches_single_expert(self):
        sigma = 0.05
        g = MixingMeasure([0.0], [[0.0]], [[0.0]], [5.0], [sigma])
        data = sample(g, 100_000, seed=5)
        tol = 3.0 * math.sqrt(sigma / data.n)
        assert abs(float(np.mean(data.y)) - 5.0) < tol

    def test_gate_frequencies_match_softmax(self, two_expert_1d):
        # pin x by a degenerate box so empirical gate shares are binomial
        x0 = 0.4
        n = 100_000
        data = sample(two_expert_1d, n, seed=9, x_lo=[x0 - 1e-12], x_hi=[x0 + 1e-12])
        w = softmax_gate(two_expert_1d, [x0])
        # classify each draw to its nearest expert mean; experts are far
        # apart relative to their spread only probabilistically, so compare
        # responsibilities instead: use posterior-weighted count
        mean = data.x @ two_expert_1d.a.T + two_expert_1d.b
        resid = (data.y[:, None] - mean) ** 2 / two_expert_1d.sigma
        log_post = (
            np.log(w)[None, :]
            - 0.5 * (resid + np.log(two_expert_1d.sigma)[None, :])
        )
        post = np.exp(log_post - log_post.max(axis=1, keepdims=True))
        post /= post.sum(axis=1, keepdims=True)
        freq = post.mean(axis=0)
        se = math.sqrt(w[0] * (1 - w[0]) / n)
        assert abs(freq[0] - w[0]) < 3 * se + 1e-3

    def test_covariates_inside_box(self, two_expert_1d):
        data = sample(two_expert_1d, 1000, seed=1, x_lo=[-0.25], x_hi=[0.75])
        assert data.x.min() >= -0.25 and data.x.max() <= 0.75

    def test_rejects_empty(self, two_expert_1d):
        with pytest.raises(ValueError):
            sample(two_expert_1d, 0, seed=0)


class TestLogLikelihood:
    def test_single_point_at_mode(self):
        sigma = 0.7
        g = MixingMeasure([0.0], [[0.0]], [[0.0]], [1.0], [sigma])
        data = Dataset(x=np.array([[0.0]]), y=np.array([1.0]))
        expected = math.log(1.0 / math.sqrt(2 * math.pi * sigma))
        assert abs(log_likelihood(g, data) - expected) < 1e-14

    def test_translation_invariant(self, two_expert_1d):
        data = sample(two_expert_1d, 300, seed=21)
        l0 = log_likelihood(two_expert_1d, data)
        l1 = log_likelihood(translate(two_expert_1d, -0.9, [0.45]), data)
        assert abs(l0 - l1) < 1e-12

    def test_matches_pointwise_oracle(self, two_expert_1d):
        data = sample(two_expert_1d, 200, seed=2)
        oracle = np.mean([
            math.log(density_oracle(two_expert_1d, data.x[i], data.y[i]))
            for i in range(data.n)
        ])
        assert abs(log_likelihood(two_expert_1d, data) - oracle) < 1e-10


class TestGradient:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(17)
        step = 1e-5
        for _ in range(5):
            k = int(rng.integers(1, 4))
            d = int(rng.integers(1, 3))
            g = random_measure(rng, k, d)
            data = sample(g, 200, seed=int(rng.integers(1_000_000)))
            grad = log_likelihood_grad(g, data)

            def fd(field, idx):
                arrs = {name: getattr(g, name).copy() for name in g.__slots__}
                arrs[field][idx] += step
                up = log_likelihood(MixingMeasure(**arrs), data)
                arrs[field][idx] -= 2 * step
                dn = log_likelihood(MixingMeasure(**arrs), data)
                return (up - dn) / (2 * step)

            for field in ("beta0", "b", "sigma"):
                for i in range(k):
                    num = fd(field, i)
                    ana = grad[field][i]
                    assert abs(num - ana) <= 1e-4 * max(1.0, abs(num)), (field, i)
            for field in ("beta1", "a"):
                for i in range(k):
                    for u in range(d):
                        num = fd(field, (i, u))
                        ana = grad[field][i, u]
                        assert abs(num - ana) <= 1e-4 * max(1.0, abs(num)), (field, i, u)


class TestValidation:
    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            MixingMeasure([0.0], [[0.0]], [[0.0]], [0.0], [0.0])

    def test_rejects_mismatched_dims(self):
        with pytest.raises(ValueError):
            MixingMeasure([0.0], [[0.0, 1.0]], [[0.0]], [0.0], [1.0])

    def test_theta_box_requires_ordered_bounds(self):
        with pytest.raises(ValueError):
            ThetaBox(
                beta0_lo=1.0, beta0_hi=-1.0,
                beta1_lo=[-1.0], beta1_hi=[1.0],
                a_lo=[-1.0], a_hi=[1.0],
                b_lo=-1.0, b_hi=1.0,
                sigma_lo=0.1, sigma_hi=1.0,
                x_lo=[-1.0], x_hi=[1.0],
            )
