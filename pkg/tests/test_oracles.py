"""
Tests for the reference computations used by the gradient and sampler checks.
"""

import unittest
from pathlib import Path
import sys

import numpy as np


# Ensure src/ is on sys.path when running this file directly with `python tests/...`
_ROOT = Path(__file__).resolve().parents[1]
_SRC = _ROOT / "src"
if str(_SRC) not in sys.path:
    sys.path.insert(0, str(_SRC))

from ebm_saliency.amortized import GaussianLatentStats, kl_diag_gaussians
from ebm_saliency.errors import ConfigurationError, NumericalError
from ebm_saliency.oracles import (
    discrete_langevin_variance,
    finite_diff_gradient,
    gradients_agree,
    grid_posterior,
    linear_gaussian_posterior,
    monte_carlo_kl,
)


class TestFiniteDifferences(unittest.TestCase):
    """Test the finite-difference helpers."""

    def test_quadratic(self):
        point = np.array([[1.0, -2.0], [0.5, 3.0]])
        grad = finite_diff_gradient(lambda v: float(np.sum(v**2)), point)
        np.testing.assert_allclose(grad, 2.0 * point, rtol=1e-8)

    def test_point_is_not_modified(self):
        point = np.array([1.0, 2.0])
        finite_diff_gradient(lambda v: float(v @ v), point)
        np.testing.assert_array_equal(point, np.array([1.0, 2.0]))

    def test_non_finite_value(self):
        with self.assertRaises(NumericalError):
            finite_diff_gradient(lambda v: float(np.log(v[0])), np.array([0.0]))

    def test_agreement_rule(self):
        ok, worst = gradients_agree(np.array([1.0, 1e-10]), np.array([1.00001, 0.0]))
        self.assertTrue(ok)
        self.assertAlmostEqual(worst, 1e-5, places=8)
        ok, _ = gradients_agree(np.array([1.0]), np.array([1.01]))
        self.assertFalse(ok)


class TestGaussianOracles(unittest.TestCase):
    """Test the closed-form posterior and Langevin variance."""

    def test_closed_form_matches_grid(self):
        rng = np.random.default_rng(0)
        for _ in range(3):
            weight = 0.7 * rng.normal(size=(3, 2))
            bias = 0.3 * rng.normal(size=3)
            y = rng.normal(size=3)
            exact = linear_gaussian_posterior(weight, bias, y, sigma_eps=0.8)
            grid = grid_posterior(weight, bias, y, sigma_eps=0.8)
            np.testing.assert_allclose(grid.mean, exact.mean, atol=1e-3)
            np.testing.assert_allclose(grid.covariance, exact.covariance, atol=1e-3)

    def test_prior_only_posterior(self):
        post = linear_gaussian_posterior(np.zeros((2, 3)), np.zeros(2), np.ones(2), sigma_z=2.0)
        np.testing.assert_allclose(post.mean, np.zeros(3))
        np.testing.assert_allclose(post.covariance, 4.0 * np.eye(3))

    def test_grid_needs_two_dimensions(self):
        with self.assertRaises(ConfigurationError):
            grid_posterior(np.zeros((2, 3)), np.zeros(2), np.zeros(2))

    def test_discrete_langevin_variance(self):
        self.assertAlmostEqual(discrete_langevin_variance(1.0, 0.1), 1.0 / 0.95)
        with self.assertRaises(ConfigurationError):
            discrete_langevin_variance(1.0, 2.5)

    def test_monte_carlo_kl_agrees_with_closed_form(self):
        q = GaussianLatentStats(np.zeros((1, 1)), np.zeros((1, 1)))
        p = GaussianLatentStats(np.zeros((1, 1)), np.ones((1, 1)))
        closed = kl_diag_gaussians(q, p)
        self.assertAlmostEqual(closed, 0.5 + 0.5 * np.exp(-2.0))
        estimate, stderr = monte_carlo_kl(
            np.zeros(1), np.ones(1), np.zeros(1), np.full(1, np.e), np.random.default_rng(1), samples=200_000
        )
        self.assertLess(abs(estimate - closed), 4.0 * stderr)


if __name__ == "__main__":
    unittest.main()
