"""
Tests for the discriminator and the adversarial losses.
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

from ebm_saliency.adversarial import (
    Discriminator,
    bce_with_logits,
    binary_cross_entropy,
    discriminate,
    egan_discriminator_loss,
    egan_generator_loss,
)
from ebm_saliency.errors import ConfigurationError
from ebm_saliency.oracles import finite_diff_gradient, gradients_agree
from ebm_saliency.saliency_generator import SaliencyGenerator


class TestLosses(unittest.TestCase):
    """Test the cross-entropy helpers."""

    def test_bce_with_logits_at_zero(self):
        loss, grad = bce_with_logits(np.zeros(4), 0.0)
        self.assertAlmostEqual(loss, np.log(2.0))
        np.testing.assert_allclose(grad, np.full(4, 0.125))

    def test_bce_with_logits_is_stable(self):
        loss, grad = bce_with_logits(np.array([800.0, -800.0]), 1.0)
        self.assertAlmostEqual(loss, 400.0)
        self.assertTrue(np.all(np.isfinite(grad)))

    def test_binary_cross_entropy(self):
        loss, grad = binary_cross_entropy(np.array([0.5, 0.5]), np.array([1.0, 0.0]))
        self.assertAlmostEqual(loss, np.log(2.0))
        np.testing.assert_allclose(grad, np.array([-1.0, 1.0]))

    def test_binary_cross_entropy_shape_mismatch(self):
        with self.assertRaises(ConfigurationError):
            binary_cross_entropy(np.zeros(3), np.zeros(4))


class TestDiscriminator(unittest.TestCase):
    """Test the patch discriminator and both EGAN objectives."""

    def setUp(self):
        rng = np.random.default_rng(0)
        self.discriminator = Discriminator(in_channels=3, width=2, seed=1, init_std=0.3)
        self.generator = SaliencyGenerator(in_channels=3, latent_dim=2, widths=(2, 3), seed=2, init_std=0.3)
        self.x = rng.uniform(size=(3, 3, 8, 8))
        self.y = (rng.uniform(size=(3, 1, 8, 8)) > 0.5).astype(float)
        self.z = rng.normal(size=(3, 2))

    def test_output_is_patch_grid(self):
        x = np.zeros((2, 3, 16, 16))
        m = np.zeros((2, 1, 16, 16))
        self.assertEqual(discriminate(self.discriminator, x, m).shape, (2, 1, 2, 2))

    def test_rejects_mismatched_map(self):
        with self.assertRaises(ConfigurationError):
            self.discriminator.discriminate(self.x, np.zeros((3, 1, 4, 4)))
        with self.assertRaises(ConfigurationError):
            self.discriminator.discriminate(np.zeros((3, 2, 8, 8)), self.y)

    def test_zero_weight_reduces_to_reconstruction(self):
        result = egan_generator_loss(self.generator, self.discriminator, self.x, self.y, self.z, lam=0.0)
        self.assertEqual(result.loss, result.reconstruction)
        for name, value in result.reconstruction_grads.items():
            np.testing.assert_array_equal(result.grads[name], value)

    def test_negative_weight_rejected(self):
        with self.assertRaises(ConfigurationError):
            egan_generator_loss(self.generator, self.discriminator, self.x, self.y, self.z, lam=-0.1)

    def test_generator_loss_leaves_discriminator_untouched(self):
        before = self.discriminator.params.copy()
        egan_generator_loss(self.generator, self.discriminator, self.x, self.y, self.z, lam=0.5)
        for name, value in before.tensors().items():
            np.testing.assert_array_equal(self.discriminator.params.tensors()[name], value)

    def test_generator_gradient(self):
        names = self.generator.params.names()
        analytic = egan_generator_loss(self.generator, self.discriminator, self.x, self.y, self.z, lam=0.5).grads

        def objective(v):
            generator = SaliencyGenerator(
                in_channels=3, latent_dim=2, widths=(2, 3), params=self.generator.params.from_vector(v, names)
            )
            return egan_generator_loss(generator, self.discriminator, self.x, self.y, self.z, lam=0.5).loss

        numeric = finite_diff_gradient(objective, self.generator.params.to_vector(names))
        ok, worst = gradients_agree(np.concatenate([analytic[n].ravel() for n in names]), numeric)
        self.assertTrue(ok, f"worst relative error {worst}")

    def test_discriminator_gradient(self):
        prediction = self.generator.predict(self.x, self.z)
        result = egan_discriminator_loss(self.discriminator, prediction, self.x, self.y)
        self.assertAlmostEqual(result.loss, result.fake_term + result.real_term)
        names = self.discriminator.params.names()

        def objective(v):
            discriminator = Discriminator(3, 2, params=self.discriminator.params.from_vector(v, names))
            return egan_discriminator_loss(discriminator, prediction, self.x, self.y).loss

        numeric = finite_diff_gradient(objective, self.discriminator.params.to_vector(names))
        ok, worst = gradients_agree(np.concatenate([result.grads[n].ravel() for n in names]), numeric)
        self.assertTrue(ok, f"worst relative error {worst}")


if __name__ == "__main__":
    unittest.main()
