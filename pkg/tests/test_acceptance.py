"""
Tests for the oracle-check suite.
"""

import unittest
from pathlib import Path
from unittest import mock
import sys

import numpy as np
import pytest


# Ensure src/ is on sys.path when running this file directly with `python tests/...`
_ROOT = Path(__file__).resolve().parents[1]
_SRC = _ROOT / "src"
if str(_SRC) not in sys.path:
    sys.path.insert(0, str(_SRC))

from ebm_saliency.acceptance import (
    KL_MAX_CHUNKS,
    QUICK,
    QUICK_COORDS,
    CheckResult,
    _layer_cases,
    check_discriminator,
    check_energy_net,
    check_kl_gradient,
    check_kl_monte_carlo,
    check_layer,
    check_oracles,
    format_table,
    run_oracle_checks,
)


class TestChecks(unittest.TestCase):
    """Test individual checks."""

    def test_oracle_self_check(self):
        passed, detail = check_oracles()
        self.assertTrue(passed, detail)

    def test_every_layer_kind(self):
        cases = _layer_cases(np.random.default_rng(0))
        self.assertEqual(len(cases), 13)
        for label, net, shape, extras, mode in cases:
            passed, worst = check_layer(net, shape, extras, mode, np.random.default_rng(1))
            self.assertTrue(passed, f"{label}: worst relative error {worst}")

    def test_small_networks(self):
        for check in (check_energy_net, check_discriminator):
            passed, worst = check(np.random.default_rng(2), QUICK_COORDS)
            self.assertTrue(passed, f"{check.__name__}: worst relative error {worst}")

    def test_kl_gradient(self):
        passed, worst = check_kl_gradient(np.random.default_rng(3))
        self.assertTrue(passed, f"worst relative error {worst}")

    def test_format_table(self):
        table = format_table([CheckResult("alpha", True, "ok", 0.5), CheckResult("beta", False, "bad", 1.0)])
        lines = table.splitlines()
        self.assertIn("PASS", lines[2])
        self.assertIn("FAIL", lines[3])
        self.assertTrue(lines[3].endswith("bad"))


def closed_form_kl(mu_q, sigma_q, mu_p, sigma_p):
    return float(np.sum(np.log(sigma_p / sigma_q) + (sigma_q**2 + (mu_q - mu_p) ** 2) / (2.0 * sigma_p**2) - 0.5))


class TestKLMonteCarlo(unittest.TestCase):
    """Test the Monte-Carlo KL acceptance rule."""

    def test_real_estimates_pass(self):
        passed, detail = check_kl_monte_carlo(QUICK, seed=0)
        self.assertTrue(passed, detail)

    def test_noisy_biased_estimate_fails(self):
        # 2% off with a 1% standard error per chunk: only the relative tolerance can reject it
        def biased(mu_q, sigma_q, mu_p, sigma_p, rng, samples):
            closed = closed_form_kl(mu_q, sigma_q, mu_p, sigma_p)
            return 1.02 * closed, 0.01 * closed

        with mock.patch("ebm_saliency.oracles.monte_carlo_kl", side_effect=biased) as estimator:
            passed, detail = check_kl_monte_carlo(QUICK, seed=0)
        self.assertFalse(passed, detail)
        self.assertEqual(estimator.call_count, QUICK.kl_pairs * KL_MAX_CHUNKS)

    def test_precise_estimate_stops_after_one_chunk(self):
        def exact(mu_q, sigma_q, mu_p, sigma_p, rng, samples):
            closed = closed_form_kl(mu_q, sigma_q, mu_p, sigma_p)
            return 1.005 * closed, 1e-4 * closed

        with mock.patch("ebm_saliency.oracles.monte_carlo_kl", side_effect=exact) as estimator:
            passed, detail = check_kl_monte_carlo(QUICK, seed=0)
        self.assertTrue(passed, detail)
        self.assertEqual(estimator.call_count, QUICK.kl_pairs)


@pytest.mark.slow
class TestQuickSuite(unittest.TestCase):
    """Run the default oracle-check suite end to end."""

    def test_all_checks_pass(self):
        results = run_oracle_checks(seed=0)
        failed = [f"{r.name}: {r.detail}" for r in results if not r.passed]
        self.assertEqual(failed, [])


if __name__ == "__main__":
    unittest.main()
