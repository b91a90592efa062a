"""
Tests for the training configuration.
"""

import unittest
import tempfile
import shutil
from pathlib import Path
import sys


# Ensure src/ is on sys.path when running this file directly with `python tests/...`
_ROOT = Path(__file__).resolve().parents[1]
_SRC = _ROOT / "src"
if str(_SRC) not in sys.path:
    sys.path.insert(0, str(_SRC))

from ebm_saliency.config import TrainingConfig, load_config_file, normalize_key, write_config_file
from ebm_saliency.errors import ConfigurationError


class TestTrainingConfig(unittest.TestCase):
    """Test configuration defaults, overlays and validation."""

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        if self.temp_dir.exists():
            shutil.rmtree(self.temp_dir)

    def test_full_scale_defaults(self):
        cfg = TrainingConfig().validate()
        self.assertEqual((cfg.latent_dim, cfg.k_prior, cfg.k_post), (32, 6, 6))
        self.assertEqual((cfg.step_prior, cfg.step_post), (0.4, 0.1))
        self.assertEqual((cfg.lr_gen, cfg.lr_disc, cfg.lr_ebm), (2.5e-5, 1e-5, 1e-4))
        self.assertEqual((cfg.lam, cfg.batch_size), (0.1, 10))

    def test_key_spellings(self):
        self.assertEqual(normalize_key("--batch-size"), "batch_size")
        self.assertEqual(normalize_key("lambda"), "lam")
        cfg = TrainingConfig.from_dict({"lambda": 0.5, "batch-size": 4, "model": "egan"})
        self.assertEqual((cfg.lam, cfg.batch_size, cfg.model), (0.5, 4, "egan"))

    def test_overlay_keeps_base_and_skips_none(self):
        base = TrainingConfig.from_dict({"epochs": 3, "seed": 9})
        cfg = TrainingConfig.from_dict({"epochs": 5, "seed": None}, base=base)
        self.assertEqual((cfg.epochs, cfg.seed), (5, 9))

    def test_numeric_coercion(self):
        cfg = TrainingConfig.from_dict({"lr_gen": 1, "epochs": 4.0})
        self.assertIsInstance(cfg.lr_gen, float)
        self.assertIsInstance(cfg.epochs, int)

    def test_rejections(self):
        for data in (
            {"unknown": 1},
            {"model": "vae"},
            {"batch_size": 1},
            {"lambda": -0.1},
            {"step_prior": 0},
            {"k_post": -1},
            {"prior": "flow"},
            {"reconstruction": "l1"},
            {"train_discriminator": "yes"},
        ):
            with self.assertRaises(ConfigurationError, msg=str(data)):
                TrainingConfig.from_dict(data)

    def test_rejects_booleans_for_numbers(self):
        keys = ("latent_dim", "ebm_hidden", "disc_width", "infer_width", "batch_size", "epochs", "lr_gen", "lambda")
        for key in keys:
            with self.assertRaises(ConfigurationError, msg=key):
                TrainingConfig.from_dict({key: True})
        with self.assertRaises(ConfigurationError):
            TrainingConfig(latent_dim=True).validate()

    def test_config_file(self):
        path = self.temp_dir / "cfg.json"
        path.write_text('{"batch-size": 6, "lambda": 0.2}')
        self.assertEqual(load_config_file(path), {"batch_size": 6, "lam": 0.2})

    def test_written_config_reloads(self):
        cfg = TrainingConfig.from_dict({"model": "evae", "epochs": 2})
        path = write_config_file(self.temp_dir / "out" / "config.json", cfg.to_dict())
        self.assertEqual(TrainingConfig.from_dict(load_config_file(path)), cfg)

    def test_bad_config_files(self):
        bad = self.temp_dir / "bad.json"
        bad.write_text("{not json")
        listing = self.temp_dir / "list.json"
        listing.write_text("[1, 2]")
        for path in (bad, listing, self.temp_dir / "absent.json"):
            with self.assertRaises(ConfigurationError):
                load_config_file(path)


if __name__ == "__main__":
    unittest.main()
