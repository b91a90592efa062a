"""
Tests for the command-line interface.
"""

import unittest
import tempfile
import shutil
import io
import json
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path
import sys

import numpy as np


# Ensure src/ is on sys.path when running this file directly with `python tests/...`
_ROOT = Path(__file__).resolve().parents[1]
_SRC = _ROOT / "src"
if str(_SRC) not in sys.path:
    sys.path.insert(0, str(_SRC))

from ebm_saliency.cli import build_parser, run
from ebm_saliency.model import SaliencyModel
from ebm_saliency.synthdata_io import read_pnm

SMALL_MODEL = {"ebm-hidden": 6, "disc-width": 2, "infer-width": 1, "latent-dim": 4, "init-std": 0.05}


def quiet_run(argv):
    """Run the CLI and return (exit code, captured stdout)."""
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = run([str(a) for a in argv])
    return code, out.getvalue()


class TestCLI(unittest.TestCase):
    """Test the subcommands end to end on a tiny dataset."""

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())
        self.data = self.temp_dir / "data"
        self.model_config = self.temp_dir / "model.json"
        self.model_config.write_text(json.dumps(SMALL_MODEL))
        code, _ = quiet_run(["gen-data", "--n", 4, "--size", 16, "--seed", 3, "--out", self.data])
        self.assertEqual(code, 0)

    def tearDown(self):
        if self.temp_dir.exists():
            shutil.rmtree(self.temp_dir)

    def train(self, out, *extra):
        argv = ["train", "--data", self.data, "--out", out, "--config", self.model_config]
        argv += ["--epochs", 1, "--batch-size", 2, "--k-prior", 1, "--k-post", 1, *extra]
        return quiet_run(argv)

    def test_gen_data(self):
        self.assertTrue((self.data / "img_0003.ppm").exists())
        self.assertTrue((self.data / "gt_0003.pgm").exists())
        echoed = json.loads((self.data / "config.json").read_text())
        self.assertEqual((echoed["n"], echoed["size"], echoed["seed"]), (4, 16, 3))

    def test_gen_data_config_file(self):
        config = self.temp_dir / "gen.json"
        config.write_text(json.dumps({"n": 2, "size": 16, "channels": 1}))
        code, _ = quiet_run(["gen-data", "--config", config, "--n", 3, "--out", self.temp_dir / "gray"])
        self.assertEqual(code, 0)
        self.assertEqual(len(list((self.temp_dir / "gray").glob("img_*.pgm"))), 3)

    def test_gen_data_rejects_unknown_config_key(self):
        config = self.temp_dir / "gen.json"
        config.write_text(json.dumps({"colours": 3}))
        code, output = quiet_run(["gen-data", "--config", config, "--out", self.temp_dir / "x"])
        self.assertEqual(code, 1)
        self.assertIn("colours", output)

    def test_train_writes_checkpoint_config_and_report(self):
        ckpt = self.temp_dir / "model.ckpt"
        code, output = self.train(ckpt)
        self.assertEqual(code, 0, output)
        model = SaliencyModel.load(ckpt)
        self.assertEqual((model.kind, model.config.epochs, model.config.latent_dim), ("eabp", 1, 4))
        self.assertTrue(Path(f"{ckpt}.config.json").exists())
        report = Path(f"{ckpt}.report.csv").read_text().splitlines()
        self.assertEqual(len(report), 2)

    def test_flags_override_config_file(self):
        config = self.temp_dir / "train.json"
        config.write_text(json.dumps({**SMALL_MODEL, "epochs": 3, "lambda": 0.3}))
        ckpt = self.temp_dir / "model.ckpt"
        argv = ["train", "--data", self.data, "--out", ckpt, "--config", config, "--epochs", 1]
        argv += ["--batch-size", 2, "--k-prior", 1, "--k-post", 1]
        code, _ = quiet_run(argv)
        self.assertEqual(code, 0)
        cfg = SaliencyModel.load(ckpt).config
        self.assertEqual((cfg.epochs, cfg.lam), (1, 0.3))

    def test_echoed_config_reproduces_run(self):
        first = self.temp_dir / "first.ckpt"
        self.assertEqual(self.train(first, "--seed", 5)[0], 0)
        second = self.temp_dir / "second.ckpt"
        code, _ = quiet_run(["train", "--data", self.data, "--out", second, "--config", f"{first}.config.json"])
        self.assertEqual(code, 0)
        self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_echoed_config_alone_reruns_training(self):
        ckpt = self.temp_dir / "model.ckpt"
        self.assertEqual(self.train(ckpt, "--dtype", "f32")[0], 0)
        echo = Path(f"{ckpt}.config.json")
        echoed = json.loads(echo.read_text())
        self.assertEqual(Path(echoed["data"]), self.data.resolve())
        self.assertEqual(Path(echoed["out"]), ckpt.resolve())
        self.assertEqual(echoed["dtype"], "f32")

        first = ckpt.read_bytes()
        ckpt.unlink()
        code, output = quiet_run(["train", "--config", echo])
        self.assertEqual(code, 0, output)
        self.assertEqual(ckpt.read_bytes(), first)

    def test_config_without_paths_is_usage_error(self):
        config = self.temp_dir / "paths.json"
        config.write_text(json.dumps({**SMALL_MODEL, "data": str(self.data)}))
        self.assertEqual(quiet_run(["train", "--config", config])[0], 2)

    def test_predict_and_eval(self):
        ckpt = self.temp_dir / "model.ckpt"
        self.assertEqual(self.train(ckpt)[0], 0)
        preds = self.temp_dir / "pred"
        code, _ = quiet_run(["predict", "--ckpt", ckpt, "--data", self.data, "--iter", 1, "--out", preds])
        self.assertEqual(code, 0)
        self.assertEqual(len(list(preds.glob("pred_*.pgm"))), 4)
        for path in preds.glob("unc_*.pgm"):
            image = read_pnm(path)
            self.assertEqual(image.maxval, 65535)
            np.testing.assert_array_equal(image.data, np.zeros_like(image.data))

        report = self.temp_dir / "report.csv"
        code, output = quiet_run(["eval", "--pred", preds, "--data", self.data, "--out", report])
        self.assertEqual(code, 0)
        self.assertIn("MAE", output)
        self.assertEqual(len(report.read_text().splitlines()), 6)

    def test_predict_rejects_model_mismatch(self):
        ckpt = self.temp_dir / "model.ckpt"
        self.assertEqual(self.train(ckpt)[0], 0)
        code, output = quiet_run(
            ["predict", "--ckpt", ckpt, "--data", self.data, "--model", "egan", "--out", self.temp_dir / "p"]
        )
        self.assertEqual(code, 1)
        self.assertIn("eabp", output)

    def test_usage_errors(self):
        self.assertEqual(quiet_run(["train", "--data", self.data])[0], 2)
        self.assertEqual(quiet_run(["train", "--data", self.data, "--out", "m", "--bogus", 1])[0], 2)
        self.assertEqual(quiet_run([])[0], 2)

    def test_runtime_errors(self):
        code, _ = self.train(self.temp_dir / "m.ckpt", "--batch-size", 1)
        self.assertEqual(code, 1)
        code, _ = quiet_run(["train", "--data", self.temp_dir / "absent", "--out", self.temp_dir / "m.ckpt"])
        self.assertEqual(code, 1)

    def test_parser_lists_commands(self):
        help_text = build_parser().format_help()
        for command in ("gen-data", "train", "predict", "eval", "oracle-check"):
            self.assertIn(command, help_text)


if __name__ == "__main__":
    unittest.main()
