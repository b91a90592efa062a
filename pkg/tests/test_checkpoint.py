"""
Tests for checkpoint files.
"""

import unittest
import tempfile
import shutil
from pathlib import Path
import sys

import numpy as np


# Ensure src/ is on sys.path when running this file directly with `python tests/...`
_ROOT = Path(__file__).resolve().parents[1]
_SRC = _ROOT / "src"
if str(_SRC) not in sys.path:
    sys.path.insert(0, str(_SRC))

from ebm_saliency.checkpoint import load_checkpoint, save_checkpoint
from ebm_saliency.errors import CheckpointError


class TestCheckpoint(unittest.TestCase):
    """Test checkpoint writing and reading."""

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())
        rng = np.random.default_rng(0)
        self.tensors = {"b.weight": rng.normal(size=(3, 2, 4, 4)), "a.bias": rng.normal(size=5)}

    def tearDown(self):
        if self.temp_dir.exists():
            shutil.rmtree(self.temp_dir)

    def test_f64_is_exact(self):
        path = save_checkpoint(self.temp_dir / "m.ckpt", self.tensors, metadata={"model": "eabp"})
        tensors, metadata = load_checkpoint(path)
        self.assertEqual(metadata, {"model": "eabp"})
        for name, value in self.tensors.items():
            np.testing.assert_array_equal(tensors[name], value)

    def test_header_lists_tensors_sorted(self):
        path = save_checkpoint(self.temp_dir / "m.ckpt", self.tensors)
        header = path.read_bytes().split(b"\n", 1)[0].decode("utf-8")
        self.assertLess(header.index('"a.bias"'), header.index('"b.weight"'))

    def test_f32_widens_on_load(self):
        path = save_checkpoint(self.temp_dir / "m.ckpt", self.tensors, dtype="f32")
        tensors, _ = load_checkpoint(path)
        self.assertEqual(tensors["a.bias"].dtype, np.float64)
        np.testing.assert_allclose(tensors["a.bias"], self.tensors["a.bias"], rtol=1e-6)

    def test_unknown_dtype(self):
        with self.assertRaises(CheckpointError):
            save_checkpoint(self.temp_dir / "m.ckpt", self.tensors, dtype="f16")

    def test_truncated_payload(self):
        path = save_checkpoint(self.temp_dir / "m.ckpt", self.tensors)
        path.write_bytes(path.read_bytes()[:-8])
        with self.assertRaises(CheckpointError):
            load_checkpoint(path)

    def test_missing_header_terminator(self):
        path = self.temp_dir / "bad.ckpt"
        path.write_bytes(b'{"tensors": []}')
        with self.assertRaises(CheckpointError):
            load_checkpoint(path)

    def test_malformed_header(self):
        path = self.temp_dir / "bad.ckpt"
        path.write_bytes(b"not json\n")
        with self.assertRaises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file(self):
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.temp_dir / "absent.ckpt")


if __name__ == "__main__":
    unittest.main()
