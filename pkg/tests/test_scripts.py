"""
Tests for the development helper in scripts/.
"""

import unittest
import importlib.util
import io
import os
from contextlib import redirect_stdout
from pathlib import Path
from unittest import mock

_ROOT = Path(__file__).resolve().parents[1]


def load_helper():
    cwd = os.getcwd()
    spec = importlib.util.spec_from_file_location("dev_scripts", _ROOT / "scripts" / "scripts.py")
    module = importlib.util.module_from_spec(spec)
    try:
        with redirect_stdout(io.StringIO()):
            spec.loader.exec_module(module)
    finally:
        os.chdir(cwd)
    return module


class TestDevelopmentHelper(unittest.TestCase):
    """Test the help text and action dispatch of scripts/scripts.py."""

    def setUp(self):
        self.helper = load_helper()

    def test_help_names_project_and_actions(self):
        out = io.StringIO()
        with mock.patch("sys.argv", ["scripts.py", "--help"]), redirect_stdout(out):
            with self.assertRaises(SystemExit) as cm:
                self.helper.main()
        self.assertEqual(cm.exception.code, 0)
        text = out.getvalue()
        self.assertIn("ebm-saliency", text)
        for action in ("oracle-check", "slow", "toy"):
            self.assertIn(action, text)
        self.assertNotIn("project generator", text.lower())

    def test_oracle_check_runs_cli_module(self):
        with mock.patch.object(self.helper, "run_command", return_value=True) as run_command:
            with mock.patch("sys.argv", ["scripts.py", "oracle-check"]), redirect_stdout(io.StringIO()):
                self.assertEqual(self.helper.main(), 0)
        run_command.assert_called_once_with("python3 -m ebm_saliency oracle-check", "Running oracle checks")

    def test_failed_step_stops_toy_pipeline(self):
        with mock.patch.object(self.helper, "run_command", side_effect=[True, False]) as run_command:
            self.assertFalse(self.helper.run_toy_pipeline())
        self.assertEqual(run_command.call_count, 2)
        self.assertIn("gen-data", run_command.call_args_list[0].args[0])


if __name__ == "__main__":
    unittest.main()
