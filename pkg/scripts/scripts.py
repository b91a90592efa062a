#!/usr/bin/env python3
"""
Development helper for ebm-saliency.

Actions:
    clean         remove build, cache and coverage artifacts
    test          fast test suite (everything not marked slow)
    slow          toy training runs, acceptance runs and the full oracle suite
    oracle-check  the quick gradient and sampler checks through the CLI
    toy           generate the toy dataset, train with configs/toy.json, predict and evaluate
    lint          flake8 and mypy over src/ and tests/
    format        black over src/ and tests/
    build         clean, then build the sdist and wheel
    all           format, lint, fast tests and build
"""

import os
import sys
import subprocess
import shutil
from pathlib import Path

# Always operate from the repository root (parent of this file's directory)
THIS_DIR = Path(__file__).resolve().parent
REPO_ROOT = THIS_DIR.parent
if Path.cwd().resolve() != REPO_ROOT:
    os.chdir(REPO_ROOT)
    print(f"📍 Working directory changed to repository root: {REPO_ROOT}")

TOY_DIR = Path("runs") / "toy"


def run_command(command, description=""):
    """Run a command and handle errors."""

    if description:
        print(f"🔄 {description}...")

    try:
        result = subprocess.run(command, shell=True, check=True, capture_output=True, text=True)
        if result.stdout:
            print(result.stdout)
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ Error: {e}")
        if e.stdout:
            print(e.stdout)
        if e.stderr:
            print(f"Error output: {e.stderr}")
        return False


def clean_build():
    """Clean build artifacts and caches."""

    print("🧹 Cleaning build artifacts...")

    patterns = [
        "build",
        "dist",
        "*.egg-info",
        "__pycache__",
        ".pytest_cache",
        ".mypy_cache",
        ".tox",
        ".coverage",
    ]

    for pattern in patterns:
        for path in Path(".").rglob(pattern):
            if "examples" in path.parts or not path.exists():
                continue
            if path.is_dir():
                shutil.rmtree(path)
                print(f"  Removed directory: {path}")
            else:
                path.unlink()
                print(f"  Removed file: {path}")


def run_tests():
    """Run the fast test suite."""

    return run_command('python3 -m pytest tests/ -v -m "not slow"', "Running fast tests")


def run_slow_tests():
    """Run the slow tests: toy training, acceptance runs, full oracle suite."""

    return run_command("python3 -m pytest tests/ -v -m slow", "Running slow tests")


def run_oracle_check():
    """Run the quick gradient and sampler checks through the CLI."""

    return run_command("python3 -m ebm_saliency oracle-check", "Running oracle checks")


def run_toy_pipeline():
    """Generate toy data, train, predict and evaluate under runs/toy/."""

    data, model, preds = TOY_DIR / "data", TOY_DIR / "model.ckpt", TOY_DIR / "preds"
    steps = [
        (f"python3 -m ebm_saliency gen-data --n 500 --size 32 --seed 0 --out {data}", "Generating toy scenes"),
        (
            f"python3 -m ebm_saliency train --data {data} --config configs/toy.json --out {model}",
            "Training on the toy scenes",
        ),
        (
            f"python3 -m ebm_saliency predict --ckpt {model} --data {data} --iter 10 --out {preds}",
            "Predicting saliency and uncertainty",
        ),
        (
            f"python3 -m ebm_saliency eval --pred {preds} --data {data} --out {TOY_DIR / 'report.csv'}",
            "Evaluating",
        ),
    ]
    return all(run_command(command, text) for command, text in steps)


def run_linting():
    """Run flake8 and mypy."""

    success = True

    if not run_command("python3 -m flake8 src tests", "Running flake8"):
        success = False

    if not run_command("python3 -m mypy src", "Running mypy"):
        success = False

    return success


def format_code():
    """Format code with black."""

    return run_command("python3 -m black src tests", "Formatting code with black")


def build_package():
    """Build the sdist and wheel."""

    return run_command("python3 -m build", "Building package")


def main():
    """Dispatch one development action."""

    import argparse

    parser = argparse.ArgumentParser(
        description="Development helper for ebm-saliency",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__.split("Actions:", 1)[1],
    )
    parser.add_argument(
        "action",
        choices=["clean", "test", "slow", "oracle-check", "toy", "lint", "format", "build", "all"],
        help="Action to perform (see below)",
    )

    args = parser.parse_args()

    actions = {
        "test": run_tests,
        "slow": run_slow_tests,
        "oracle-check": run_oracle_check,
        "toy": run_toy_pipeline,
        "lint": run_linting,
        "format": format_code,
    }

    success = True

    if args.action == "clean":
        clean_build()

    elif args.action in actions:
        success = actions[args.action]()

    elif args.action == "build":
        clean_build()
        success = build_package()

    elif args.action == "all":
        clean_build()
        success &= format_code()
        success &= run_linting()
        success &= run_tests()
        success &= build_package()

    if success:
        print(f"✅ {args.action} completed successfully!")
        return 0
    else:
        print(f"❌ {args.action} failed!")
        return 1


if __name__ == "__main__":
    sys.exit(main())
