#!/usr/bin/env python3
"""
Command-line interface: data generation, training, prediction, evaluation and
the oracle checks.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .acceptance import format_table, run_oracle_checks
from .config import TrainingConfig, load_config_file, normalize_key, write_config_file
from .errors import ConfigurationError, SaliencyError
from .inference_metrics import evaluate_directory, predict_with_uncertainty, write_report
from .model import SaliencyModel
from .synthdata_io import generate_dataset, load_dataset, stack_samples, write_dataset, write_pnm
from .training import train

logger = logging.getLogger(__name__)

GEN_DATA_DEFAULTS: Dict[str, Any] = {
    "n": 500,
    "size": 32,
    "p_ambiguous": 0.0,
    "with_depth": False,
    "seed": 0,
    "channels": 3,
}
PREDICT_DEFAULTS: Dict[str, Any] = {"iter": 10, "seed": 0}
PREDICT_CHUNK = 64

# train options that are not TrainingConfig fields but may come from its config file
TRAIN_RUN_KEYS = ("data", "out", "dtype")
CHECKPOINT_DTYPES = ("f64", "f32")

# train flags that map one-to-one onto TrainingConfig fields
TRAIN_FLAGS = (
    ("--model", str, "Learner: eabp, egan, evae or base"),
    ("--epochs", int, "Number of epochs"),
    ("--batch-size", int, "Batch size (at least 2)"),
    ("--latent-dim", int, "Latent dimension d"),
    ("--k-prior", int, "Prior Langevin steps"),
    ("--k-post", int, "Posterior Langevin steps"),
    ("--step-prior", float, "Prior Langevin step size"),
    ("--step-post", float, "Posterior Langevin step size"),
    ("--lr-gen", float, "Generator learning rate"),
    ("--lr-disc", float, "Discriminator learning rate"),
    ("--lr-ebm", float, "Energy prior learning rate"),
    ("--lambda", float, "Adversarial loss weight"),
    ("--sigma-z", float, "Reference prior standard deviation"),
    ("--sigma-eps", float, "Observation noise standard deviation"),
    ("--seed", int, "Random seed"),
    ("--prior", str, "Latent prior: ebm or gaussian"),
    ("--reconstruction", str, "Reconstruction loss: gaussian or bce"),
    ("--checkpoint-every", int, "Write a checkpoint every N epochs (0 disables)"),
)


def setup_logging(level: str = "INFO") -> None:
    """Set up logging configuration."""
    logging.basicConfig(
        level=getattr(logging, level.upper()),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler()],
    )


def _flag_dest(flag: str) -> str:
    return flag.lstrip("-").replace("-", "_")


def _resolve(defaults: Mapping[str, Any], config_file: Optional[str], args: argparse.Namespace) -> Dict[str, Any]:
    """Defaults, overlaid by the config file, overlaid by explicit flags."""
    values = dict(defaults)
    if config_file:
        for key, value in load_config_file(config_file).items():
            if key not in values:
                raise ConfigurationError(f"unknown configuration key '{key}'")
            values[key] = value
    for key in defaults:
        explicit = getattr(args, key, None)
        if explicit is not None:
            values[key] = explicit
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ebm-saliency",
        description="Generative saliency prediction with an energy-based latent prior",
    )
    parser.add_argument("--version", action="version", version=f"ebm-saliency {__version__}")
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # gen-data
    gen_parser = subparsers.add_parser("gen-data", help="Generate a synthetic saliency dataset")
    gen_parser.add_argument("--n", type=int, help="Number of images (default: 500)")
    gen_parser.add_argument("--size", type=int, help="Image side length (default: 32)")
    gen_parser.add_argument("--p-ambiguous", type=float, help="Fraction of ambiguous scenes (default: 0)")
    gen_parser.add_argument("--with-depth", action="store_true", default=None, help="Add a depth channel")
    gen_parser.add_argument("--channels", type=int, help="Colour channels, 1 or 3 (default: 3)")
    gen_parser.add_argument("--seed", type=int, help="Random seed (default: 0)")
    gen_parser.add_argument("--out", required=True, help="Output directory")
    gen_parser.add_argument("--config", help="JSON file of option values")

    # train
    train_parser = subparsers.add_parser("train", help="Train a model")
    for flag, kind, text in TRAIN_FLAGS:
        train_parser.add_argument(flag, type=kind, dest=_flag_dest(flag), help=text)
    train_parser.add_argument("--data", help="Dataset directory (or the config key 'data')")
    train_parser.add_argument("--out", help="Checkpoint file to write (or the config key 'out')")
    train_parser.add_argument("--config", help="JSON file of option values")
    train_parser.add_argument("--dtype", choices=CHECKPOINT_DTYPES, help="Checkpoint precision (default: f64)")
    train_parser.add_argument("--progress", action="store_true", help="Show progress bars")

    # predict
    predict_parser = subparsers.add_parser("predict", help="Predict saliency and uncertainty maps")
    predict_parser.add_argument("--ckpt", required=True, help="Checkpoint file")
    predict_parser.add_argument("--data", required=True, help="Dataset directory")
    predict_parser.add_argument("--iter", type=int, help="Prior draws per image (default: 10)")
    predict_parser.add_argument("--seed", type=int, help="Random seed (default: 0)")
    predict_parser.add_argument("--model", help="Expected model kind; must match the checkpoint")
    predict_parser.add_argument("--out", required=True, help="Output directory")
    predict_parser.add_argument("--config", help="JSON file of option values")

    # eval
    eval_parser = subparsers.add_parser("eval", help="Score predictions against ground truth")
    eval_parser.add_argument("--pred", required=True, help="Directory of pred_/unc_ maps")
    eval_parser.add_argument("--data", required=True, help="Dataset directory")
    eval_parser.add_argument("--out", required=True, help="CSV report to write")

    # oracle-check
    oracle_parser = subparsers.add_parser("oracle-check", help="Run the gradient and sampler oracle checks")
    oracle_parser.add_argument("--full", action="store_true", help="Acceptance-sized settings (minutes)")
    oracle_parser.add_argument("--seed", type=int, default=0, help="Random seed (default: 0)")
    return parser


def _handle_gen_data_command(args: argparse.Namespace) -> int:
    """Handle the gen-data command."""
    values = _resolve(GEN_DATA_DEFAULTS, args.config, args)
    samples = generate_dataset(
        int(values["n"]),
        int(values["size"]),
        float(values["p_ambiguous"]),
        bool(values["with_depth"]),
        int(values["seed"]),
        int(values["channels"]),
    )
    out = Path(args.out)
    write_dataset(samples, out)
    write_config_file(out / "config.json", values)
    print(f"✅ Wrote {len(samples)} samples")
    print(f"📁 Location: {out.absolute()}")
    return 0


def _fill_train_run_options(args: argparse.Namespace) -> bool:
    """Take missing --data/--out/--dtype from the config file; False if data or out is still unset."""
    file_values = load_config_file(args.config) if args.config else {}
    for key in TRAIN_RUN_KEYS:
        if getattr(args, key) is None and file_values.get(key) is not None:
            setattr(args, key, str(file_values[key]))
    if args.dtype is None:
        args.dtype = "f64"
    if args.dtype not in CHECKPOINT_DTYPES:
        raise ConfigurationError(f"dtype must be one of {CHECKPOINT_DTYPES}, got '{args.dtype}'")
    return args.data is not None and args.out is not None


def _train_config(args: argparse.Namespace) -> TrainingConfig:
    base = TrainingConfig()
    if args.config:
        file_values = {k: v for k, v in load_config_file(args.config).items() if k not in TRAIN_RUN_KEYS}
        base = TrainingConfig.from_dict(file_values)
    flags = {normalize_key(_flag_dest(flag)): getattr(args, _flag_dest(flag)) for flag, _, _ in TRAIN_FLAGS}
    return TrainingConfig.from_dict(flags, base=base)


def _handle_train_command(args: argparse.Namespace) -> int:
    """Handle the train command."""
    cfg = _train_config(args)
    samples = load_dataset(args.data)
    out = Path(args.out)
    print(f"Training '{cfg.model}' on {len(samples)} samples for {cfg.epochs} epochs...")
    model, report = train(samples, cfg, progress=args.progress, checkpoint_path=out)
    model.save(out, args.dtype)
    echo = {**cfg.to_dict(), "data": str(Path(args.data).resolve()), "out": str(out.resolve()), "dtype": args.dtype}
    write_config_file(f"{out}.config.json", echo)
    report.to_csv(f"{out}.report.csv")
    if report.records:
        last = report.records[-1]
        print(f"Final epoch: loss {last.loss:.6f}, MAE {last.mae:.4f}")
    print(f"✅ Checkpoint written to {out.absolute()}")
    return 0


def _handle_predict_command(args: argparse.Namespace) -> int:
    """Handle the predict command."""
    values = _resolve(PREDICT_DEFAULTS, args.config, args)
    model = SaliencyModel.load(args.ckpt)
    if args.model is not None and args.model != model.kind:
        print(f"❌ Checkpoint holds a '{model.kind}' model, not '{args.model}'")
        return 1
    stacked = stack_samples(load_dataset(args.data))
    out = Path(args.out)
    iterations, seed = int(values["iter"]), int(values["seed"])
    for start in range(0, len(stacked.ids), PREDICT_CHUNK):
        ids = stacked.ids[start : start + PREDICT_CHUNK]
        bundle = predict_with_uncertainty(model, stacked.images[start : start + PREDICT_CHUNK], iterations, seed, ids)
        for sid, mean, unc in zip(ids, bundle.mean, bundle.uncertainty):
            peak = float(unc.max())
            write_pnm(out / f"pred_{sid:04d}.pgm", np.clip(mean, 0.0, 1.0))
            write_pnm(out / f"unc_{sid:04d}.pgm", unc, bits=16, scale=peak if peak > 0 else None)
    write_config_file(
        out / "config.json",
        {"ckpt": str(args.ckpt), "data": str(args.data), "model": model.kind, **values},
    )
    print(f"✅ Wrote predictions for {len(stacked.ids)} images ({iterations} draws each)")
    print(f"📁 Location: {out.absolute()}")
    return 0


def _handle_eval_command(args: argparse.Namespace) -> int:
    """Handle the eval command."""
    evaluation = evaluate_directory(args.pred, args.data)
    path = write_report(args.out, evaluation)
    s = evaluation.summary
    print(f"Images: {len(evaluation.rows)}")
    print(f"  MAE        {s.mae:.4f}")
    print(f"  F-measure  {s.f_measure:.4f}")
    print(f"  IoU        {s.iou:.4f}")
    print(f"  AUROC      {s.auroc:.4f}")
    if evaluation.contrast is not None:
        print(f"  Ambiguity contrast {evaluation.contrast:.2f}")
        logger.info("Mean uncertainty contrast over ambiguous pixels: %.3f", evaluation.contrast)
    print(f"✅ Report written to {path.absolute()}")
    return 0


def _handle_oracle_check_command(args: argparse.Namespace) -> int:
    """Handle the oracle-check command."""
    results = run_oracle_checks(full=args.full, seed=args.seed)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"❌ {len(failed)} of {len(results)} checks failed: {', '.join(failed)}")
        return 1
    print(f"✅ All {len(results)} checks passed")
    return 0


HANDLERS = {
    "gen-data": _handle_gen_data_command,
    "train": _handle_train_command,
    "predict": _handle_predict_command,
    "eval": _handle_eval_command,
    "oracle-check": _handle_oracle_check_command,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv`` and run one subcommand; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else 2

    setup_logging("DEBUG" if args.verbose else "INFO")

    if args.command is None:
        parser.print_help()
        return 2
    try:
        if args.command == "train" and not _fill_train_run_options(args):
            print("❌ train needs --data and --out, as flags or as config keys")
            return 2
        return HANDLERS[args.command](args)
    except SaliencyError as e:
        logger.error("%s", e)
        print(f"❌ {e}")
        return 1
    except OSError as e:
        logger.error("I/O error: %s", e)
        print(f"❌ {e}")
        return 1


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point."""
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
