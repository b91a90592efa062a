"""
Stochastic prediction with variance uncertainty, and evaluation metrics.
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import rankdata

from .amortized import GaussianLatentStats, reparameterized_sample
from .ebm_prior import LangevinConfig, prior_langevin
from .errors import ConfigurationError, DatasetError
from .model import SaliencyModel
from .rng import Purpose
from .synthdata_io import dataset_manifest, prediction_files, read_pnm

logger = logging.getLogger(__name__)

BETA2 = 0.3
THRESHOLD = 0.5
CSV_HEADER = ("image_id", "mae", "f_measure", "iou", "auroc")


@dataclass
class PredictionBundle:
    """Mean map ``s*``, population-variance map ``u*`` and optionally every draw."""

    mean: np.ndarray
    uncertainty: np.ndarray
    draws: Optional[np.ndarray] = None


def sample_prior_latents(
    model: SaliencyModel,
    x: np.ndarray,
    draw: int,
    seed: int,
    image_ids: Sequence[int],
    stats: Optional[GaussianLatentStats] = None,
) -> np.ndarray:
    """Latents for one prediction round: reference (or prior-net) draw, then prior Langevin."""
    prior = model.prior
    assert prior is not None
    cfg = LangevinConfig(model.config.k_prior, model.config.step_prior, seed)
    if model.prior_net is not None:
        if stats is None:
            stats = model.prior_net.infer(x)
        z0, _ = reparameterized_sample(stats, seed, Purpose.PREDICT_INIT, draw, image_ids)
    else:
        z0 = prior.sample_reference(seed, draw, image_ids, Purpose.PREDICT_INIT)
    if not prior.tilted:
        return z0
    return prior_langevin(prior, cfg, z0, chain_ids=image_ids, round_index=draw, purpose=Purpose.PREDICT)


def predict_with_uncertainty(
    model: SaliencyModel,
    x: np.ndarray,
    iterations: int = 10,
    seed: int = 0,
    image_ids: Optional[Sequence[int]] = None,
    keep_draws: bool = False,
) -> PredictionBundle:
    """Draw ``iterations`` prior latents per image and decode each one.

    Draw ``t`` of image ``i`` uses the streams keyed by ``(seed, t, i)``, so the
    result for an image does not depend on the rest of the batch.

    Raises:
        ConfigurationError: ``iterations < 1``.
    """
    if iterations < 1:
        raise ConfigurationError(f"iterations must be at least 1, got {iterations}")
    x = np.asarray(x, dtype=np.float64)
    ids = list(range(x.shape[0])) if image_ids is None else [int(i) for i in image_ids]
    if len(ids) != x.shape[0]:
        raise ConfigurationError(f"{len(ids)} image ids for a batch of {x.shape[0]}")
    generator = model.generator
    ctx = generator.condition(x)
    stats = model.prior_net.infer(x) if model.prior_net is not None else None
    draws = []
    for t in range(iterations):
        z = sample_prior_latents(model, x, t, seed, ids, stats) if generator.stochastic else None
        draws.append(generator.decode_tape(ctx, z)[0])
    stacked = np.stack(draws)
    mean = stacked.mean(axis=0)
    uncertainty = stacked.var(axis=0)
    uncertainty[np.ptp(stacked, axis=0) == 0.0] = 0.0
    return PredictionBundle(mean, uncertainty, stacked if keep_draws else None)


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ConfigurationError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    return pred, gt


def _check_binary(gt: np.ndarray) -> np.ndarray:
    if not np.all((gt == 0.0) | (gt == 1.0)):
        raise ConfigurationError("ground truth must be binary")
    return gt.astype(bool)


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute error over pixels."""
    pred, gt = _check_pair(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


def f_from_counts(tp: float, fp: float, fn: float, beta2: float = BETA2) -> float:
    """F-measure from confusion counts; 0 when precision + recall = 0."""
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    if precision + recall == 0:
        return 0.0
    return (1.0 + beta2) * precision * recall / (beta2 * precision + recall)


def f_measure(pred: np.ndarray, gt: np.ndarray, threshold: float = THRESHOLD, beta2: float = BETA2) -> float:
    """F-measure of ``pred >= threshold`` against a binary ground truth."""
    pred, gt = _check_pair(pred, gt)
    if not 0.0 < threshold < 1.0:
        raise ConfigurationError(f"threshold must lie in (0, 1), got {threshold}")
    truth = _check_binary(gt)
    guess = pred >= threshold
    tp = float(np.sum(guess & truth))
    return f_from_counts(tp, float(np.sum(guess & ~truth)), float(np.sum(~guess & truth)), beta2)


def iou(pred: np.ndarray, gt: np.ndarray, threshold: float = THRESHOLD) -> float:
    """Intersection over union of the binarised prediction; 1 when both are empty."""
    pred, gt = _check_pair(pred, gt)
    truth = _check_binary(gt)
    guess = pred >= threshold
    union = np.sum(guess | truth)
    return 1.0 if union == 0 else float(np.sum(guess & truth) / union)


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve with midranks for ties; NaN for a single class."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    positives = int(labels.sum())
    negatives = labels.size - positives
    if positives == 0 or negatives == 0:
        return math.nan
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - positives * (positives + 1) / 2.0) / (positives * negatives))


def uncertainty_error_auroc(
    uncertainty: np.ndarray, mean: np.ndarray, gt: np.ndarray, threshold: float = THRESHOLD
) -> float:
    """How well ``u*`` ranks the pixels where ``|s* - gt| > threshold``.

    Returns NaN when every pixel is an error or none is.
    """
    mean, gt = _check_pair(mean, gt)
    if np.shape(uncertainty) != mean.shape:
        raise ConfigurationError(f"uncertainty shape {np.shape(uncertainty)} != prediction shape {mean.shape}")
    return auroc(uncertainty, np.abs(mean - gt) > threshold)


def uncertainty_contrast(uncertainty: np.ndarray, ambiguity: np.ndarray) -> float:
    """Mean ``u*`` over ambiguous pixels divided by mean ``u*`` over the rest.

    NaN when either region is empty or both means are zero.
    """
    uncertainty = np.asarray(uncertainty, dtype=np.float64)
    region = np.asarray(ambiguity) > 0.5
    if region.shape != uncertainty.shape:
        raise ConfigurationError(f"ambiguity shape {region.shape} != uncertainty shape {uncertainty.shape}")
    if not region.any() or region.all():
        return math.nan
    inside, outside = float(uncertainty[region].mean()), float(uncertainty[~region].mean())
    if outside == 0.0:
        return math.inf if inside > 0.0 else math.nan
    return inside / outside


@dataclass
class MetricReport:
    mae: float
    f_measure: float
    iou: float
    auroc: float

    def to_row(self, image_id: Union[int, str]) -> List[str]:
        return [str(image_id)] + [f"{v:.6f}" for v in (self.mae, self.f_measure, self.iou, self.auroc)]


def evaluate_maps(
    pred: np.ndarray, gt: np.ndarray, uncertainty: Optional[np.ndarray] = None
) -> MetricReport:
    auc = uncertainty_error_auroc(uncertainty, pred, gt) if uncertainty is not None else math.nan
    return MetricReport(mae(pred, gt), f_measure(pred, gt), iou(pred, gt), auc)


def summarize(reports: Sequence[MetricReport]) -> MetricReport:
    """Per-image means; NaN AUROC entries are skipped."""
    if not reports:
        return MetricReport(math.nan, math.nan, math.nan, math.nan)
    aucs = [r.auroc for r in reports if not math.isnan(r.auroc)]
    return MetricReport(
        float(np.mean([r.mae for r in reports])),
        float(np.mean([r.f_measure for r in reports])),
        float(np.mean([r.iou for r in reports])),
        float(np.mean(aucs)) if aucs else math.nan,
    )


@dataclass
class DirectoryEvaluation:
    rows: List[Tuple[int, MetricReport]]
    summary: MetricReport
    contrast: Optional[float] = None


def evaluate_directory(pred_dir: Union[str, Path], data_dir: Union[str, Path]) -> DirectoryEvaluation:
    """Score every ``pred_####.pgm`` (with ``unc_####.pgm`` when present) against ``gt_####.pgm``.

    Raises:
        DatasetError: a prediction without ground truth, or no predictions at all.
    """
    truth = {entry.sample_id: entry for entry in dataset_manifest(data_dir)}
    predictions = prediction_files(pred_dir)
    missing = sorted(sid for sid in predictions if sid not in truth or "pred" not in predictions[sid])
    if missing:
        raise DatasetError(f"predictions without ground truth or map: {', '.join(f'{i:04d}' for i in missing)}")
    if not predictions:
        raise DatasetError(f"no pred_####.pgm files in {pred_dir}")
    rows: List[Tuple[int, MetricReport]] = []
    contrasts = []
    for sid in sorted(predictions):
        files = predictions[sid]
        entry = truth[sid]
        assert entry.mask is not None
        pred = read_pnm(files["pred"]).data
        gt = read_pnm(entry.mask).data
        unc = read_pnm(files["unc"]).data if "unc" in files else None
        rows.append((sid, evaluate_maps(pred, gt, unc)))
        if unc is not None and entry.ambiguity is not None:
            value = uncertainty_contrast(unc, read_pnm(entry.ambiguity).data)
            if math.isfinite(value):
                contrasts.append(value)
    contrast = float(np.mean(contrasts)) if contrasts else None
    return DirectoryEvaluation(rows, summarize([r for _, r in rows]), contrast)


def write_report(path: Union[str, Path], evaluation: DirectoryEvaluation) -> Path:
    """CSV with one row per image followed by a ``mean`` row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_HEADER)
        for sid, report in evaluation.rows:
            writer.writerow(report.to_row(f"{sid:04d}"))
        writer.writerow(evaluation.summary.to_row("mean"))
    return path
