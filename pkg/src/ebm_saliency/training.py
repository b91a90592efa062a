"""
Maximum-likelihood training of the saliency models.

Every learner samples prior latents ``z-`` and posterior latents ``z+`` by
short-run Langevin dynamics from fresh initialisations, then takes Adam steps.
The gradient estimators return log-likelihood ASCENT directions; Adam
minimises, so the trainer always feeds it their negation.

Per-batch update order:

    eabp: sample z-, sample z+, update alpha, update theta
    egan: sample z-, sample z+, update gamma, update theta, update alpha
    evae: warm-start z- and z+, update alpha, update theta / beta1 / beta2
    base: update theta
"""

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from .adversarial import Discriminator, binary_cross_entropy, egan_discriminator_loss, egan_generator_loss
from .amortized import (
    GaussianLatentStats,
    InferenceNet,
    kl_diag_gaussians_grad,
    posterior_input,
    reparameterize_backward,
    reparameterized_sample,
)
from .config import TrainingConfig
from .ebm_prior import EnergyPrior, LangevinConfig, ebm_param_grad, prior_langevin
from .errors import ConfigurationError, NumericalError
from .inference_metrics import mae
from .model import SaliencyModel
from .numcore import TRAIN, AdamState, ParamStore, adam_step, add_grads, commit_batch_stats, grad_norm, scale_grads
from .rng import Purpose, shuffled_order
from .saliency_generator import (
    SaliencyGenerator,
    describe,
    gaussian_reconstruction,
    generator_param_grad,
    posterior_langevin,
)
from .synthdata_io import ImageSample, StackedDataset, stack_samples

logger = logging.getLogger(__name__)

REPORT_HEADER = ("epoch", "loss", "mae", "grad_alpha", "grad_theta")
DIAGNOSTIC_ROUND = 1 << 20

Dataset = Union[Sequence[ImageSample], StackedDataset]


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    mae: float
    grad_alpha: float
    grad_theta: float
    seconds: float = 0.0


@dataclass
class TrainReport:
    """One record per epoch plus wall-clock time."""

    records: List[EpochRecord] = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def losses(self) -> List[float]:
        return [r.loss for r in self.records]

    @property
    def maes(self) -> List[float]:
        return [r.mae for r in self.records]

    @property
    def final_grad_norms(self) -> Tuple[float, float]:
        if not self.records:
            return (float("nan"), float("nan"))
        return self.records[-1].grad_alpha, self.records[-1].grad_theta

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(REPORT_HEADER)
            for r in self.records:
                writer.writerow([r.epoch, repr(r.loss), repr(r.mae), repr(r.grad_alpha), repr(r.grad_theta)])
        return path


class StepResult(NamedTuple):
    loss: float
    mae: float
    grad_alpha: float
    grad_theta: float


class LatentDraw(NamedTuple):
    """Langevin output plus the reparameterised start it came from, when there was one."""

    z: np.ndarray
    start: Optional[np.ndarray] = None
    eps: Optional[np.ndarray] = None


def as_stacked(data: Dataset) -> StackedDataset:
    return data if isinstance(data, StackedDataset) else stack_samples(data)


def batch_slices(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    """Consecutive chunks of ``order``; a trailing singleton joins the previous chunk."""
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def reconstruction_loss(kind: str, out: np.ndarray, y: np.ndarray, sigma_eps: float) -> Tuple[float, np.ndarray]:
    """Loss and its gradient with respect to the generator output."""
    if kind == "gaussian":
        return gaussian_reconstruction(out, y, sigma_eps)
    if kind == "bce":
        return binary_cross_entropy(out, y)
    raise ConfigurationError(f"unknown reconstruction '{kind}'")


class Trainer:
    """Runs one learner over a dataset.

    Args:
        config: Training configuration; ``config.model`` picks the learner.
        model: Model to continue training; built from ``config`` when omitted.
        in_channels: Image channels, required when ``model`` is omitted.
        progress: Show a tqdm bar per epoch.
    """

    def __init__(
        self,
        config: TrainingConfig,
        model: Optional[SaliencyModel] = None,
        in_channels: Optional[int] = None,
        progress: bool = False,
    ):
        self.logger = logging.getLogger(__name__)
        self.config = config.validate()
        if model is None:
            if in_channels is None:
                raise ConfigurationError("Trainer needs a model or in_channels")
            model = SaliencyModel(config, in_channels)
        if model.kind != config.model:
            raise ConfigurationError(f"model kind '{model.kind}' does not match config '{config.model}'")
        self.model = model
        self.progress = progress
        self.states: Dict[str, AdamState] = {name: AdamState() for name in model.components()}
        self.iteration = 0
        self.prior_cfg = LangevinConfig(config.k_prior, config.step_prior, config.seed)
        self.post_cfg = LangevinConfig(config.k_post, config.step_post, config.seed)

    # sampling ------------------------------------------------------------------------------------

    @property
    def generator(self) -> SaliencyGenerator:
        return self.model.generator

    @property
    def prior(self) -> EnergyPrior:
        assert self.model.prior is not None
        return self.model.prior

    def sample_prior(
        self, ids: Sequence[int], round_index: int, stats: Optional[GaussianLatentStats] = None
    ) -> LatentDraw:
        """``z-``: cold start from the reference Gaussian, or warm start from prior-net ``stats``."""
        seed = self.config.seed
        if stats is not None:
            start, eps = reparameterized_sample(stats, seed, Purpose.REPARAM_PRIOR, round_index, ids)
        else:
            start, eps = self.prior.sample_reference(seed, round_index, ids, Purpose.PRIOR_INIT), None
        if not self.prior.tilted:
            return LatentDraw(start, start, eps)
        z = prior_langevin(self.prior, self.prior_cfg, start, chain_ids=ids, round_index=round_index)
        return LatentDraw(z, start, eps)

    def sample_posterior(
        self,
        x: np.ndarray,
        y: np.ndarray,
        ids: Sequence[int],
        round_index: int,
        stats: Optional[GaussianLatentStats] = None,
    ) -> LatentDraw:
        """``z+``: posterior Langevin, warm-started from posterior-net ``stats`` when given."""
        start = eps = None
        if stats is not None:
            start, eps = reparameterized_sample(stats, self.config.seed, Purpose.REPARAM_POSTERIOR, round_index, ids)
        z = posterior_langevin(
            self.generator, self.prior, x, y, self.post_cfg, start, chain_ids=ids, round_index=round_index
        )
        return LatentDraw(z, start, eps)

    # updates -------------------------------------------------------------------------------------

    def _adam(self, component: str, params: ParamStore, grads: Dict[str, np.ndarray], lr: float) -> None:
        adam_step(params, grads, self.states[component], lr)

    def _update_prior(self, z_pos: np.ndarray, z_neg: np.ndarray) -> float:
        if not self.prior.tilted:
            return 0.0
        ascent = ebm_param_grad(self.prior, z_pos, z_neg)
        self._adam("prior", self.prior.params, scale_grads(ascent, -1.0), self.config.lr_ebm)
        return grad_norm(ascent)

    def _decode_mae(self, x: np.ndarray, y: np.ndarray, z: Optional[np.ndarray]) -> float:
        return mae(self.generator.predict(x, z), y)

    def _eabp_step(self, x: np.ndarray, y: np.ndarray, ids: Sequence[int], round_index: int) -> StepResult:
        cfg = self.config
        z_neg = self.sample_prior(ids, round_index).z
        z_pos = self.sample_posterior(x, y, ids, round_index).z
        grad_alpha = self._update_prior(z_pos, z_neg)
        out, tape = self.generator.forward_tape(x, z_pos)
        loss, dout = reconstruction_loss(cfg.reconstruction, out, y, cfg.sigma_eps)
        grads = self.generator.backward(tape, dout).params
        self._adam("generator", self.generator.params, grads, cfg.lr_gen)
        return StepResult(loss, self._decode_mae(x, y, z_neg), grad_alpha, grad_norm(grads))

    def _egan_step(self, x: np.ndarray, y: np.ndarray, ids: Sequence[int], round_index: int) -> StepResult:
        cfg = self.config
        disc = self.model.discriminator
        assert disc is not None
        z_neg = self.sample_prior(ids, round_index).z
        z_pos = self.sample_posterior(x, y, ids, round_index).z
        if cfg.train_discriminator:
            d_result = egan_discriminator_loss(disc, self.generator.predict(x, z_pos), x, y)
            self._adam("discriminator", disc.params, d_result.grads, cfg.lr_disc)
            for tape in d_result.tapes:
                commit_batch_stats(disc.params, tape)
        g_result = egan_generator_loss(self.generator, disc, x, y, z_pos, cfg.lam)
        self._adam("generator", self.generator.params, g_result.grads, cfg.lr_gen)
        grad_alpha = self._update_prior(z_pos, z_neg)
        return StepResult(g_result.loss, self._decode_mae(x, y, z_neg), grad_alpha, grad_norm(g_result.grads))

    def _evae_step(self, x: np.ndarray, y: np.ndarray, ids: Sequence[int], round_index: int) -> StepResult:
        cfg = self.config
        post_net, prior_net = self.model.posterior_net, self.model.prior_net
        assert post_net is not None and prior_net is not None
        stats_p, p_tape = prior_net.forward_tape(x, TRAIN)
        stats_q, q_tape = post_net.forward_tape(posterior_input(x, y), TRAIN)
        z_neg = self.sample_prior(ids, round_index, stats_p).z
        post = self.sample_posterior(x, y, ids, round_index, stats_q)
        assert post.start is not None and post.eps is not None
        grad_alpha = self._update_prior(post.z, z_neg)

        loss, theta_grads, dz_start = evae_generator_terms(
            self.generator, x, y, post.z, post.start, cfg.k_post > 0, cfg.reconstruction
        )
        kl, d_q, d_p = kl_diag_gaussians_grad(stats_q, stats_p)
        d_mu_q, d_ls_q = reparameterize_backward(stats_q, post.eps, dz_start)
        post_grads = post_net.backward(q_tape, d_q.mu + d_mu_q, d_q.log_sigma + d_ls_q)
        prior_grads = prior_net.backward(p_tape, d_p.mu, d_p.log_sigma)

        self._adam("generator", self.generator.params, theta_grads, cfg.lr_gen)
        self._adam("posterior_net", post_net.params, post_grads, cfg.lr_gen)
        self._adam("prior_net", prior_net.params, prior_grads, cfg.lr_gen)
        commit_batch_stats(prior_net.params, p_tape.trunk)
        commit_batch_stats(post_net.params, q_tape.trunk)
        return StepResult(loss + kl, self._decode_mae(x, y, z_neg), grad_alpha, grad_norm(theta_grads))

    def _base_step(self, x: np.ndarray, y: np.ndarray, ids: Sequence[int], round_index: int) -> StepResult:
        cfg = self.config
        out, tape = self.generator.forward_tape(x, None)
        loss, dout = reconstruction_loss(cfg.reconstruction, out, y, cfg.sigma_eps)
        grads = self.generator.backward(tape, dout).params
        self._adam("baseline", self.generator.params, grads, cfg.lr_gen)
        return StepResult(loss, mae(out, y), 0.0, grad_norm(grads))

    def train_step(self, x: np.ndarray, y: np.ndarray, ids: Sequence[int], round_index: int) -> StepResult:
        """One parameter update on a batch.

        Raises:
            NumericalError: carrying the iteration index of the failing update.
        """
        step = {
            "eabp": self._eabp_step,
            "egan": self._egan_step,
            "evae": self._evae_step,
            "base": self._base_step,
        }[self.model.kind]
        try:
            result = step(x, y, ids, round_index)
        except NumericalError as e:
            e.iteration = self.iteration
            raise
        if not np.isfinite(result.loss):
            raise NumericalError(f"non-finite loss at iteration {self.iteration}", iteration=self.iteration)
        self.iteration += 1
        return result

    # loop ----------------------------------------------------------------------------------------

    def fit(
        self,
        data: Dataset,
        epochs: Optional[int] = None,
        checkpoint_path: Optional[Union[str, Path]] = None,
    ) -> TrainReport:
        """Train for ``epochs`` (default ``config.epochs``) epochs.

        Each epoch visits the samples in an order fixed by ``(seed, epoch)``; the
        epoch index is the round of every random stream used in it.
        """
        stacked = as_stacked(data)
        if stacked.images.shape[1] != self.model.in_channels:
            raise ConfigurationError(
                f"data has {stacked.images.shape[1]} channels, model expects {self.model.in_channels}"
            )
        if len(stacked.ids) < 2:
            raise ConfigurationError("training needs at least two samples")
        epochs = self.config.epochs if epochs is None else epochs
        self.logger.info(
            "Training %s on %d samples for %d epochs: %s",
            self.model.kind,
            len(stacked.ids),
            epochs,
            describe(self.generator),
        )
        report = TrainReport()
        started = time.perf_counter()
        for epoch in range(epochs):
            tic = time.perf_counter()
            order = shuffled_order(self.config.seed, epoch, len(stacked.ids))
            batches = batch_slices(order, self.config.batch_size)
            totals = np.zeros(4)
            seen = 0
            for idx in tqdm(batches, desc=f"epoch {epoch + 1}/{epochs}", disable=not self.progress, leave=False):
                idx = np.sort(idx)
                result = self.train_step(
                    stacked.images[idx], stacked.masks[idx], stacked.ids[idx].tolist(), epoch
                )
                totals += len(idx) * np.array(result)
                seen += len(idx)
            means = totals / seen
            record = EpochRecord(epoch + 1, *map(float, means), seconds=time.perf_counter() - tic)
            report.records.append(record)
            self.logger.info(
                "Epoch %d/%d - loss %.6f - mae %.4f - |grad_alpha| %.3e - |grad_theta| %.3e",
                record.epoch,
                epochs,
                record.loss,
                record.mae,
                record.grad_alpha,
                record.grad_theta,
            )
            every = self.config.checkpoint_every
            if checkpoint_path is not None and every and record.epoch % every == 0:
                path = Path(checkpoint_path)
                self.model.save(path.with_name(f"{path.stem}_epoch{record.epoch:03d}{path.suffix}"))
        report.wall_clock = time.perf_counter() - started
        return report


def evae_generator_terms(
    generator: SaliencyGenerator,
    x: np.ndarray,
    y: np.ndarray,
    z_pos: np.ndarray,
    z_start: np.ndarray,
    refined: bool,
    reconstruction: str = "gaussian",
) -> Tuple[float, Dict[str, np.ndarray], np.ndarray]:
    """Reconstruction part of the EVAE loss.

    Returns the loss, its generator gradients and its gradient with respect to
    the reparameterised start ``z_start``. Without refinement ``z_pos`` is
    ``z_start`` and the reconstruction itself reaches the posterior net; with
    refinement ``z_pos`` is a constant and an auxiliary reconstruction at
    ``z_start`` carries the posterior-net gradient.
    """
    out, tape = generator.forward_tape(x, z_pos)
    loss, dout = reconstruction_loss(reconstruction, out, y, generator.sigma_eps)
    main = generator.backward(tape, dout)
    if not refined:
        assert main.latent is not None
        return loss, main.params, main.latent
    out0, tape0 = generator.forward_tape(x, z_start)
    aux_loss, dout0 = reconstruction_loss(reconstruction, out0, y, generator.sigma_eps)
    aux = generator.backward(tape0, dout0)
    assert aux.latent is not None
    grads = dict(main.params)
    add_grads(grads, aux.params)
    return loss + aux_loss, grads, aux.latent


# entry points ------------------------------------------------------------------------------------


def _run(data: Dataset, cfg: TrainingConfig, kind: str, progress: bool = False) -> Tuple[SaliencyModel, TrainReport]:
    if cfg.model != kind:
        cfg = TrainingConfig.from_dict({"model": kind}, base=cfg)
    stacked = as_stacked(data)
    trainer = Trainer(cfg, in_channels=stacked.images.shape[1], progress=progress)
    return trainer.model, trainer.fit(stacked)


def train_eabp(data: Dataset, cfg: TrainingConfig) -> Tuple[SaliencyGenerator, EnergyPrior, TrainReport]:
    model, report = _run(data, cfg, "eabp")
    assert model.prior is not None
    return model.generator, model.prior, report


def train_egan(
    data: Dataset, cfg: TrainingConfig
) -> Tuple[SaliencyGenerator, EnergyPrior, Discriminator, TrainReport]:
    model, report = _run(data, cfg, "egan")
    assert model.prior is not None and model.discriminator is not None
    return model.generator, model.prior, model.discriminator, report


def train_evae(
    data: Dataset, cfg: TrainingConfig
) -> Tuple[SaliencyGenerator, EnergyPrior, InferenceNet, InferenceNet, TrainReport]:
    """Returns ``(theta, alpha, beta1 = posterior net, beta2 = prior net, report)``."""
    model, report = _run(data, cfg, "evae")
    assert model.prior is not None and model.posterior_net is not None and model.prior_net is not None
    return model.generator, model.prior, model.posterior_net, model.prior_net, report


def train_base(data: Dataset, cfg: TrainingConfig) -> Tuple[SaliencyGenerator, TrainReport]:
    model, report = _run(data, cfg, "base")
    return model.generator, report


def train(
    data: Dataset, cfg: TrainingConfig, progress: bool = False, checkpoint_path: Optional[Union[str, Path]] = None
) -> Tuple[SaliencyModel, TrainReport]:
    """Train whichever learner ``cfg.model`` names."""
    stacked = as_stacked(data)
    trainer = Trainer(cfg, in_channels=stacked.images.shape[1], progress=progress)
    return trainer.model, trainer.fit(stacked, checkpoint_path=checkpoint_path)


# convergence -------------------------------------------------------------------------------------


@dataclass
class ConvergenceReport:
    """Norms of the two estimating-equation residuals and their Monte-Carlo noise floors."""

    grad_alpha: float
    grad_theta: float
    floor_alpha: float
    floor_theta: float
    samples: int


def _flatten(grads: Dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([grads[k].ravel() for k in sorted(grads)]) if grads else np.zeros(0)


def _norm_and_floor(group_means: np.ndarray, weights: np.ndarray) -> Tuple[float, float]:
    mean = weights @ group_means / weights.sum()
    groups = len(weights)
    if groups < 2:
        return float(np.linalg.norm(mean)), float("nan")
    spread = np.sum((group_means - mean) ** 2) / (groups * (groups - 1))
    return float(np.linalg.norm(mean)), float(np.sqrt(spread))


def convergence_diagnostic(
    model: SaliencyModel,
    data: Dataset,
    n_samples: Optional[int] = None,
    groups: int = 10,
    round_index: int = DIAGNOSTIC_ROUND,
) -> ConvergenceReport:
    """Evaluate ``||grad alpha||`` and ``||grad theta||`` with fresh Langevin samples.

    The first ``n_samples`` images are split into ``groups`` disjoint groups; the
    spread of the group means gives the noise floor, the norm of the expected
    residual when the parameters sit exactly at a stationary point.
    """
    if model.kind == "base" or model.prior is None:
        raise ConfigurationError("the convergence diagnostic needs a latent-variable model")
    stacked = as_stacked(data)
    n = len(stacked.ids) if n_samples is None else min(n_samples, len(stacked.ids))
    trainer = Trainer(model.config, model)
    alpha_means, theta_means, weights = [], [], []
    for idx in np.array_split(np.arange(n), min(groups, n)):
        if len(idx) == 0:
            continue
        x, y, ids = stacked.images[idx], stacked.masks[idx], stacked.ids[idx].tolist()
        stats_p = model.prior_net.infer(x) if model.prior_net is not None else None
        stats_q = model.posterior_net.infer(posterior_input(x, y)) if model.posterior_net is not None else None
        z_neg = trainer.sample_prior(ids, round_index, stats_p).z
        z_pos = trainer.sample_posterior(x, y, ids, round_index, stats_q).z
        alpha_means.append(_flatten(ebm_param_grad(model.prior, z_pos, z_neg)))
        theta_means.append(_flatten(generator_param_grad(model.generator, x, y, z_pos)))
        weights.append(len(idx))
    w = np.asarray(weights, dtype=np.float64)
    grad_alpha, floor_alpha = _norm_and_floor(np.stack(alpha_means), w)
    grad_theta, floor_theta = _norm_and_floor(np.stack(theta_means), w)
    logger.info(
        "Convergence: |grad_alpha| %.3e (floor %.3e), |grad_theta| %.3e (floor %.3e)",
        grad_alpha,
        floor_alpha,
        grad_theta,
        floor_theta,
    )
    return ConvergenceReport(grad_alpha, grad_theta, floor_alpha, floor_theta, n)
