"""
Amortized Gaussian inference networks for the EVAE learner.

The prior net ``p_beta2(z | x)`` and posterior net ``q_beta1(z | x, y)`` share one
architecture: five 4x4 stride-2 conv blocks with batch-norm and LeakyReLU,
global average pooling, and two linear heads for ``mu`` and ``log sigma``.
Their samples warm-start the Langevin chains of the energy prior.
"""

import logging
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .ebm_prior import EnergyPrior, LangevinConfig, TraceFn, prior_langevin, resolve_chain_ids
from .errors import ConfigurationError
from .numcore import EVAL, LayerSpec, ParamStore, Tape, backward, forward
from .rng import NoiseSource, Purpose, component_generator, latent_normals
from .saliency_generator import LatentGenerator, posterior_langevin

logger = logging.getLogger(__name__)

N_BLOCKS = 5


class GaussianLatentStats(NamedTuple):
    """Diagonal Gaussian ``N(mu, diag(exp(log_sigma))^2)`` per batch row."""

    mu: np.ndarray
    log_sigma: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)


def inference_trunk(in_channels: int, base_channels: int = 8) -> List[LayerSpec]:
    widths = [base_channels * m for m in (1, 2, 4, 8, 8)]
    layers: List[LayerSpec] = []
    channels = in_channels
    for i, width in enumerate(widths):
        layers += [
            LayerSpec.conv(f"conv{i + 1}", channels, width, 4, 2, 1),
            LayerSpec.batch_norm(f"bn{i + 1}", width),
            LayerSpec.leaky_relu(),
        ]
        channels = width
    layers.append(LayerSpec.global_avg_pool())
    return layers


class InferencePass(NamedTuple):
    trunk: Tape
    mu: Tape
    log_sigma: Tape


class InferenceNet:
    """Image-conditioned Gaussian over latents.

    Args:
        in_channels: Input channels (image channels, plus one for the posterior net's mask).
        latent_dim: Latent dimension d.
        base_channels: Channel base C of the conv trunk.
        component: Name of the initialisation stream and checkpoint prefix stem.
        seed: Initialisation seed.
        init_std: Standard deviation of the initial weights.
        params: Existing parameters to use.
    """

    def __init__(
        self,
        in_channels: int,
        latent_dim: int = 32,
        base_channels: int = 8,
        component: str = "prior_net",
        seed: int = 0,
        init_std: float = 0.01,
        params: Optional[ParamStore] = None,
    ):
        self.in_channels = in_channels
        self.latent_dim = latent_dim
        self.trunk = inference_trunk(in_channels, base_channels)
        features = base_channels * 8
        self.mu_head = [LayerSpec.fc("mu", features, latent_dim)]
        self.log_sigma_head = [LayerSpec.fc("log_sigma", features, latent_dim)]
        self.params = (
            params
            if params is not None
            else ParamStore.initialize(
                [self.trunk, self.mu_head, self.log_sigma_head],
                component_generator(seed, component),
                init_std,
            )
        )

    def check_input(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 4 or inputs.shape[1] != self.in_channels:
            raise ConfigurationError(
                f"inference net expects (batch, {self.in_channels}, H, W), got {inputs.shape}"
            )
        step = 2**N_BLOCKS
        if inputs.shape[2] % step or inputs.shape[3] % step:
            raise ConfigurationError(f"inference net input size {inputs.shape[2:]} is not divisible by {step}")
        return inputs

    def forward_tape(self, inputs: np.ndarray, mode: str = EVAL) -> Tuple[GaussianLatentStats, InferencePass]:
        inputs = self.check_input(inputs)
        trunk_tape, mu_tape, ls_tape = Tape(mode), Tape(mode), Tape(mode)
        pooled = forward(self.trunk, self.params, inputs, mode, tape=trunk_tape)
        mu = forward(self.mu_head, self.params, pooled, mode, tape=mu_tape)
        log_sigma = forward(self.log_sigma_head, self.params, pooled, mode, tape=ls_tape)
        return GaussianLatentStats(mu, log_sigma), InferencePass(trunk_tape, mu_tape, ls_tape)

    def infer(self, inputs: np.ndarray, mode: str = EVAL) -> GaussianLatentStats:
        return self.forward_tape(inputs, mode)[0]

    def backward(self, tape: InferencePass, d_mu: np.ndarray, d_log_sigma: np.ndarray) -> Dict[str, np.ndarray]:
        """Parameter gradients given upstream gradients on ``mu`` and ``log_sigma``."""
        mu = backward(self.mu_head, self.params, tape.mu, d_mu)
        ls = backward(self.log_sigma_head, self.params, tape.log_sigma, d_log_sigma)
        trunk = backward(self.trunk, self.params, tape.trunk, mu.input + ls.input)
        grads = dict(trunk.params)
        grads.update(mu.params)
        grads.update(ls.params)
        return grads


def infer(net: InferenceNet, inputs: np.ndarray, mode: str = EVAL) -> GaussianLatentStats:
    return net.infer(inputs, mode)


def posterior_input(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Channel-concatenation ``[x, y]`` fed to the posterior net."""
    return np.concatenate([np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)], axis=1)


def reparameterize(stats: GaussianLatentStats, eps: np.ndarray) -> np.ndarray:
    """``z = mu + eps * sigma``."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != stats.mu.shape:
        raise ConfigurationError(f"noise shape {eps.shape} != latent stats shape {stats.mu.shape}")
    return stats.mu + eps * stats.sigma


def reparameterize_backward(
    stats: GaussianLatentStats, eps: np.ndarray, dz: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients on ``(mu, log_sigma)`` of ``<dz, reparameterize(stats, eps)>``."""
    return dz, dz * eps * stats.sigma


def kl_diag_gaussians(q: GaussianLatentStats, p: GaussianLatentStats) -> float:
    """``KL(q || p)`` summed over dimensions, averaged over the batch."""
    return float(np.mean(np.sum(_kl_terms(q, p), axis=-1)))


def _kl_terms(q: GaussianLatentStats, p: GaussianLatentStats) -> np.ndarray:
    ratio = np.exp(2.0 * (q.log_sigma - p.log_sigma))
    diff = (q.mu - p.mu) * np.exp(-p.log_sigma)
    return p.log_sigma - q.log_sigma + 0.5 * (ratio + diff * diff) - 0.5


def kl_diag_gaussians_grad(
    q: GaussianLatentStats, p: GaussianLatentStats
) -> Tuple[float, GaussianLatentStats, GaussianLatentStats]:
    """KL value and its gradients with respect to ``q``'s and ``p``'s statistics."""
    batch = np.shape(q.mu)[0] if np.ndim(q.mu) > 1 else 1
    ratio = np.exp(2.0 * (q.log_sigma - p.log_sigma))
    inv_var_p = np.exp(-2.0 * p.log_sigma)
    delta = q.mu - p.mu
    value = float(np.mean(np.sum(_kl_terms(q, p), axis=-1)))
    d_mu_q = delta * inv_var_p / batch
    d_ls_q = (ratio - 1.0) / batch
    d_mu_p = -d_mu_q
    d_ls_p = (1.0 - ratio - delta * delta * inv_var_p) / batch
    return value, GaussianLatentStats(d_mu_q, d_ls_q), GaussianLatentStats(d_mu_p, d_ls_p)


def reparameterized_sample(
    stats: GaussianLatentStats, seed: int, purpose: Purpose, round_index: int, chain_ids: Sequence[int]
) -> Tuple[np.ndarray, np.ndarray]:
    """Keyed draw ``eps`` and the sample ``mu + eps * sigma``."""
    eps = latent_normals(seed, purpose, round_index, chain_ids, stats.mu.shape[1])
    return reparameterize(stats, eps), eps


def evae_warm_prior(
    prior: EnergyPrior,
    prior_net: InferenceNet,
    x: np.ndarray,
    cfg: LangevinConfig,
    chain_ids: Optional[Sequence[int]] = None,
    round_index: int = 0,
    purpose: Purpose = Purpose.PRIOR,
    init_purpose: Purpose = Purpose.REPARAM_PRIOR,
    stats: Optional[GaussianLatentStats] = None,
    noise: Optional[NoiseSource] = None,
    trace: Optional[TraceFn] = None,
) -> np.ndarray:
    """Prior Langevin started from a reparameterised prior-net sample."""
    if stats is None:
        stats = prior_net.infer(x)
    ids = resolve_chain_ids(chain_ids, stats.mu.shape[0], None)
    z0, _ = reparameterized_sample(stats, cfg.seed, init_purpose, round_index, ids)
    return prior_langevin(prior, cfg, z0, noise, ids, round_index, purpose=purpose, trace=trace)


def evae_warm_posterior(
    generator: LatentGenerator,
    prior: EnergyPrior,
    posterior_net: InferenceNet,
    x: np.ndarray,
    y: np.ndarray,
    cfg: LangevinConfig,
    chain_ids: Optional[Sequence[int]] = None,
    round_index: int = 0,
    stats: Optional[GaussianLatentStats] = None,
    noise: Optional[NoiseSource] = None,
    trace: Optional[TraceFn] = None,
) -> np.ndarray:
    """Posterior Langevin started from a reparameterised posterior-net sample."""
    if stats is None:
        stats = posterior_net.infer(posterior_input(x, y))
    ids = resolve_chain_ids(chain_ids, stats.mu.shape[0], None)
    z0, _ = reparameterized_sample(stats, cfg.seed, Purpose.REPARAM_POSTERIOR, round_index, ids)
    return posterior_langevin(generator, prior, x, y, cfg, z0, noise, ids, round_index, trace)
