"""
Energy-based latent prior.

The prior is an exponential tilting of an isotropic Gaussian reference,

    p_alpha(z) ~ exp(-U_alpha(z)) * N(0, sigma_z^2 I),

so its energy is ``E(z) = U_alpha(z) + ||z||^2 / (2 sigma_z^2)``. ``U_alpha`` is a
small GELU MLP with a scalar output. The normalising constant is never formed.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, NumericalError
from .numcore import Gradients, LayerSpec, ParamStore, Tape, backward, forward
from .rng import NoiseSource, NoiseStream, Purpose, component_generator, latent_normals

logger = logging.getLogger(__name__)

TraceFn = Callable[[int, np.ndarray], None]


@dataclass(frozen=True)
class LangevinConfig:
    """Step count, step size and seed of one Langevin sampler."""

    steps: int
    step_size: float
    seed: int = 0

    def __post_init__(self) -> None:
        if int(self.steps) != self.steps or self.steps < 0:
            raise ConfigurationError(f"Langevin steps must be a non-negative integer, got {self.steps}")
        if not self.step_size > 0:
            raise ConfigurationError(f"Langevin step size must be positive, got {self.step_size}")


def energy_net(latent_dim: int, hidden: int = 60, n_hidden: int = 2) -> List[LayerSpec]:
    """Layer chain ``d -> hidden -> ... -> 1`` with GELU after every hidden layer."""
    layers: List[LayerSpec] = []
    width = latent_dim
    for i in range(n_hidden):
        layers += [LayerSpec.fc(f"fc{i + 1}", width, hidden), LayerSpec.gelu()]
        width = hidden
    layers.append(LayerSpec.fc(f"fc{n_hidden + 1}", width, 1))
    return layers


class EnergyPrior:
    """Tilted Gaussian prior over ``latent_dim``-dimensional latents.

    Args:
        latent_dim: Dimension d of z.
        hidden: Width of the hidden layers of ``U_alpha``.
        sigma_z: Standard deviation of the Gaussian reference.
        n_hidden: Number of hidden layers (0 gives a single linear layer).
        seed: Seed for parameter initialisation.
        init_std: Standard deviation of the initial weights and biases.
        params: Use these parameters instead of initialising new ones.
        tilted: When False the tilt is held at zero and the prior is the plain Gaussian.
    """

    def __init__(
        self,
        latent_dim: int = 32,
        hidden: int = 60,
        sigma_z: float = 1.0,
        n_hidden: int = 2,
        seed: int = 0,
        init_std: float = 0.01,
        params: Optional[ParamStore] = None,
        tilted: bool = True,
    ):
        if latent_dim < 1:
            raise ConfigurationError(f"latent dimension must be positive, got {latent_dim}")
        if not sigma_z > 0:
            raise ConfigurationError(f"sigma_z must be positive, got {sigma_z}")
        self.latent_dim = latent_dim
        self.sigma_z = float(sigma_z)
        self.tilted = tilted
        self.net = energy_net(latent_dim, hidden, n_hidden)
        self.params = (
            params
            if params is not None
            else ParamStore.initialize([self.net], component_generator(seed, "ebm"), init_std)
        )

    def check_latents(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ConfigurationError(
                f"latent batch must have shape (n, {self.latent_dim}), got {z.shape}"
            )
        return z

    def tilt(self, z: np.ndarray) -> np.ndarray:
        """``U_alpha`` per latent, shape ``(n,)``."""
        z = self.check_latents(z)
        if not self.tilted:
            return np.zeros(z.shape[0])
        return forward(self.net, self.params, z)[:, 0]

    def energy(self, z: np.ndarray) -> np.ndarray:
        """``E(z)`` per latent, shape ``(n,)``."""
        z = self.check_latents(z)
        return self.tilt(z) + np.sum(z * z, axis=1) / (2.0 * self.sigma_z**2)

    def energy_and_grad(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Energies ``(n,)`` and their gradients with respect to z, ``(n, d)``."""
        z = self.check_latents(z)
        quad = np.sum(z * z, axis=1) / (2.0 * self.sigma_z**2)
        quad_grad = z / self.sigma_z**2
        if not self.tilted:
            return quad, quad_grad
        grads, out = self._tilt_backward(z, np.ones((z.shape[0], 1)), wrt_params=False)
        return out[:, 0] + quad, grads.input + quad_grad

    def tilt_param_grads(self, z: np.ndarray) -> Dict[str, np.ndarray]:
        """Batch mean of ``grad_alpha U_alpha(z_i)``."""
        z = self.check_latents(z)
        if z.shape[0] == 0:
            raise ConfigurationError("empty latent sample set")
        if not self.tilted:
            return self.params.zeros_like()
        grads, _ = self._tilt_backward(z, np.full((z.shape[0], 1), 1.0 / z.shape[0]))
        return grads.params

    def _tilt_backward(
        self, z: np.ndarray, upstream: np.ndarray, wrt_params: bool = True
    ) -> Tuple[Gradients, np.ndarray]:
        tape = Tape("eval")
        out = forward(self.net, self.params, z, tape=tape)
        return backward(self.net, self.params, tape, upstream, wrt_params=wrt_params), out

    def sample_reference(
        self, seed: int, round_index: int, chain_ids: Sequence[int], purpose: Purpose = Purpose.PRIOR_INIT
    ) -> np.ndarray:
        """Draws from ``N(0, sigma_z^2 I)``, one keyed substream per chain."""
        return self.sigma_z * latent_normals(seed, purpose, round_index, chain_ids, self.latent_dim)


def energy(prior: EnergyPrior, z: np.ndarray) -> float:
    """Energy of a single latent vector."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ConfigurationError(f"expected one latent vector, got shape {z.shape}")
    return float(prior.energy(z[None, :])[0])


def langevin_chain(
    drift_grad: Callable[[np.ndarray], np.ndarray],
    init: np.ndarray,
    steps: int,
    step_size: float,
    noise: NoiseSource,
    trace: Optional[TraceFn] = None,
    label: str = "Langevin",
) -> np.ndarray:
    """Run ``z <- z - delta * grad E(z) + sqrt(2 delta) e`` for ``steps`` steps.

    Raises:
        NumericalError: carrying the 1-based step index of the first non-finite iterate.
    """
    z = np.array(init, dtype=np.float64)
    scale = np.sqrt(2.0 * step_size)
    for step in range(1, steps + 1):
        z = z - step_size * drift_grad(z) + scale * noise.normal()
        if not np.all(np.isfinite(z)):
            raise NumericalError(f"{label} iterate became non-finite at step {step}", step=step)
        if trace is not None:
            trace(step, z)
    logger.debug("%s: %d steps, %d chains", label, steps, z.shape[0])
    return z


def resolve_chain_ids(
    chain_ids: Optional[Sequence[int]], n_chains: Optional[int], init: Optional[np.ndarray]
) -> List[int]:
    """Stable per-chain ids: explicit ids, else one per init row, else 0..n_chains-1."""
    if chain_ids is not None:
        return [int(i) for i in chain_ids]
    if init is not None:
        return list(range(np.shape(init)[0]))
    if n_chains is None:
        raise ConfigurationError("give init, chain_ids or n_chains")
    return list(range(n_chains))


def prior_langevin(
    prior: EnergyPrior,
    cfg: LangevinConfig,
    init: Optional[np.ndarray] = None,
    noise: Optional[NoiseSource] = None,
    chain_ids: Optional[Sequence[int]] = None,
    round_index: int = 0,
    purpose: Purpose = Purpose.PRIOR,
    n_chains: Optional[int] = None,
    trace: Optional[TraceFn] = None,
) -> np.ndarray:
    """Sample the prior by Langevin dynamics.

    Args:
        prior: Energy prior.
        cfg: Steps, step size and seed.
        init: Starting latents ``(n, d)``; drawn from ``N(0, sigma_z^2 I)`` when omitted.
        noise: Noise source; defaults to per-chain substreams keyed by
            ``(cfg.seed, purpose, round_index, chain id)``.
        chain_ids: Stable id per chain (default ``0..n-1``).
        round_index: Epoch or draw index used in the stream key.
        purpose: Stream tag for the noise.
        n_chains: Number of chains when neither ``init`` nor ``chain_ids`` is given.
        trace: Called as ``trace(step, z)`` after every step.

    Returns:
        Latents after exactly ``cfg.steps`` steps.
    """
    ids = resolve_chain_ids(chain_ids, n_chains, init)
    if init is None:
        init = prior.sample_reference(cfg.seed, round_index, ids)
    init = prior.check_latents(init)
    if not np.all(np.isfinite(init)):
        raise NumericalError("non-finite Langevin initialisation", step=0)
    if init.shape[0] != len(ids):
        raise ConfigurationError(f"{init.shape[0]} initial latents for {len(ids)} chain ids")
    if cfg.steps == 0:
        return init.copy()
    if noise is None:
        noise = NoiseStream(cfg.seed, purpose, round_index, ids, prior.latent_dim, cfg.steps)
    return langevin_chain(
        lambda z: prior.energy_and_grad(z)[1],
        init,
        cfg.steps,
        cfg.step_size,
        noise,
        trace,
        label="prior Langevin",
    )


def ebm_param_grad(prior: EnergyPrior, z_pos: np.ndarray, z_neg: np.ndarray) -> Dict[str, np.ndarray]:
    """Log-likelihood ascent direction for alpha.

    Returns ``mean_i grad_alpha U(z_i^-) - mean_i grad_alpha U(z_i^+)`` where ``z^+``
    are posterior samples and ``z^-`` prior samples. Feed the negation to a
    minimising optimiser.
    """
    z_pos = np.asarray(z_pos, dtype=np.float64)
    z_neg = np.asarray(z_neg, dtype=np.float64)
    if z_pos.shape[0] == 0 or z_neg.shape[0] == 0:
        raise ConfigurationError("ebm_param_grad needs non-empty posterior and prior sample sets")
    if z_pos.ndim != 2 or z_neg.ndim != 2 or z_pos.shape[1] != z_neg.shape[1]:
        raise ConfigurationError(
            f"posterior and prior samples differ in shape: {z_pos.shape} vs {z_neg.shape}"
        )
    neg = prior.tilt_param_grads(z_neg)
    pos = prior.tilt_param_grads(z_pos)
    return {name: neg[name] - pos[name] for name in neg}
