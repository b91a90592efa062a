"""
Patch discriminator and the adversarial losses of the EGAN learner.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError
from .numcore import TRAIN, LayerSpec, ParamStore, Tape, add_grads, backward, forward
from .rng import component_generator
from .saliency_generator import LatentGenerator

logger = logging.getLogger(__name__)

BCE_CLIP = 1e-7


def discriminator_net(in_channels: int, width: int = 64) -> List[LayerSpec]:
    """Five 3x3 convs, strides 2-1-2-1-2, batch-norm and LeakyReLU after the first four."""
    layers: List[LayerSpec] = []
    channels = in_channels
    for i, stride in enumerate((2, 1, 2, 1)):
        layers += [
            LayerSpec.conv(f"conv{i + 1}", channels, width, 3, stride, 1),
            LayerSpec.batch_norm(f"bn{i + 1}", width),
            LayerSpec.leaky_relu(),
        ]
        channels = width
    layers.append(LayerSpec.conv("conv5", channels, 1, 3, 2, 1))
    return layers


class Discriminator:
    """Fully convolutional discriminator over ``[map, image]``.

    The one-channel map sits in input channel 0, followed by the image channels.
    """

    def __init__(
        self,
        in_channels: int = 3,
        width: int = 64,
        seed: int = 0,
        init_std: float = 0.01,
        params: Optional[ParamStore] = None,
    ):
        self.in_channels = in_channels
        self.net = discriminator_net(in_channels + 1, width)
        self.params = (
            params
            if params is not None
            else ParamStore.initialize([self.net], component_generator(seed, "disc"), init_std)
        )

    def _stack(self, x: np.ndarray, m: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        m = np.asarray(m, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ConfigurationError(
                f"discriminator expects images of shape (batch, {self.in_channels}, H, W), got {x.shape}"
            )
        if m.shape != (x.shape[0], 1) + x.shape[2:]:
            raise ConfigurationError(f"map of shape {m.shape} does not match image {x.shape}")
        return np.concatenate([m, x], axis=1)

    def forward_tape(self, x: np.ndarray, m: np.ndarray, mode: str = TRAIN) -> Tuple[np.ndarray, Tape]:
        tape = Tape(mode)
        return forward(self.net, self.params, self._stack(x, m), mode, tape=tape), tape

    def discriminate(self, x: np.ndarray, m: np.ndarray, mode: str = "eval") -> np.ndarray:
        """Raw verdict logits, shape ``(batch, 1, H/8, W/8)``."""
        return forward(self.net, self.params, self._stack(x, m), mode)


def discriminate(discriminator: Discriminator, x: np.ndarray, m: np.ndarray, mode: str = "eval") -> np.ndarray:
    return discriminator.discriminate(x, m, mode)


def bce_with_logits(logits: np.ndarray, target: float) -> Tuple[float, np.ndarray]:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against a constant target.

    Uses ``softplus(l) - t*l`` so confident verdicts do not overflow.
    """
    logits = np.asarray(logits, dtype=np.float64)
    loss = float(np.mean(np.logaddexp(0.0, logits) - target * logits))
    return loss, (expit(logits) - target) / logits.size


def binary_cross_entropy(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean pixelwise BCE between probabilities and targets, with its gradient."""
    if pred.shape != target.shape:
        raise ConfigurationError(f"prediction shape {pred.shape} != target shape {target.shape}")
    p = np.clip(pred, BCE_CLIP, 1.0 - BCE_CLIP)
    loss = float(np.mean(-(target * np.log(p) + (1.0 - target) * np.log1p(-p))))
    grad = (p - target) / (p * (1.0 - p)) / pred.size
    return loss, grad


@dataclass
class GeneratorLossResult:
    """EGAN generator objective ``L_rec + lam * L_adv`` with descent gradients."""

    loss: float
    reconstruction: float
    adversarial: float
    grads: Dict[str, np.ndarray]
    reconstruction_grads: Dict[str, np.ndarray]
    adversarial_grads: Dict[str, np.ndarray]
    prediction: np.ndarray


def egan_generator_loss(
    generator: LatentGenerator,
    discriminator: Discriminator,
    x: np.ndarray,
    y: np.ndarray,
    z_pos: np.ndarray,
    lam: float = 0.1,
) -> GeneratorLossResult:
    """Generator loss at the posterior sample ``z_pos``.

    The discriminator runs in train mode with its parameters held fixed; its
    batch statistics are not committed and no gradient reaches its parameters.
    """
    if lam < 0:
        raise ConfigurationError(f"adversarial weight must be non-negative, got {lam}")
    out, gtape = generator.forward_tape(x, z_pos)
    rec, drec = binary_cross_entropy(out, np.asarray(y, dtype=np.float64))
    logits, dtape = discriminator.forward_tape(x, out)
    adv, dlogits = bce_with_logits(logits, 1.0)
    dmap = backward(discriminator.net, discriminator.params, dtape, dlogits, wrt_params=False).input[:, :1]
    rec_grads = generator.backward(gtape, drec).params
    adv_grads = generator.backward(gtape, dmap).params
    grads = dict(rec_grads)
    add_grads(grads, adv_grads, lam)
    return GeneratorLossResult(rec + lam * adv, rec, adv, grads, rec_grads, adv_grads, out)


@dataclass
class DiscriminatorLossResult:
    """EGAN discriminator objective with descent gradients over its parameters."""

    loss: float
    fake_term: float
    real_term: float
    grads: Dict[str, np.ndarray]
    fake_logits: np.ndarray
    real_logits: np.ndarray
    tapes: Tuple[Tape, Tape]


def egan_discriminator_loss(
    discriminator: Discriminator, prediction: np.ndarray, x: np.ndarray, y: np.ndarray
) -> DiscriminatorLossResult:
    """``BCE(d([T, x]), 0) + BCE(d([y, x]), 1)`` with ``T`` treated as a constant.

    Fake and real batches go through separate train-mode passes; commit the
    returned tapes' batch statistics in order to update the running buffers.
    """
    fake_logits, fake_tape = discriminator.forward_tape(x, np.array(prediction, dtype=np.float64))
    real_logits, real_tape = discriminator.forward_tape(x, y)
    fake, dfake = bce_with_logits(fake_logits, 0.0)
    real, dreal = bce_with_logits(real_logits, 1.0)
    grads = backward(discriminator.net, discriminator.params, fake_tape, dfake).params
    add_grads(grads, backward(discriminator.net, discriminator.params, real_tape, dreal).params)
    return DiscriminatorLossResult(
        fake + real, fake, real, grads, fake_logits, real_logits, (fake_tape, real_tape)
    )
