"""
Model container: the components one learner trains, and their checkpoint form.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from . import __version__
from .adversarial import Discriminator
from .amortized import InferenceNet
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainingConfig
from .ebm_prior import EnergyPrior
from .errors import CheckpointError, ConfigurationError
from .numcore import ParamStore
from .saliency_generator import SaliencyGenerator

logger = logging.getLogger(__name__)

PREFIXES = {
    "generator": "gen.",
    "baseline": "base.",
    "prior": "ebm.",
    "discriminator": "disc.",
    "posterior_net": "post_net.",
    "prior_net": "prior_net.",
}


class SaliencyModel:
    """Generator plus whichever of prior, discriminator and inference nets the kind uses.

    Args:
        config: Validated training configuration; ``config.model`` is the kind.
        in_channels: Image channels of the data the model is built for.
    """

    def __init__(self, config: TrainingConfig, in_channels: int):
        config.validate()
        self.config = config
        self.kind = config.model
        self.in_channels = in_channels
        seed, std = config.seed, config.init_std
        self.generator = SaliencyGenerator(
            in_channels,
            config.latent_dim,
            sigma_eps=config.sigma_eps,
            stochastic=self.kind != "base",
            seed=seed,
            init_std=std,
            component="base" if self.kind == "base" else "gen",
        )
        self.prior: Optional[EnergyPrior] = None
        self.discriminator: Optional[Discriminator] = None
        self.posterior_net: Optional[InferenceNet] = None
        self.prior_net: Optional[InferenceNet] = None
        if self.kind == "base":
            return
        self.prior = EnergyPrior(
            config.latent_dim,
            config.ebm_hidden,
            config.sigma_z,
            seed=seed,
            init_std=std,
            tilted=config.prior == "ebm",
        )
        if self.kind == "egan":
            self.discriminator = Discriminator(in_channels, config.disc_width, seed=seed, init_std=std)
        if self.kind == "evae":
            self.posterior_net = InferenceNet(
                in_channels + 1, config.latent_dim, config.infer_width, "post_net", seed, std
            )
            self.prior_net = InferenceNet(
                in_channels, config.latent_dim, config.infer_width, "prior_net", seed, std
            )

    def components(self) -> Dict[str, ParamStore]:
        """Parameter stores keyed by component name."""
        stores = {"baseline" if self.kind == "base" else "generator": self.generator.params}
        for name in ("prior", "discriminator", "posterior_net", "prior_net"):
            part = getattr(self, name)
            if part is not None:
                stores[name] = part.params
        return stores

    def tensors(self) -> Dict[str, np.ndarray]:
        merged: Dict[str, np.ndarray] = {}
        for name, store in self.components().items():
            merged.update(store.tensors(PREFIXES[name]))
        return merged

    def metadata(self) -> Dict[str, Any]:
        return {
            "format": "ebm-saliency",
            "version": __version__,
            "model": self.kind,
            "in_channels": self.in_channels,
            "config": self.config.to_dict(),
        }

    def save(self, path: Union[str, Path], dtype: str = "f64") -> Path:
        return save_checkpoint(path, self.tensors(), dtype, self.metadata())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SaliencyModel":
        """Rebuild a model from a checkpoint written by :meth:`save`."""
        tensors, metadata = load_checkpoint(path)
        if metadata.get("format") != "ebm-saliency":
            raise CheckpointError(f"{path} is not an ebm-saliency checkpoint")
        try:
            config = TrainingConfig.from_dict(metadata["config"])
            model = cls(config, int(metadata["in_channels"]))
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"{path}: unusable metadata: {e}") from e
        try:
            for name, store in model.components().items():
                store.load_tensors(tensors, PREFIXES[name])
        except ConfigurationError as e:
            raise CheckpointError(f"{path}: {e}") from e
        logger.debug("Loaded %s model from %s", model.kind, path)
        return model
