"""
ebm_saliency package

Generative saliency prediction with an energy-based latent prior.

Convenience exports so users can:
    from ebm_saliency import SaliencyModel, TrainingConfig, train
and use module entry point:
    python -m ebm_saliency <command>
"""

# Public metadata
__version__ = "1.0.0"
__author__ = "ebm-saliency developers"

# Primary APIs
from .config import TrainingConfig  # noqa: E402
from .errors import (  # noqa: E402
    CheckpointError,
    ConfigurationError,
    DatasetError,
    NumericalError,
    PNMParseError,
    SaliencyError,
)
from .inference_metrics import predict_with_uncertainty  # noqa: E402
from .model import SaliencyModel  # noqa: E402
from .synthdata_io import generate_dataset, load_dataset, write_dataset  # noqa: E402
from .training import Trainer, train, train_eabp, train_egan, train_evae  # noqa: E402

__all__ = [
    "CheckpointError",
    "ConfigurationError",
    "DatasetError",
    "NumericalError",
    "PNMParseError",
    "SaliencyError",
    "SaliencyModel",
    "Trainer",
    "TrainingConfig",
    "__version__",
    "generate_dataset",
    "load_dataset",
    "predict_with_uncertainty",
    "train",
    "train_eabp",
    "train_egan",
    "train_evae",
    "write_dataset",
]
