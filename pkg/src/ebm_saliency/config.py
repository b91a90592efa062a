"""
Training configuration.

Defaults are the full-scale hyperparameters: d = 32, K- = K+ = 6, step sizes
0.4 / 0.1, learning rates 2.5e-5 (generator), 1e-5 (discriminator) and 1e-4
(energy prior), lambda = 0.1, batch size 10, sigma_z = sigma_eps = 1.
"""

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from .errors import ConfigurationError

MODEL_KINDS = ("eabp", "egan", "evae", "base")
RECONSTRUCTIONS = ("gaussian", "bce")
PRIORS = ("ebm", "gaussian")

# CLI spellings that differ from the field names
ALIASES = {"lambda": "lam", "model_kind": "model"}


@dataclass(frozen=True)
class TrainingConfig:
    model: str = "eabp"
    epochs: int = 30
    batch_size: int = 10
    latent_dim: int = 32
    k_prior: int = 6
    k_post: int = 6
    step_prior: float = 0.4
    step_post: float = 0.1
    lr_gen: float = 2.5e-5
    lr_disc: float = 1e-5
    lr_ebm: float = 1e-4
    lam: float = 0.1
    sigma_z: float = 1.0
    sigma_eps: float = 1.0
    seed: int = 0
    ebm_hidden: int = 60
    disc_width: int = 64
    infer_width: int = 8
    init_std: float = 0.01
    reconstruction: str = "gaussian"
    prior: str = "ebm"
    train_discriminator: bool = True
    checkpoint_every: int = 0

    def validate(self) -> "TrainingConfig":
        """Return self, or raise ConfigurationError naming the first bad field."""
        if self.model not in MODEL_KINDS:
            raise ConfigurationError(f"model must be one of {MODEL_KINDS}, got '{self.model}'")
        if self.reconstruction not in RECONSTRUCTIONS:
            raise ConfigurationError(
                f"reconstruction must be one of {RECONSTRUCTIONS}, got '{self.reconstruction}'"
            )
        if self.prior not in PRIORS:
            raise ConfigurationError(f"prior must be one of {PRIORS}, got '{self.prior}'")
        for name in ("epochs", "k_prior", "k_post", "seed", "checkpoint_every"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ConfigurationError(f"{name} must be a non-negative integer, got {value!r}")
        for name in ("latent_dim", "ebm_hidden", "disc_width", "infer_width"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.batch_size, int) or isinstance(self.batch_size, bool) or self.batch_size < 2:
            raise ConfigurationError(f"batch_size must be at least 2, got {self.batch_size!r}")
        for name in ("step_prior", "step_post", "lr_gen", "lr_disc", "lr_ebm", "sigma_z", "sigma_eps", "init_std"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
                raise ConfigurationError(f"{name} must be positive, got {value!r}")
        if not isinstance(self.lam, (int, float)) or isinstance(self.lam, bool) or self.lam < 0:
            raise ConfigurationError(f"lambda must be non-negative, got {self.lam!r}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base: Optional["TrainingConfig"] = None) -> "TrainingConfig":
        """Overlay ``data`` on ``base`` (default: the defaults); ``None`` values are skipped."""
        known = {f.name: f.type for f in fields(cls)}
        updates: Dict[str, Any] = {}
        for raw_key, value in data.items():
            key = normalize_key(raw_key)
            if key not in known:
                raise ConfigurationError(f"unknown configuration key '{raw_key}'")
            if value is not None:
                updates[key] = _coerce(key, value, getattr(base or cls(), key))
        return replace(base or cls(), **updates).validate()


def normalize_key(key: str) -> str:
    key = key.lstrip("-").replace("-", "_")
    return ALIASES.get(key, key)


def _coerce(key: str, value: Any, current: Any) -> Any:
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{key} must be true or false, got {value!r}")
        return value
    if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(current, int) and isinstance(value, float) and value.is_integer():
        return int(value)
    return value


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a JSON object of option values."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return {normalize_key(k): v for k, v in data.items()}


def write_config_file(path: Union[str, Path], values: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(dict(values), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
