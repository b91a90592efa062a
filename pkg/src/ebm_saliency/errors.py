"""
Exception hierarchy for ebm_saliency.
"""

from typing import Optional


class SaliencyError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(SaliencyError, ValueError):
    """Invalid shapes, hyperparameters, layer specs or CLI/config values."""


class NumericalError(SaliencyError, ArithmeticError):
    """A non-finite value appeared during sampling, training or an update."""

    def __init__(self, message: str, step: Optional[int] = None, iteration: Optional[int] = None):
        super().__init__(message)
        self.step = step
        self.iteration = iteration


class CheckpointError(SaliencyError):
    """Malformed or truncated checkpoint file."""


class PNMParseError(SaliencyError):
    """Malformed netpbm data."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.reason = message
        self.offset = offset


class DatasetError(SaliencyError):
    """Dataset directory does not follow the naming convention."""
