"""
Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by
``(seed, purpose, round, sample id)``. A chain therefore owns its noise no matter
which batch it lands in or in which order batches are visited.
"""

import zlib
from enum import IntEnum
from typing import List, Optional, Protocol, Sequence

import numpy as np

from .errors import ConfigurationError


class Purpose(IntEnum):
    """Tags that separate independent random streams."""

    INIT = 1
    SHUFFLE = 2
    PRIOR_INIT = 3
    PRIOR = 4
    POSTERIOR_INIT = 5
    POSTERIOR = 6
    REPARAM_PRIOR = 7
    REPARAM_POSTERIOR = 8
    PREDICT_INIT = 9
    PREDICT = 10
    DIAGNOSTIC = 11
    DATA = 12
    ORACLE = 13


def substream(seed: int, purpose: Purpose, round_index: int = 0, sample_id: int = 0) -> np.random.Generator:
    """Return the generator owned by one (seed, purpose, round, sample) key."""
    key = [int(seed), int(purpose), int(round_index), int(sample_id)]
    if min(key) < 0:
        raise ConfigurationError(f"random stream keys must be non-negative, got {key}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def component_generator(seed: int, component: str) -> np.random.Generator:
    """Generator used to initialise the parameters of a named component."""
    return substream(seed, Purpose.INIT, zlib.crc32(component.encode("utf-8")))


def latent_normals(
    seed: int, purpose: Purpose, round_index: int, sample_ids: Sequence[int], dim: int
) -> np.ndarray:
    """One standard-normal ``dim``-vector per sample id, stacked to ``(n, dim)``."""
    if len(sample_ids) == 0:
        return np.zeros((0, dim))
    return np.stack(
        [substream(seed, purpose, round_index, sid).standard_normal(dim) for sid in sample_ids]
    )


class NoiseSource(Protocol):
    """Anything that yields the per-step Langevin noise ``e_t`` of shape (n, dim)."""

    def normal(self) -> np.ndarray:
        ...


class NoiseStream:
    """Per-chain Gaussian noise, drawn from each chain's own substream in chunks.

    Args:
        seed: Global seed.
        purpose: Stream tag (prior, posterior, prediction, ...).
        round_index: Epoch during training, draw index at prediction time.
        sample_ids: One id per chain.
        dim: Latent dimension.
        steps: Expected number of draws; bounds the chunk size.
        max_buffer: Upper bound on buffered floats.
    """

    def __init__(
        self,
        seed: int,
        purpose: Purpose,
        round_index: int,
        sample_ids: Sequence[int],
        dim: int,
        steps: int,
        max_buffer: int = 1 << 24,
    ):
        self.dim = dim
        self.n_chains = len(sample_ids)
        self._generators: List[np.random.Generator] = [
            substream(seed, purpose, round_index, sid) for sid in sample_ids
        ]
        per_step = max(1, self.n_chains * dim)
        self._chunk = max(1, min(max(steps, 1), max_buffer // per_step))
        self._buffer: Optional[np.ndarray] = None
        self._cursor = 0

    def normal(self) -> np.ndarray:
        if self._buffer is None or self._cursor >= self._buffer.shape[0]:
            self._refill()
        assert self._buffer is not None
        draw = self._buffer[self._cursor]
        self._cursor += 1
        return draw

    def _refill(self) -> None:
        if self.n_chains == 0:
            self._buffer = np.zeros((self._chunk, 0, self.dim))
        else:
            self._buffer = np.stack(
                [g.standard_normal((self._chunk, self.dim)) for g in self._generators], axis=1
            )
        self._cursor = 0


class ZeroNoise:
    """Noise source that always returns zeros (drift-only test stream)."""

    def __init__(self, n_chains: int, dim: int):
        self.n_chains = n_chains
        self.dim = dim

    def normal(self) -> np.ndarray:
        return np.zeros((self.n_chains, self.dim))


def shuffled_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Fixed per-epoch permutation of ``range(n)``."""
    return substream(seed, Purpose.SHUFFLE, epoch).permutation(n)
