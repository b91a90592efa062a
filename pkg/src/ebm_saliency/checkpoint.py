"""
Checkpoint files.

A checkpoint is one line of JSON header followed by a raw little-endian payload:

    {"tensors": [{"name", "shape", "dtype", "byte_offset", "byte_length"}, ...],
     "metadata": {...}}\\n<payload>

``dtype`` is ``"f64"`` (bit-exact) or ``"f32"`` (storage only; values are widened
back to float64 on load). Offsets are relative to the first payload byte.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np

from .errors import CheckpointError

logger = logging.getLogger(__name__)

_DTYPES = {"f64": np.dtype("<f8"), "f32": np.dtype("<f4")}


def save_checkpoint(
    path: Union[str, Path],
    tensors: Mapping[str, np.ndarray],
    dtype: str = "f64",
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write ``tensors`` (sorted by name) and ``metadata`` to ``path``."""
    if dtype not in _DTYPES:
        raise CheckpointError(f"unsupported checkpoint dtype '{dtype}'")
    storage = _DTYPES[dtype]
    entries = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        data = np.ascontiguousarray(tensors[name], dtype=storage).tobytes()
        entries.append(
            {
                "name": name,
                "shape": [int(s) for s in np.shape(tensors[name])],
                "dtype": dtype,
                "byte_offset": offset,
                "byte_length": len(data),
            }
        )
        chunks.append(data)
        offset += len(data)
    header = json.dumps({"tensors": entries, "metadata": metadata or {}}, sort_keys=True)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(header.encode("utf-8"))
        handle.write(b"\n")
        for chunk in chunks:
            handle.write(chunk)
    logger.debug("Wrote %d tensors (%d payload bytes) to %s", len(entries), offset, path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Read a checkpoint back as ``(tensors, metadata)``; tensors are float64.

    Raises:
        CheckpointError: missing header terminator, bad JSON, unknown dtype or
            a payload shorter than the header promises.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    newline = raw.find(b"\n")
    if newline < 0:
        raise CheckpointError(f"{path}: header is not newline-terminated")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
        entries = header["tensors"]
        metadata = header.get("metadata", {})
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise CheckpointError(f"{path}: malformed header: {e}") from e

    payload = memoryview(raw)[newline + 1 :]
    tensors: Dict[str, np.ndarray] = {}
    for entry in entries:
        try:
            name = entry["name"]
            shape = tuple(int(s) for s in entry["shape"])
            storage = _DTYPES[entry["dtype"]]
            start, length = int(entry["byte_offset"]), int(entry["byte_length"])
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"{path}: malformed tensor entry {entry!r}") from e
        expected = int(np.prod(shape, dtype=np.int64)) * storage.itemsize
        if length != expected:
            raise CheckpointError(f"{path}: tensor '{name}' declares {length} bytes, shape needs {expected}")
        if start < 0 or start + length > len(payload):
            raise CheckpointError(f"{path}: payload truncated inside tensor '{name}'")
        values = np.frombuffer(payload[start : start + length], dtype=storage).reshape(shape)
        tensors[name] = values.astype(np.float64)
    return tensors, metadata
