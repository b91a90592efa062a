"""
Procedural toy saliency scenes and netpbm dataset I/O.

Each scene is a noisy gray canvas with two to four flat shapes (rectangles or
discs). One shape is salient: its contrast against the background exceeds every
other shape's by at least ``CONTRAST_MARGIN``. An ambiguous scene has two
equally contrasted candidates instead; the label picks one of them at random
and the ambiguity mask marks both.

On disk a dataset is a directory of binary netpbm files:

    img_0000.ppm (or .pgm)   image
    gt_0000.pgm              ground-truth mask
    amb_0000.pgm             ambiguity mask (optional)
    dep_0000.pgm             depth channel (optional)
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError, DatasetError, PNMParseError
from .rng import Purpose, substream

logger = logging.getLogger(__name__)

MIN_SIZE = 16
CONTRAST_MARGIN = 0.1
BACKGROUND_RANGE = (0.45, 0.55)
NOISE_AMPLITUDE = 0.05
SALIENT_CONTRAST = (0.35, 0.45)
DISTRACTOR_CONTRAST = 0.05
SHAPE_KINDS = ("rectangle", "disc")

PathLike = Union[str, Path]


@dataclass
class ShapeSpec:
    kind: str
    top: int
    left: int
    height: int
    width: int
    intensity: float
    depth: float = 0.0

    def raster(self, size: int) -> np.ndarray:
        """Boolean ``size x size`` footprint."""
        rows, cols = np.ogrid[:size, :size]
        if self.kind == "rectangle":
            return (
                (rows >= self.top)
                & (rows < self.top + self.height)
                & (cols >= self.left)
                & (cols < self.left + self.width)
            )
        radius = (self.height - 1) / 2.0
        cy, cx = self.top + radius, self.left + radius
        return (rows - cy) ** 2 + (cols - cx) ** 2 <= radius**2 + 1e-9


@dataclass
class SceneSpec:
    """Everything needed to redraw one scene."""

    size: int
    background: float
    noise_amplitude: float
    shapes: List[ShapeSpec]
    salient: List[int]
    ambiguous: bool
    label: int
    with_depth: bool = False

    def contrasts(self) -> List[float]:
        return [abs(s.intensity - self.background) for s in self.shapes]


@dataclass
class ImageSample:
    """One image with its mask; arrays are channels-first."""

    sample_id: int
    image: np.ndarray
    mask: np.ndarray
    ambiguity: Optional[np.ndarray] = None
    scene: Optional[SceneSpec] = field(default=None, repr=False)


class StackedDataset(NamedTuple):
    ids: np.ndarray
    images: np.ndarray
    masks: np.ndarray
    ambiguity: Optional[np.ndarray]


def stack_samples(samples: Sequence[ImageSample]) -> StackedDataset:
    """Batch arrays ``(n, C, H, W)`` from a list of samples of equal shape."""
    if not samples:
        raise DatasetError("dataset is empty")
    shapes = {s.image.shape for s in samples}
    if len(shapes) != 1:
        raise DatasetError(f"samples have differing image shapes: {sorted(shapes)}")
    ambiguity = None
    if all(s.ambiguity is not None for s in samples):
        ambiguity = np.stack([s.ambiguity for s in samples])
    return StackedDataset(
        np.array([s.sample_id for s in samples], dtype=np.int64),
        np.stack([s.image for s in samples]),
        np.stack([s.mask for s in samples]),
        ambiguity,
    )


# generation --------------------------------------------------------------------------------------


def _place_shapes(rng: np.random.Generator, size: int, count: int) -> List[Tuple[int, int, int, int]]:
    lo, hi = max(3, size // 6), max(4, size // 3)
    boxes: List[Tuple[int, int, int, int]] = []
    for _ in range(200 * count):
        if len(boxes) == count:
            break
        h = int(rng.integers(lo, hi + 1))
        w = int(rng.integers(lo, hi + 1))
        top = int(rng.integers(1, size - h))
        left = int(rng.integers(1, size - w))
        # one pixel of clearance between footprints
        if all(
            top + h + 1 <= t or t + bh + 1 <= top or left + w + 1 <= l or l + bw + 1 <= left
            for t, l, bh, bw in boxes
        ):
            boxes.append((top, left, h, w))
    return boxes


def generate_scene(
    rng: np.random.Generator, size: int = 32, ambiguous: bool = False, with_depth: bool = False
) -> SceneSpec:
    """Draw the layout of one scene."""
    background = float(rng.uniform(*BACKGROUND_RANGE))
    count = int(rng.integers(2, 5))
    boxes = _place_shapes(rng, size, count)
    while len(boxes) < 2:
        boxes = _place_shapes(rng, size, 2)
    count = len(boxes)

    salient_contrast = float(rng.uniform(*SALIENT_CONTRAST))
    sign = 1.0 if rng.random() < 0.5 else -1.0
    salient_intensity = background + sign * salient_contrast
    n_salient = 2 if ambiguous else 1
    salient = sorted(int(i) for i in rng.choice(count, size=n_salient, replace=False))
    upper = salient_contrast - CONTRAST_MARGIN - 0.05
    layers = rng.permutation(count)

    shapes: List[ShapeSpec] = []
    for i, (top, left, h, w) in enumerate(boxes):
        kind = SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))]
        if kind == "disc":
            h = w = min(h, w)
        if i in salient:
            intensity = salient_intensity
        else:
            contrast = float(rng.uniform(DISTRACTOR_CONTRAST, upper))
            intensity = background + (1.0 if rng.random() < 0.5 else -1.0) * contrast
        depth = float(layers[i] + 1) / (count + 1) if with_depth else 0.0
        shapes.append(ShapeSpec(kind, top, left, h, w, float(np.clip(intensity, 0.0, 1.0)), depth))

    label = salient[int(rng.integers(2))] if ambiguous else salient[0]
    return SceneSpec(size, background, NOISE_AMPLITUDE, shapes, salient, ambiguous, label, with_depth)


def render_scene(
    scene: SceneSpec, rng: np.random.Generator, channels: int = 3
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Image ``(C, H, W)``, mask ``(1, H, W)`` and ambiguity mask ``(1, H, W)``."""
    size = scene.size
    canvas = scene.background + rng.uniform(-scene.noise_amplitude, scene.noise_amplitude, (size, size))
    depth = np.zeros((size, size))
    footprints = [shape.raster(size) for shape in scene.shapes]
    for shape, footprint in zip(scene.shapes, footprints):
        canvas[footprint] = shape.intensity
        depth[footprint] = shape.depth
    canvas = np.clip(canvas, 0.0, 1.0)
    image = np.repeat(canvas[None], channels, axis=0)
    if scene.with_depth:
        image = np.concatenate([image, depth[None]], axis=0)
    mask = footprints[scene.label].astype(np.float64)[None]
    ambiguity = np.zeros((1, size, size))
    if scene.ambiguous:
        a, b = (footprints[i] for i in scene.salient)
        ambiguity[0] = np.logical_xor(a, b)
    return image, mask, ambiguity


def generate_dataset(
    n: int,
    size: int = 32,
    p_ambiguous: float = 0.0,
    with_depth: bool = False,
    seed: int = 0,
    channels: int = 3,
) -> List[ImageSample]:
    """Generate ``n`` toy scenes; sample ``i`` depends only on ``(seed, i)``.

    Raises:
        ConfigurationError: ``n < 1``, ``size < 16``, ``p_ambiguous`` outside
            [0, 1] or ``channels`` not 1 or 3.
    """
    if n < 1:
        raise ConfigurationError(f"n must be at least 1, got {n}")
    if size < MIN_SIZE:
        raise ConfigurationError(f"image size must be at least {MIN_SIZE}, got {size}")
    if not 0.0 <= p_ambiguous <= 1.0:
        raise ConfigurationError(f"p_ambiguous must lie in [0, 1], got {p_ambiguous}")
    if channels not in (1, 3):
        raise ConfigurationError(f"channels must be 1 or 3, got {channels}")
    samples = []
    for i in range(n):
        rng = substream(seed, Purpose.DATA, 0, i)
        ambiguous = bool(rng.random() < p_ambiguous)
        scene = generate_scene(rng, size, ambiguous, with_depth)
        image, mask, ambiguity = render_scene(scene, rng, channels)
        samples.append(ImageSample(i, image, mask, ambiguity, scene))
    logger.debug("Generated %d scenes (%d ambiguous)", n, sum(s.scene.ambiguous for s in samples))
    return samples


# netpbm ------------------------------------------------------------------------------------------


class PNMImage(NamedTuple):
    """Decoded netpbm data, channels-first, rescaled to the recorded range."""

    data: np.ndarray
    maxval: int
    scale: float


def quantize(values: np.ndarray, maxval: int = 255) -> np.ndarray:
    """``floor(v * maxval + 0.5)`` as integers."""
    return np.floor(np.asarray(values, dtype=np.float64) * maxval + 0.5).astype(np.int64)


def write_pnm(path: PathLike, data: np.ndarray, bits: int = 8, scale: Optional[float] = None) -> Path:
    """Write a one-channel map as P5 or a three-channel image as P6.

    Args:
        path: Destination file.
        data: ``(H, W)``, ``(1, H, W)`` or ``(3, H, W)`` array.
        bits: 8 or 16 bits per sample.
        scale: Values are divided by ``scale`` before quantisation and the scale is
            recorded in a ``# max`` header comment. Defaults to 1.

    Raises:
        ConfigurationError: bad shape, bit depth, or values outside ``[0, scale]``.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ConfigurationError(f"cannot store an array of shape {np.shape(data)} as netpbm")
    if bits not in (8, 16):
        raise ConfigurationError(f"bits must be 8 or 16, got {bits}")
    scale = 1.0 if scale is None else float(scale)
    if not scale > 0:
        raise ConfigurationError(f"scale must be positive, got {scale}")
    normalised = arr / scale
    if not np.all(np.isfinite(normalised)) or normalised.min() < 0.0 or normalised.max() > 1.0:
        raise ConfigurationError(f"values for {path} must lie in [0, {scale}]")
    maxval = 255 if bits == 8 else 65535
    levels = quantize(normalised, maxval).transpose(1, 2, 0)
    magic = b"P5" if arr.shape[0] == 1 else b"P6"
    header = magic + b"\n"
    if scale != 1.0:
        header += f"# max {scale!r}\n".encode("ascii")
    header += f"{arr.shape[2]} {arr.shape[1]}\n{maxval}\n".encode("ascii")
    payload = levels.astype(">u2" if bits == 16 else np.uint8).tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + payload)
    return path


_WHITESPACE = b" \t\r\n"


def _header_token(raw: bytes, pos: int, comments: List[str]) -> Tuple[bytes, int]:
    while pos < len(raw):
        ch = raw[pos : pos + 1]
        if ch == b"#":
            end = raw.find(b"\n", pos)
            if end < 0:
                raise PNMParseError("unterminated header comment", pos)
            comments.append(raw[pos + 1 : end].decode("ascii", "replace").strip())
            pos = end + 1
        elif ch in (b" ", b"\t", b"\r", b"\n"):
            pos += 1
        else:
            break
    start = pos
    while pos < len(raw) and raw[pos] not in _WHITESPACE and raw[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PNMParseError("header ends prematurely", start)
    return raw[start:pos], pos


def _header_int(raw: bytes, pos: int, what: str, comments: List[str]) -> Tuple[int, int]:
    token, end = _header_token(raw, pos, comments)
    if not token.isdigit():
        raise PNMParseError(f"invalid {what} {token!r}", end - len(token))
    return int(token), end


def decode_pnm(raw: bytes) -> PNMImage:
    """Parse binary P5/P6 bytes.

    Raises:
        PNMParseError: with the byte offset of the first malformed element.
    """
    if raw[:2] not in (b"P5", b"P6"):
        raise PNMParseError(f"unsupported magic number {raw[:2]!r}", 0)
    channels = 1 if raw[:2] == b"P5" else 3
    comments: List[str] = []
    width, pos = _header_int(raw, 2, "width", comments)
    height, pos = _header_int(raw, pos, "height", comments)
    maxval, pos = _header_int(raw, pos, "maxval", comments)
    if width < 1 or height < 1:
        raise PNMParseError(f"empty image {width}x{height}", pos)
    if not 0 < maxval < 65536:
        raise PNMParseError(f"maxval {maxval} out of range", pos)
    if pos >= len(raw) or raw[pos] not in _WHITESPACE:
        raise PNMParseError("missing whitespace after maxval", pos)
    pos += 1
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    expected = width * height * channels * dtype.itemsize
    if len(raw) - pos < expected:
        raise PNMParseError(f"truncated payload: {len(raw) - pos} of {expected} bytes", len(raw))
    levels = np.frombuffer(raw, dtype=dtype, count=width * height * channels, offset=pos)
    if levels.max(initial=0) > maxval:
        raise PNMParseError(f"sample exceeds maxval {maxval}", pos)
    scale = 1.0
    for comment in comments:
        match = re.fullmatch(r"max\s+(\S+)", comment)
        if match:
            try:
                scale = float(match.group(1))
            except ValueError as e:
                raise PNMParseError(f"bad scale comment {comment!r}", 0) from e
    data = levels.reshape(height, width, channels).transpose(2, 0, 1).astype(np.float64) / maxval
    return PNMImage(data * scale if scale != 1.0 else data, maxval, scale)


def read_pnm(path: PathLike) -> PNMImage:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}") from e
    try:
        return decode_pnm(raw)
    except PNMParseError as e:
        raise PNMParseError(f"{path}: {e.reason}", e.offset) from None


# datasets ----------------------------------------------------------------------------------------

_NAME = re.compile(r"^(img|gt|amb|dep|pred|unc)_(\d{4,})\.(ppm|pgm)$")


@dataclass
class ManifestEntry:
    sample_id: int
    image: Optional[Path] = None
    mask: Optional[Path] = None
    ambiguity: Optional[Path] = None
    depth: Optional[Path] = None


def _scan(directory: Path, kinds: Sequence[str]) -> Dict[int, Dict[str, Path]]:
    if not directory.is_dir():
        raise DatasetError(f"{directory} is not a directory")
    found: Dict[int, Dict[str, Path]] = {}
    for path in sorted(directory.iterdir()):
        match = _NAME.match(path.name)
        if not match or match.group(1) not in kinds:
            continue
        kind, sid, ext = match.group(1), int(match.group(2)), match.group(3)
        if kind != "img" and ext != "pgm":
            raise DatasetError(f"{path.name}: masks must be .pgm files")
        slot = found.setdefault(sid, {})
        if kind in slot:
            raise DatasetError(f"duplicate {kind} files for id {sid:04d}")
        slot[kind] = path
    return found


def dataset_manifest(directory: PathLike) -> List[ManifestEntry]:
    """Sorted index of a dataset directory.

    Raises:
        DatasetError: listing the ids whose image or mask is missing.
    """
    found = _scan(Path(directory), ("img", "gt", "amb", "dep"))
    broken = sorted(sid for sid, files in found.items() if "img" not in files or "gt" not in files)
    if broken:
        details = ", ".join(
            f"{sid:04d} (missing {' and '.join(k for k in ('img', 'gt') if k not in found[sid])})"
            for sid in broken
        )
        raise DatasetError(f"unpaired samples in {directory}: {details}")
    return [
        ManifestEntry(sid, f["img"], f["gt"], f.get("amb"), f.get("dep"))
        for sid, f in sorted(found.items())
    ]


def write_dataset(samples: Sequence[ImageSample], directory: PathLike) -> List[ManifestEntry]:
    """Write samples with the naming convention; the depth channel goes to ``dep_``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for sample in samples:
        sid = f"{sample.sample_id:04d}"
        channels = sample.image.shape[0]
        has_depth = channels in (2, 4)
        colour = sample.image[: channels - 1] if has_depth else sample.image
        entry = ManifestEntry(sample.sample_id)
        entry.image = write_pnm(directory / f"img_{sid}.{'ppm' if colour.shape[0] == 3 else 'pgm'}", colour)
        entry.mask = write_pnm(directory / f"gt_{sid}.pgm", sample.mask)
        if sample.ambiguity is not None:
            entry.ambiguity = write_pnm(directory / f"amb_{sid}.pgm", sample.ambiguity)
        if has_depth:
            entry.depth = write_pnm(directory / f"dep_{sid}.pgm", sample.image[-1:])
        entries.append(entry)
    logger.info("Wrote %d samples to %s", len(entries), directory)
    return entries


def load_dataset(directory: PathLike) -> List[ImageSample]:
    """Read every sample listed by :func:`dataset_manifest`."""
    samples = []
    for entry in dataset_manifest(directory):
        assert entry.image is not None and entry.mask is not None
        image = read_pnm(entry.image).data
        if entry.depth is not None:
            image = np.concatenate([image, read_pnm(entry.depth).data[:1]], axis=0)
        ambiguity = read_pnm(entry.ambiguity).data[:1] if entry.ambiguity is not None else None
        samples.append(ImageSample(entry.sample_id, image, read_pnm(entry.mask).data[:1], ambiguity))
    return samples


def prediction_files(directory: PathLike) -> Dict[int, Dict[str, Path]]:
    """``pred_`` / ``unc_`` maps written by the predict command, keyed by id."""
    return _scan(Path(directory), ("pred", "unc"))
