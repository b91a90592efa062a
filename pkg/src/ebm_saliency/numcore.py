"""
Dense numeric core.

Layer specifications, parameter storage, forward evaluation with an optional
tape, exact reverse-mode gradients over the fixed layer set the saliency
networks need, and the Adam updater.

Tensors are plain float64 ``numpy.ndarray`` objects. Spatial tensors use the
channels-first layout ``(batch, channels, height, width)``; vectors are
``(batch, features)``.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, ndtr

from .errors import ConfigurationError, NumericalError

logger = logging.getLogger(__name__)

FC = "fc"
CONV2D = "conv2d"
GELU = "gelu"
LEAKY_RELU = "leaky_relu"
BATCH_NORM = "batch_norm"
SIGMOID = "sigmoid"
UPSAMPLE = "upsample"
CONCAT = "concat"
REPLICATE = "replicate"
GLOBAL_AVG_POOL = "global_avg_pool"

LAYER_KINDS = (
    FC,
    CONV2D,
    GELU,
    LEAKY_RELU,
    BATCH_NORM,
    SIGMOID,
    UPSAMPLE,
    CONCAT,
    REPLICATE,
    GLOBAL_AVG_POOL,
)

TRAIN = "train"
EVAL = "eval"

LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
INIT_STD = 0.01

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a network. Build instances through the classmethods."""

    kind: str
    name: str = ""
    in_features: int = 0
    out_features: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    negative_slope: float = LEAKY_SLOPE
    scale: int = 2
    source: str = ""
    height: int = 0
    width: int = 0

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"unknown layer kind '{self.kind}'")
        if self.kind == CONV2D:
            if self.kernel_size not in (3, 4):
                raise ConfigurationError(
                    f"conv layer '{self.name}': kernel size must be 3 or 4, got {self.kernel_size}"
                )
            if self.stride not in (1, 2):
                raise ConfigurationError(
                    f"conv layer '{self.name}': stride must be 1 or 2, got {self.stride}"
                )
        if self.kind in (FC, CONV2D, BATCH_NORM) and not self.name:
            raise ConfigurationError(f"{self.kind} layers need a name")

    @property
    def has_params(self) -> bool:
        return self.kind in (FC, CONV2D, BATCH_NORM)

    @classmethod
    def fc(cls, name: str, in_features: int, out_features: int) -> "LayerSpec":
        return cls(FC, name, in_features=in_features, out_features=out_features)

    @classmethod
    def conv(
        cls, name: str, in_channels: int, out_channels: int, kernel_size: int = 3, stride: int = 1, padding: int = 1
    ) -> "LayerSpec":
        return cls(
            CONV2D,
            name,
            in_features=in_channels,
            out_features=out_channels,
            kernel_size=kernel_size,
            stride=stride,
            padding=padding,
        )

    @classmethod
    def batch_norm(cls, name: str, channels: int) -> "LayerSpec":
        return cls(BATCH_NORM, name, in_features=channels, out_features=channels)

    @classmethod
    def gelu(cls) -> "LayerSpec":
        return cls(GELU)

    @classmethod
    def leaky_relu(cls, negative_slope: float = LEAKY_SLOPE) -> "LayerSpec":
        return cls(LEAKY_RELU, negative_slope=negative_slope)

    @classmethod
    def sigmoid(cls) -> "LayerSpec":
        return cls(SIGMOID)

    @classmethod
    def upsample(cls, scale: int = 2) -> "LayerSpec":
        return cls(UPSAMPLE, scale=scale)

    @classmethod
    def concat(cls, source: str, channels: int) -> "LayerSpec":
        """Channel-concatenate the running tensor with the side input ``source``."""
        return cls(CONCAT, source=source, in_features=channels)

    @classmethod
    def replicate(cls, height: int, width: int) -> "LayerSpec":
        """Copy a ``(batch, d)`` vector to every position of a ``height x width`` grid."""
        return cls(REPLICATE, height=height, width=width)

    @classmethod
    def global_avg_pool(cls) -> "LayerSpec":
        return cls(GLOBAL_AVG_POOL)


Net = Sequence[LayerSpec]


def _label(layer: LayerSpec, index: int) -> str:
    return f"#{index} {layer.kind}" + (f" '{layer.name}'" if layer.name else "")


def _conv_out(size: int, layer: LayerSpec) -> int:
    return (size + 2 * layer.padding - layer.kernel_size) // layer.stride + 1


def output_shape(
    net: Net, input_shape: Tuple[int, ...], extra_shapes: Optional[Mapping[str, Tuple[int, ...]]] = None
) -> Tuple[int, ...]:
    """Static shape composition of a layer chain.

    Raises:
        ConfigurationError: naming the first layer whose input does not fit.
    """
    shape = tuple(int(s) for s in input_shape)
    extra_shapes = extra_shapes or {}
    for index, layer in enumerate(net):
        shape = _layer_shape(layer, index, shape, extra_shapes)
    return shape


def _layer_shape(
    layer: LayerSpec, index: int, shape: Tuple[int, ...], extra_shapes: Mapping[str, Tuple[int, ...]]
) -> Tuple[int, ...]:
    label = _label(layer, index)
    kind = layer.kind
    if kind == FC:
        if len(shape) != 2 or shape[1] != layer.in_features:
            raise ConfigurationError(f"layer {label} expects (batch, {layer.in_features}), got {shape}")
        return (shape[0], layer.out_features)
    if kind == CONV2D:
        if len(shape) != 4 or shape[1] != layer.in_features:
            raise ConfigurationError(
                f"layer {label} expects (batch, {layer.in_features}, H, W), got {shape}"
            )
        h, w = _conv_out(shape[2], layer), _conv_out(shape[3], layer)
        if h < 1 or w < 1:
            raise ConfigurationError(f"layer {label} produces an empty map from {shape}")
        return (shape[0], layer.out_features, h, w)
    if kind == BATCH_NORM:
        if len(shape) not in (2, 4) or shape[1] != layer.in_features:
            raise ConfigurationError(f"layer {label} expects {layer.in_features} channels, got {shape}")
        return shape
    if kind in (GELU, LEAKY_RELU, SIGMOID):
        return shape
    if kind == UPSAMPLE:
        if len(shape) != 4:
            raise ConfigurationError(f"layer {label} expects a 4-d tensor, got {shape}")
        return (shape[0], shape[1], shape[2] * layer.scale, shape[3] * layer.scale)
    if kind == CONCAT:
        side = extra_shapes.get(layer.source)
        if side is None:
            raise ConfigurationError(f"layer {label} needs side input '{layer.source}'")
        if len(shape) != 4 or len(side) != 4 or side[0] != shape[0] or side[2:] != shape[2:]:
            raise ConfigurationError(f"layer {label} cannot join {shape} with {side}")
        if side[1] != layer.in_features:
            raise ConfigurationError(
                f"layer {label} expects {layer.in_features} side channels, got {side[1]}"
            )
        return (shape[0], shape[1] + side[1], shape[2], shape[3])
    if kind == REPLICATE:
        if len(shape) != 2:
            raise ConfigurationError(f"layer {label} expects (batch, d), got {shape}")
        return (shape[0], shape[1], layer.height, layer.width)
    if kind == GLOBAL_AVG_POOL:
        if len(shape) != 4:
            raise ConfigurationError(f"layer {label} expects a 4-d tensor, got {shape}")
        return (shape[0], shape[1])
    raise ConfigurationError(f"unknown layer kind '{kind}'")  # pragma: no cover


class ParamStore:
    """Named trainable tensors plus batch-norm running-statistic buffers."""

    def __init__(
        self,
        params: Optional[Dict[str, np.ndarray]] = None,
        buffers: Optional[Dict[str, np.ndarray]] = None,
    ):
        self.params: Dict[str, np.ndarray] = dict(params or {})
        self.buffers: Dict[str, np.ndarray] = dict(buffers or {})

    @classmethod
    def initialize(
        cls, nets: Iterable[Net], rng: np.random.Generator, std: float = INIT_STD
    ) -> "ParamStore":
        """Create parameters for every layer of ``nets``.

        Weights and biases are drawn from N(0, std^2); batch-norm layers start as
        the identity affine map with running mean 0 and running variance 1.
        """
        store = cls()
        for net in nets:
            for layer in net:
                store._create(layer, rng, std)
        return store

    def _create(self, layer: LayerSpec, rng: np.random.Generator, std: float) -> None:
        if not layer.has_params:
            return
        w_name, b_name = f"{layer.name}.weight", f"{layer.name}.bias"
        if w_name in self.params:
            raise ConfigurationError(f"duplicate layer name '{layer.name}'")
        if layer.kind == FC:
            self.params[w_name] = rng.normal(0.0, std, (layer.out_features, layer.in_features))
            self.params[b_name] = rng.normal(0.0, std, layer.out_features)
        elif layer.kind == CONV2D:
            k = layer.kernel_size
            self.params[w_name] = rng.normal(0.0, std, (layer.out_features, layer.in_features, k, k))
            self.params[b_name] = rng.normal(0.0, std, layer.out_features)
        else:
            self.params[w_name] = np.ones(layer.in_features)
            self.params[b_name] = np.zeros(layer.in_features)
            self.buffers[f"{layer.name}.running_mean"] = np.zeros(layer.in_features)
            self.buffers[f"{layer.name}.running_var"] = np.ones(layer.in_features)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: object) -> bool:
        return name in self.params

    def names(self) -> List[str]:
        return sorted(self.params)

    def zeros_like(self) -> Dict[str, np.ndarray]:
        """A gradient slot of identical shape for every trainable tensor."""
        return {name: np.zeros_like(value) for name, value in self.params.items()}

    def copy(self) -> "ParamStore":
        return ParamStore(
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def size(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def to_vector(self, names: Optional[Sequence[str]] = None) -> np.ndarray:
        names = list(names) if names is not None else self.names()
        if not names:
            return np.zeros(0)
        return np.concatenate([self.params[n].ravel() for n in names])

    def from_vector(self, vector: np.ndarray, names: Optional[Sequence[str]] = None) -> "ParamStore":
        """Copy of the store with ``names`` (default: all) replaced from a flat vector."""
        names = list(names) if names is not None else self.names()
        out = self.copy()
        offset = 0
        for n in names:
            size = out.params[n].size
            out.params[n] = np.asarray(vector[offset : offset + size], dtype=np.float64).reshape(
                out.params[n].shape
            )
            offset += size
        if offset != len(vector):
            raise ConfigurationError(f"vector of length {len(vector)} does not fit {offset} values")
        return out

    def tensors(self, prefix: str = "") -> Dict[str, np.ndarray]:
        """Parameters and buffers under one flat, prefixed namespace."""
        merged = {f"{prefix}{k}": v for k, v in self.params.items()}
        merged.update({f"{prefix}{k}": v for k, v in self.buffers.items()})
        return merged

    def load_tensors(self, tensors: Mapping[str, np.ndarray], prefix: str = "") -> None:
        """Overwrite every parameter and buffer from ``tensors``; shapes must match."""
        for table in (self.params, self.buffers):
            for name, current in table.items():
                key = f"{prefix}{name}"
                if key not in tensors:
                    raise ConfigurationError(f"missing tensor '{key}'")
                value = np.asarray(tensors[key], dtype=np.float64)
                if value.shape != current.shape:
                    raise ConfigurationError(
                        f"tensor '{key}' has shape {value.shape}, expected {current.shape}"
                    )
                table[name] = value.copy()


@dataclass
class Tape:
    """Intermediate values recorded by a forward pass for the paired backward pass."""

    mode: str
    input_shape: Tuple[int, ...] = ()
    output_shape: Tuple[int, ...] = ()
    caches: List[Any] = field(default_factory=list)
    batch_stats: Dict[str, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


class Gradients(NamedTuple):
    """Result of a backward pass: parameter, input and side-input gradients."""

    params: Dict[str, np.ndarray]
    input: np.ndarray
    extras: Dict[str, np.ndarray]


def _check_mode(mode: str) -> None:
    if mode not in (TRAIN, EVAL):
        raise ConfigurationError(f"mode must be '{TRAIN}' or '{EVAL}', got '{mode}'")


def forward(
    net: Net,
    params: ParamStore,
    x: np.ndarray,
    mode: str = EVAL,
    extras: Optional[Mapping[str, np.ndarray]] = None,
    tape: Optional[Tape] = None,
) -> np.ndarray:
    """Evaluate a layer chain.

    Args:
        net: Layer chain.
        params: Parameters for every named layer in ``net``.
        x: Input tensor.
        mode: ``"train"`` uses per-batch batch-norm statistics, ``"eval"`` the running ones.
        extras: Side inputs consumed by ``concat`` layers.
        tape: When given, records what :func:`backward` needs.

    Returns:
        Output tensor.
    """
    _check_mode(mode)
    extras = extras or {}
    out = np.asarray(x, dtype=np.float64)
    shape = output_shape(net, out.shape, {k: np.shape(v) for k, v in extras.items()})
    if tape is not None:
        if tape.mode != mode:
            raise ConfigurationError(f"tape recorded in '{tape.mode}' mode, forward runs in '{mode}'")
        tape.input_shape = out.shape
        tape.output_shape = shape
        tape.caches = []
    for index, layer in enumerate(net):
        out, cache = _FORWARD[layer.kind](layer, index, params, out, mode, extras, tape)
        if tape is not None:
            tape.caches.append(cache)
    return out


def backward(
    net: Net,
    params: ParamStore,
    tape: Tape,
    upstream: np.ndarray,
    mode: Optional[str] = None,
    wrt_params: bool = True,
) -> Gradients:
    """Reverse-mode gradients of ``<upstream, output>`` for a recorded forward pass.

    Raises:
        ConfigurationError: shape mismatch or a mode different from the tape's.
        NumericalError: non-finite upstream gradient.
    """
    if mode is not None and mode != tape.mode:
        raise ConfigurationError(f"backward in '{mode}' mode for a '{tape.mode}' forward pass")
    if len(tape.caches) != len(net):
        raise ConfigurationError("tape does not belong to this network")
    grad = np.asarray(upstream, dtype=np.float64)
    if grad.shape != tape.output_shape:
        raise ConfigurationError(f"upstream shape {grad.shape} != output shape {tape.output_shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite upstream gradient")
    param_grads: Dict[str, np.ndarray] = {}
    extra_grads: Dict[str, np.ndarray] = {}
    for index in range(len(net) - 1, -1, -1):
        layer = net[index]
        grad = _BACKWARD[layer.kind](
            layer, params, tape.caches[index], grad, tape.mode, param_grads, extra_grads, wrt_params
        )
    return Gradients(param_grads, grad, extra_grads)


def value_and_grad(
    net: Net,
    params: ParamStore,
    x: np.ndarray,
    upstream: np.ndarray,
    mode: str = EVAL,
    extras: Optional[Mapping[str, np.ndarray]] = None,
    wrt_params: bool = True,
) -> Tuple[np.ndarray, Gradients]:
    """Forward pass followed by the paired backward pass."""
    tape = Tape(mode)
    out = forward(net, params, x, mode, extras, tape)
    return out, backward(net, params, tape, upstream, mode, wrt_params)


def commit_batch_stats(params: ParamStore, tape: Tape, momentum: float = BN_MOMENTUM) -> None:
    """Fold the batch statistics of a train-mode pass into the running buffers."""
    for name, (mean, var) in tape.batch_stats.items():
        rm, rv = f"{name}.running_mean", f"{name}.running_var"
        params.buffers[rm] = (1.0 - momentum) * params.buffers[rm] + momentum * mean
        params.buffers[rv] = (1.0 - momentum) * params.buffers[rv] + momentum * var


def add_grads(total: Dict[str, np.ndarray], extra: Mapping[str, np.ndarray], scale: float = 1.0) -> None:
    """In-place ``total += scale * extra`` over matching names."""
    for name, value in extra.items():
        if name in total:
            total[name] = total[name] + scale * value
        else:
            total[name] = scale * value


def scale_grads(grads: Mapping[str, np.ndarray], scale: float) -> Dict[str, np.ndarray]:
    return {name: scale * value for name, value in grads.items()}


def grad_norm(grads: Mapping[str, np.ndarray]) -> float:
    """Global L2 norm over a gradient set."""
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


# forward kernels ---------------------------------------------------------------------------------

ForwardFn = Callable[..., Tuple[np.ndarray, Any]]


def _fc_forward(layer, index, params, x, mode, extras, tape):
    w = params[f"{layer.name}.weight"]
    b = params[f"{layer.name}.bias"]
    return x @ w.T + b, x


def _im2col(xp: np.ndarray, k: int, stride: int, h_out: int, w_out: int) -> np.ndarray:
    batch, channels = xp.shape[:2]
    cols = np.empty((batch, channels, k, k, h_out, w_out))
    h_end, w_end = stride * (h_out - 1) + 1, stride * (w_out - 1) + 1
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + h_end : stride, j : j + w_end : stride]
    return cols


def _conv_forward(layer, index, params, x, mode, extras, tape):
    w = params[f"{layer.name}.weight"]
    b = params[f"{layer.name}.bias"]
    p, k, s = layer.padding, layer.kernel_size, layer.stride
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    h_out, w_out = _conv_out(x.shape[2], layer), _conv_out(x.shape[3], layer)
    cols = _im2col(xp, k, s, h_out, w_out)
    out = np.tensordot(cols, w, axes=([1, 2, 3], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out) + b[None, :, None, None]
    return out, (x.shape, xp.shape, cols)


def _gelu_forward(layer, index, params, x, mode, extras, tape):
    return x * ndtr(x), x


def _leaky_forward(layer, index, params, x, mode, extras, tape):
    return np.where(x > 0, x, layer.negative_slope * x), x


def _sigmoid_forward(layer, index, params, x, mode, extras, tape):
    y = expit(x)
    return y, y


def _bn_axes(x: np.ndarray) -> Tuple[int, ...]:
    return (0, 2, 3) if x.ndim == 4 else (0,)


def _bn_view(v: np.ndarray, ndim: int) -> np.ndarray:
    return v[None, :, None, None] if ndim == 4 else v[None, :]


def _bn_forward(layer, index, params, x, mode, extras, tape):
    gamma = _bn_view(params[f"{layer.name}.weight"], x.ndim)
    beta = _bn_view(params[f"{layer.name}.bias"], x.ndim)
    axes = _bn_axes(x)
    if mode == TRAIN:
        if x.shape[0] < 2:
            raise ConfigurationError(
                f"batch-norm layer '{layer.name}' needs a batch of at least 2 in train mode"
            )
        count = x.size // x.shape[1]
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        if tape is not None:
            tape.batch_stats[layer.name] = (mean, var * count / (count - 1))
    else:
        mean = params.buffers[f"{layer.name}.running_mean"]
        var = params.buffers[f"{layer.name}.running_var"]
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - _bn_view(mean, x.ndim)) * _bn_view(inv, x.ndim)
    return gamma * xhat + beta, (xhat, inv, axes)


def _upsample_forward(layer, index, params, x, mode, extras, tape):
    s = layer.scale
    return x.repeat(s, axis=2).repeat(s, axis=3), x.shape


def _concat_forward(layer, index, params, x, mode, extras, tape):
    side = np.asarray(extras[layer.source], dtype=np.float64)
    return np.concatenate([x, side], axis=1), x.shape[1]


def _replicate_forward(layer, index, params, x, mode, extras, tape):
    out = np.broadcast_to(x[:, :, None, None], x.shape + (layer.height, layer.width))
    return np.array(out), None


def _gap_forward(layer, index, params, x, mode, extras, tape):
    return x.mean(axis=(2, 3)), x.shape


_FORWARD: Dict[str, ForwardFn] = {
    FC: _fc_forward,
    CONV2D: _conv_forward,
    GELU: _gelu_forward,
    LEAKY_RELU: _leaky_forward,
    SIGMOID: _sigmoid_forward,
    BATCH_NORM: _bn_forward,
    UPSAMPLE: _upsample_forward,
    CONCAT: _concat_forward,
    REPLICATE: _replicate_forward,
    GLOBAL_AVG_POOL: _gap_forward,
}


# backward kernels --------------------------------------------------------------------------------


def _fc_backward(layer, params, cache, grad, mode, pgrads, egrads, wrt_params):
    x = cache
    w = params[f"{layer.name}.weight"]
    if wrt_params:
        pgrads[f"{layer.name}.weight"] = grad.T @ x
        pgrads[f"{layer.name}.bias"] = grad.sum(axis=0)
    return grad @ w


def _conv_backward(layer, params, cache, grad, mode, pgrads, egrads, wrt_params):
    x_shape, xp_shape, cols = cache
    w = params[f"{layer.name}.weight"]
    p, k, s = layer.padding, layer.kernel_size, layer.stride
    if wrt_params:
        pgrads[f"{layer.name}.weight"] = np.tensordot(grad, cols, axes=([0, 2, 3], [0, 4, 5]))
        pgrads[f"{layer.name}.bias"] = grad.sum(axis=(0, 2, 3))
    h_out, w_out = grad.shape[2], grad.shape[3]
    h_end, w_end = s * (h_out - 1) + 1, s * (w_out - 1) + 1
    dcols = np.tensordot(w, grad, axes=([0], [1]))  # (C, k, k, B, Ho, Wo)
    dxp = np.zeros(xp_shape)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + h_end : s, j : j + w_end : s] += dcols[:, i, j].transpose(1, 0, 2, 3)
    if p:
        dxp = dxp[:, :, p : p + x_shape[2], p : p + x_shape[3]]
    return np.ascontiguousarray(dxp)


def _gelu_backward(layer, params, cache, grad, mode, pgrads, egrads, wrt_params):
    x = cache
    return grad * (ndtr(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x))


def _leaky_backward(layer, params, cache, grad, mode, pgrads, egrads, wrt_params):
    x = cache
    return grad * np.where(x > 0, 1.0, layer.negative_slope)


def _sigmoid_backward(layer, params, cache, grad, mode, pgrads, egrads, wrt_params):
    y = cache
    return grad * y * (1.0 - y)


def _bn_backward(layer, params, cache, grad, mode, pgrads, egrads, wrt_params):
    xhat, inv, axes = cache
    ndim = grad.ndim
    gamma = params[f"{layer.name}.weight"]
    if wrt_params:
        pgrads[f"{layer.name}.weight"] = np.sum(grad * xhat, axis=axes)
        pgrads[f"{layer.name}.bias"] = np.sum(grad, axis=axes)
    dxhat = grad * _bn_view(gamma, ndim)
    if mode == EVAL:
        return dxhat * _bn_view(inv, ndim)
    count = grad.size // grad.shape[1]
    sum_d = _bn_view(np.sum(dxhat, axis=axes), ndim)
    sum_dx = _bn_view(np.sum(dxhat * xhat, axis=axes), ndim)
    return _bn_view(inv, ndim) / count * (count * dxhat - sum_d - xhat * sum_dx)


def _upsample_backward(layer, params, cache, grad, mode, pgrads, egrads, wrt_params):
    b, c, h, w = cache
    s = layer.scale
    return grad.reshape(b, c, h, s, w, s).sum(axis=(3, 5))


def _concat_backward(layer, params, cache, grad, mode, pgrads, egrads, wrt_params):
    channels = cache
    side = grad[:, channels:]
    if layer.source in egrads:
        egrads[layer.source] = egrads[layer.source] + side
    else:
        egrads[layer.source] = np.ascontiguousarray(side)
    return np.ascontiguousarray(grad[:, :channels])


def _replicate_backward(layer, params, cache, grad, mode, pgrads, egrads, wrt_params):
    return grad.sum(axis=(2, 3))


def _gap_backward(layer, params, cache, grad, mode, pgrads, egrads, wrt_params):
    b, c, h, w = cache
    return np.broadcast_to(grad[:, :, None, None] / (h * w), (b, c, h, w)).copy()


_BACKWARD: Dict[str, Callable[..., np.ndarray]] = {
    FC: _fc_backward,
    CONV2D: _conv_backward,
    GELU: _gelu_backward,
    LEAKY_RELU: _leaky_backward,
    SIGMOID: _sigmoid_backward,
    BATCH_NORM: _bn_backward,
    UPSAMPLE: _upsample_backward,
    CONCAT: _concat_backward,
    REPLICATE: _replicate_backward,
    GLOBAL_AVG_POOL: _gap_backward,
}


# Adam --------------------------------------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter moments and update counts; ``step`` counts calls."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)


def adam_step(
    params: ParamStore, grads: Mapping[str, np.ndarray], state: AdamState, lr: float
) -> Tuple[ParamStore, AdamState]:
    """Bias-corrected Adam update, minimising along ``grads``.

    Parameters without an entry in ``grads`` are left untouched. Validation
    happens before anything is mutated.

    Raises:
        ConfigurationError: non-positive ``lr``, unknown name or shape mismatch.
        NumericalError: non-finite gradient.
    """
    if not lr > 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    for name, g in grads.items():
        if name not in params.params:
            raise ConfigurationError(f"gradient for unknown parameter '{name}'")
        if np.shape(g) != params.params[name].shape:
            raise ConfigurationError(
                f"gradient '{name}' has shape {np.shape(g)}, parameter has {params.params[name].shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for '{name}'")
    state.step += 1
    for name in sorted(grads):
        t = state.counts.get(name, 0) + 1
        state.counts[name] = t
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - state.beta1) * g if m is None else state.beta1 * m + (1.0 - state.beta1) * g
        v = (1.0 - state.beta2) * g * g if v is None else state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        params.params[name] = params.params[name] - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state
