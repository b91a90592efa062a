"""
Conditional saliency generator ``T_theta(x, z)``.

A three-level convolutional encoder maps the image to a coarse feature grid,
the latent vector is replicated over that grid and concatenated to it, and an
upsample-conv decoder brings the result back to a one-channel map in (0, 1).

The module also holds posterior Langevin sampling and the generator's
maximum-likelihood gradient.
"""

from typing import Any, Dict, List, NamedTuple, Optional, Protocol, Sequence, Tuple

import numpy as np

from .ebm_prior import EnergyPrior, LangevinConfig, TraceFn, langevin_chain, resolve_chain_ids
from .errors import ConfigurationError, NumericalError
from .numcore import LayerSpec, ParamStore, Tape, backward, forward
from .rng import NoiseSource, NoiseStream, Purpose, component_generator


DEFAULT_WIDTHS = (16, 32, 64)


def encoder_net(in_channels: int, widths: Sequence[int] = DEFAULT_WIDTHS) -> List[LayerSpec]:
    layers: List[LayerSpec] = []
    channels = in_channels
    for i, width in enumerate(widths):
        layers += [LayerSpec.conv(f"enc{i + 1}", channels, width, 3, 2, 1), LayerSpec.leaky_relu()]
        channels = width
    return layers


def decoder_net(widths: Sequence[int] = DEFAULT_WIDTHS, latent_dim: int = 0) -> List[LayerSpec]:
    """Latent injection followed by upsample-conv blocks down to one channel.

    With ``latent_dim == 0`` the injection conv sees only the image features
    (the deterministic baseline).
    """
    top = widths[-1]
    layers: List[LayerSpec] = []
    if latent_dim:
        layers.append(LayerSpec.concat("z", latent_dim))
    layers += [LayerSpec.conv("inject", top + latent_dim, top, 3, 1, 1), LayerSpec.leaky_relu()]
    outs = list(reversed(widths[:-1])) + [1]
    channels = top
    for i, width in enumerate(outs):
        layers += [LayerSpec.upsample(2), LayerSpec.conv(f"dec{i + 1}", channels, width, 3, 1, 1)]
        if i < len(outs) - 1:
            layers.append(LayerSpec.leaky_relu())
        channels = width
    layers.append(LayerSpec.sigmoid())
    return layers


class GeneratorContext(NamedTuple):
    """Image-side state shared by every decoder pass for one batch."""

    x: np.ndarray
    features: Optional[np.ndarray]
    tape: Optional[Tape]


class DecoderPass(NamedTuple):
    latent: Optional[Tape]
    decoder: Tape


class GeneratorTape(NamedTuple):
    context: GeneratorContext
    decoder: DecoderPass


class GeneratorGradients(NamedTuple):
    params: Dict[str, np.ndarray]
    latent: Optional[np.ndarray]


class LatentGenerator(Protocol):
    """What posterior sampling and the parameter gradient need from a generator."""

    params: ParamStore
    latent_dim: int
    sigma_eps: float

    def condition(self, x: np.ndarray, keep_tape: bool = False) -> GeneratorContext:
        ...

    def decode_tape(self, ctx: GeneratorContext, z: Optional[np.ndarray]) -> Tuple[np.ndarray, DecoderPass]:
        ...

    def latent_backward(self, ctx: GeneratorContext, dpass: DecoderPass, upstream: np.ndarray) -> np.ndarray:
        ...

    def forward_tape(self, x: np.ndarray, z: Optional[np.ndarray]) -> Tuple[np.ndarray, GeneratorTape]:
        ...

    def backward(self, tape: GeneratorTape, upstream: np.ndarray) -> GeneratorGradients:
        ...


class SaliencyGenerator:
    """Encoder/decoder generator with spatial latent injection.

    Args:
        in_channels: Image channels (1, 3, or 4 for RGB plus depth).
        latent_dim: Dimension of z; ignored when ``stochastic`` is False.
        widths: Encoder channel widths; the decoder mirrors them.
        sigma_eps: Observation noise standard deviation.
        stochastic: False builds the deterministic baseline without z.
        seed: Initialisation seed.
        init_std: Standard deviation of the initial weights.
        params: Existing parameters to use.
        component: Name of the parameter-initialisation stream.
    """

    def __init__(
        self,
        in_channels: int = 3,
        latent_dim: int = 32,
        widths: Sequence[int] = DEFAULT_WIDTHS,
        sigma_eps: float = 1.0,
        stochastic: bool = True,
        seed: int = 0,
        init_std: float = 0.01,
        params: Optional[ParamStore] = None,
        component: str = "gen",
    ):
        if in_channels < 1:
            raise ConfigurationError(f"in_channels must be positive, got {in_channels}")
        if not sigma_eps > 0:
            raise ConfigurationError(f"sigma_eps must be positive, got {sigma_eps}")
        self.in_channels = in_channels
        self.stochastic = stochastic
        self.latent_dim = latent_dim if stochastic else 0
        self.widths = tuple(widths)
        self.sigma_eps = float(sigma_eps)
        self.downsample = 2 ** len(self.widths)
        self.encoder = encoder_net(in_channels, self.widths)
        self.decoder = decoder_net(self.widths, self.latent_dim)
        self.params = (
            params
            if params is not None
            else ParamStore.initialize(
                [self.encoder, self.decoder], component_generator(seed, component), init_std
            )
        )

    @property
    def injection_latent_weights(self) -> np.ndarray:
        """View of the injection-conv weights that read the z channels."""
        return self.params["inject.weight"][:, self.widths[-1] :]

    def check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ConfigurationError(
                f"generator expects images of shape (batch, {self.in_channels}, H, W), got {x.shape}"
            )
        if x.shape[2] % self.downsample or x.shape[3] % self.downsample:
            raise ConfigurationError(
                f"image size {x.shape[2:]} is not divisible by {self.downsample}"
            )
        return x

    def condition(self, x: np.ndarray, keep_tape: bool = False) -> GeneratorContext:
        """Encode ``x`` once; the result is reused by every decoder pass."""
        x = self.check_input(x)
        tape = Tape("eval") if keep_tape else None
        features = forward(self.encoder, self.params, x, tape=tape)
        return GeneratorContext(x, features, tape)

    def _latent_net(self, features: np.ndarray) -> List[LayerSpec]:
        return [LayerSpec.replicate(features.shape[2], features.shape[3])]

    def decode_tape(self, ctx: GeneratorContext, z: Optional[np.ndarray]) -> Tuple[np.ndarray, DecoderPass]:
        features = ctx.features
        assert features is not None
        extras = {}
        latent_tape = None
        if self.stochastic:
            if z is None:
                raise ConfigurationError("stochastic generator needs a latent batch")
            z = np.asarray(z, dtype=np.float64)
            if z.shape != (features.shape[0], self.latent_dim):
                raise ConfigurationError(
                    f"latent batch must have shape ({features.shape[0]}, {self.latent_dim}), got {z.shape}"
                )
            latent_tape = Tape("eval")
            extras["z"] = forward(self._latent_net(features), self.params, z, tape=latent_tape)
        dec_tape = Tape("eval")
        out = forward(self.decoder, self.params, features, extras=extras, tape=dec_tape)
        return out, DecoderPass(latent_tape, dec_tape)

    def latent_backward(self, ctx: GeneratorContext, dpass: DecoderPass, upstream: np.ndarray) -> np.ndarray:
        """Gradient of ``<upstream, T(x, z)>`` with respect to z."""
        if dpass.latent is None:
            raise ConfigurationError("deterministic generator has no latent input")
        grads = backward(self.decoder, self.params, dpass.decoder, upstream, wrt_params=False)
        features = ctx.features
        assert features is not None
        return backward(self._latent_net(features), self.params, dpass.latent, grads.extras["z"]).input

    def forward_tape(self, x: np.ndarray, z: Optional[np.ndarray]) -> Tuple[np.ndarray, GeneratorTape]:
        ctx = self.condition(x, keep_tape=True)
        out, dpass = self.decode_tape(ctx, z)
        return out, GeneratorTape(ctx, dpass)

    def backward(self, tape: GeneratorTape, upstream: np.ndarray) -> GeneratorGradients:
        """Parameter and latent gradients of ``<upstream, T(x, z)>``."""
        ctx, dpass = tape
        if ctx.tape is None:
            raise ConfigurationError("forward pass was recorded without an encoder tape")
        dec = backward(self.decoder, self.params, dpass.decoder, upstream)
        enc = backward(self.encoder, self.params, ctx.tape, dec.input)
        params = dict(dec.params)
        params.update(enc.params)
        latent = None
        if dpass.latent is not None:
            assert ctx.features is not None
            latent = backward(
                self._latent_net(ctx.features), self.params, dpass.latent, dec.extras["z"]
            ).input
        return GeneratorGradients(params, latent)

    def predict(self, x: np.ndarray, z: Optional[np.ndarray] = None) -> np.ndarray:
        """Saliency map ``(batch, 1, H, W)``, every pixel in (0, 1)."""
        ctx = self.condition(x)
        out, _ = self.decode_tape(ctx, z)
        return out


class LinearGenerator:
    """``T(x, z) = W z + b``; ignores the image apart from its batch size.

    A closed-form stand-in for the saliency generator used to check posterior
    sampling and gradient signs against analytic results.
    """

    def __init__(self, weight: np.ndarray, bias: np.ndarray, sigma_eps: float = 1.0):
        weight = np.atleast_2d(np.asarray(weight, dtype=np.float64))
        bias = np.asarray(bias, dtype=np.float64).reshape(-1)
        if bias.shape[0] != weight.shape[0]:
            raise ConfigurationError(f"bias of length {bias.shape[0]} for {weight.shape[0]} outputs")
        self.latent_dim = weight.shape[1]
        self.sigma_eps = float(sigma_eps)
        self.net = [LayerSpec.fc("fc", weight.shape[1], weight.shape[0])]
        self.params = ParamStore({"fc.weight": weight.copy(), "fc.bias": bias.copy()})

    def condition(self, x: np.ndarray, keep_tape: bool = False) -> GeneratorContext:
        return GeneratorContext(np.asarray(x, dtype=np.float64), None, None)

    def decode_tape(self, ctx: GeneratorContext, z: Optional[np.ndarray]) -> Tuple[np.ndarray, DecoderPass]:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[0] != ctx.x.shape[0]:
            raise ConfigurationError(f"{z.shape[0]} latents for a batch of {ctx.x.shape[0]}")
        tape = Tape("eval")
        return forward(self.net, self.params, z, tape=tape), DecoderPass(None, tape)

    def latent_backward(self, ctx: GeneratorContext, dpass: DecoderPass, upstream: np.ndarray) -> np.ndarray:
        return backward(self.net, self.params, dpass.decoder, upstream, wrt_params=False).input

    def forward_tape(self, x: np.ndarray, z: Optional[np.ndarray]) -> Tuple[np.ndarray, GeneratorTape]:
        ctx = self.condition(x)
        out, dpass = self.decode_tape(ctx, z)
        return out, GeneratorTape(ctx, dpass)

    def backward(self, tape: GeneratorTape, upstream: np.ndarray) -> GeneratorGradients:
        grads = backward(self.net, self.params, tape.decoder.decoder, upstream)
        return GeneratorGradients(grads.params, grads.input)

    def predict(self, x: np.ndarray, z: Optional[np.ndarray] = None) -> np.ndarray:
        return self.decode_tape(self.condition(x), z)[0]


def predict(generator: SaliencyGenerator, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Mean of ``p_theta(y | x, z)``."""
    return generator.predict(x, z)


def deterministic_baseline_predict(baseline: SaliencyGenerator, x: np.ndarray) -> np.ndarray:
    """Point prediction of the latent-free baseline."""
    if baseline.stochastic:
        raise ConfigurationError("deterministic_baseline_predict needs a generator built with stochastic=False")
    return baseline.predict(x)


def _check_batch(x: np.ndarray, y: np.ndarray, z: Optional[np.ndarray] = None) -> None:
    sizes = {"x": np.shape(x)[0], "y": np.shape(y)[0]}
    if z is not None:
        sizes["z"] = np.shape(z)[0]
    if len(set(sizes.values())) != 1:
        raise ConfigurationError(f"batch sizes disagree: {sizes}")


def posterior_langevin(
    generator: LatentGenerator,
    prior: EnergyPrior,
    x: np.ndarray,
    y: np.ndarray,
    cfg: LangevinConfig,
    init: Optional[np.ndarray] = None,
    noise: Optional[NoiseSource] = None,
    chain_ids: Optional[Sequence[int]] = None,
    round_index: int = 0,
    trace: Optional[TraceFn] = None,
) -> np.ndarray:
    """Sample ``p(z | x, y)`` by Langevin dynamics on the joint energy

        E(z) + ||y - T(x, z)||^2 / (2 sigma_eps^2).

    The image encoding is computed once; no parameter gradients are produced.
    Initial latents default to ``N(0, sigma_z^2 I)`` drawn from the
    posterior-init streams.
    """
    y = np.asarray(y, dtype=np.float64)
    _check_batch(x, y, init)
    ids = resolve_chain_ids(chain_ids, np.shape(x)[0], init)
    if init is None:
        init = prior.sample_reference(cfg.seed, round_index, ids, Purpose.POSTERIOR_INIT)
    init = prior.check_latents(init)
    if not np.all(np.isfinite(init)):
        raise NumericalError("non-finite Langevin initialisation", step=0)
    if cfg.steps == 0:
        return init.copy()
    ctx = generator.condition(x)
    inv_var = 1.0 / generator.sigma_eps**2

    def drift(z: np.ndarray) -> np.ndarray:
        out, dpass = generator.decode_tape(ctx, z)
        if out.shape != y.shape:
            raise ConfigurationError(f"target shape {y.shape} != generator output {out.shape}")
        return prior.energy_and_grad(z)[1] + generator.latent_backward(ctx, dpass, (out - y) * inv_var)

    if noise is None:
        noise = NoiseStream(cfg.seed, Purpose.POSTERIOR, round_index, ids, prior.latent_dim, cfg.steps)
    return langevin_chain(drift, init, cfg.steps, cfg.step_size, noise, trace, label="posterior Langevin")


def gaussian_reconstruction(out: np.ndarray, y: np.ndarray, sigma_eps: float) -> Tuple[float, np.ndarray]:
    """Batch mean of ``||y - T||^2 / (2 sigma^2)`` and its gradient with respect to T."""
    batch = out.shape[0]
    residual = out - y
    loss = float(np.sum(residual * residual)) / (2.0 * sigma_eps**2 * batch)
    return loss, residual / (sigma_eps**2 * batch)


def generator_param_grad(
    generator: LatentGenerator, x: np.ndarray, y: np.ndarray, z_pos: Optional[np.ndarray]
) -> Dict[str, np.ndarray]:
    """Ascent direction of ``log p_theta(y | x, z+)`` averaged over the batch.

    Equals ``(1/sigma^2) (y - T) grad_theta T`` per sample; feed the negation to
    a minimising optimiser.
    """
    y = np.asarray(y, dtype=np.float64)
    _check_batch(x, y, z_pos)
    out, tape = generator.forward_tape(x, z_pos)
    if out.shape != y.shape:
        raise ConfigurationError(f"target shape {y.shape} != generator output {out.shape}")
    _, descent = gaussian_reconstruction(out, y, generator.sigma_eps)
    return generator.backward(tape, -descent).params


def describe(generator: Any) -> str:
    """One-line summary for logs."""
    return f"{type(generator).__name__}({generator.params.size()} parameters)"
