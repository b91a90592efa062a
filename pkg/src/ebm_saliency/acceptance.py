"""
The oracle-check suite behind ``ebm-saliency oracle-check``.

Each check compares model code against an independent reference from
:mod:`ebm_saliency.oracles`: finite differences for every layer kind and every
network, the closed-form stationary variance of a quadratic-energy Langevin
chain, the analytic linear-Gaussian posterior and a Monte-Carlo KL estimate.
The default run is sized for seconds; ``full=True`` uses acceptance-sized
settings and takes minutes.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from . import oracles
from .adversarial import Discriminator
from .amortized import GaussianLatentStats, InferenceNet, kl_diag_gaussians, kl_diag_gaussians_grad
from .ebm_prior import EnergyPrior, LangevinConfig, ebm_param_grad, prior_langevin
from .errors import SaliencyError
from .numcore import EVAL, TRAIN, LayerSpec, Net, ParamStore, Tape, backward, forward
from .rng import Purpose, substream
from .saliency_generator import LinearGenerator, SaliencyGenerator, generator_param_grad, posterior_langevin

logger = logging.getLogger(__name__)

# coordinates checked per network in the quick run
QUICK_COORDS = 60
NET_STD = 0.4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


@dataclass(frozen=True)
class SuiteSize:
    """Knobs that separate the quick run from the acceptance-sized one."""

    layer_configs: int
    net_coords: Optional[int]
    prior_chains: int
    prior_steps: int
    posterior_instances: int
    posterior_chains: int
    posterior_steps: int
    kl_pairs: int
    kl_samples: int


QUICK = SuiteSize(2, QUICK_COORDS, 2_000, 1_000, 1, 1_000, 2_000, 5, 1_000_000)
FULL = SuiteSize(20, None, 10_000, 5_000, 5, 5_000, 20_000, 20, 1_000_000)

# Monte-Carlo KL: relative tolerance, target standard error, sample-chunk cap
KL_TOLERANCE = 0.01
KL_STDERR_FRACTION = 0.0025
KL_MAX_CHUNKS = 16


# finite-difference plumbing ----------------------------------------------------------------------


def _checked_indices(size: int, limit: Optional[int], rng: np.random.Generator) -> np.ndarray:
    if limit is None or size <= limit:
        return np.arange(size)
    return np.sort(rng.choice(size, limit, replace=False))


def _check_params(
    store: ParamStore,
    analytic: Mapping[str, np.ndarray],
    objective: Callable[[ParamStore], float],
    rng: np.random.Generator,
    limit: Optional[int] = None,
) -> Tuple[bool, float]:
    """Compare ``analytic`` with central differences of ``objective`` over (a sample of) the parameters."""
    names = store.names()
    vector = store.to_vector(names)
    flat = np.concatenate(
        [np.asarray(analytic.get(n, np.zeros_like(store[n]))).ravel() for n in names]
    )
    idx = _checked_indices(vector.size, limit, rng)

    def f(sub: np.ndarray) -> float:
        full = vector.copy()
        full[idx] = sub
        return objective(store.from_vector(full, names))

    numeric = oracles.finite_diff_gradient(f, vector[idx])
    return oracles.gradients_agree(flat[idx], numeric)


def _check_input(
    analytic: np.ndarray, objective: Callable[[np.ndarray], float], point: np.ndarray
) -> Tuple[bool, float]:
    return oracles.gradients_agree(analytic, oracles.finite_diff_gradient(objective, point))


def _merge(*outcomes: Tuple[bool, float]) -> Tuple[bool, float]:
    return all(ok for ok, _ in outcomes), max(worst for _, worst in outcomes)


# layer cases -------------------------------------------------------------------------------------


def _layer_cases(rng: np.random.Generator) -> List[Tuple[str, Net, Tuple[int, ...], Dict[str, Tuple[int, ...]], str]]:
    """(label, net, input shape, side-input shapes, mode) for one random configuration."""
    batch = int(rng.integers(2, 4))
    c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    side = int(rng.choice([4, 6, 8]))
    image = (batch, c_in, side, side)
    cases = [
        ("fc", [LayerSpec.fc("layer", c_in * 2, c_out)], (batch, c_in * 2), {}, EVAL),
        ("conv k3 s1", [LayerSpec.conv("layer", c_in, c_out, 3, 1, 1)], image, {}, EVAL),
        ("conv k3 s2", [LayerSpec.conv("layer", c_in, c_out, 3, 2, 1)], image, {}, EVAL),
        ("conv k4 s2", [LayerSpec.conv("layer", c_in, c_out, 4, 2, 1)], image, {}, EVAL),
        ("gelu", [LayerSpec.gelu()], image, {}, EVAL),
        ("leaky_relu", [LayerSpec.leaky_relu()], image, {}, EVAL),
        ("sigmoid", [LayerSpec.sigmoid()], image, {}, EVAL),
        ("batch_norm train", [LayerSpec.batch_norm("layer", c_in)], image, {}, TRAIN),
        ("batch_norm eval", [LayerSpec.batch_norm("layer", c_in)], image, {}, EVAL),
        ("upsample", [LayerSpec.upsample(2)], image, {}, EVAL),
        ("concat", [LayerSpec.concat("z", c_out)], image, {"z": (batch, c_out, side, side)}, EVAL),
        ("replicate", [LayerSpec.replicate(side, side)], (batch, c_in), {}, EVAL),
        ("global_avg_pool", [LayerSpec.global_avg_pool()], image, {}, EVAL),
    ]
    return cases


def _random_store(net: Net, rng: np.random.Generator) -> ParamStore:
    store = ParamStore.initialize([net], rng, NET_STD)
    for name in store.buffers:
        if name.endswith("running_var"):
            store.buffers[name] = rng.uniform(0.5, 2.0, store.buffers[name].shape)
        else:
            store.buffers[name] = rng.normal(0.0, 0.5, store.buffers[name].shape)
    for name in store.names():
        if name.endswith(".weight") and store[name].ndim == 1:
            store.params[name] = rng.uniform(0.5, 1.5, store[name].shape)
    return store


def check_layer(
    net: Net,
    input_shape: Tuple[int, ...],
    extra_shapes: Mapping[str, Tuple[int, ...]],
    mode: str,
    rng: np.random.Generator,
) -> Tuple[bool, float]:
    """Parameter, input and side-input gradients of ``sum(R * net(x))`` against finite differences."""
    store = _random_store(net, rng)
    x = rng.normal(size=input_shape)
    extras = {k: rng.normal(size=s) for k, s in extra_shapes.items()}
    tape = Tape(mode)
    out = forward(net, store, x, mode, extras, tape)
    weights = rng.normal(size=out.shape)
    grads = backward(net, store, tape, weights)
    outcomes = [
        _check_input(grads.input, lambda v: float(np.sum(weights * forward(net, store, v, mode, extras))), x)
    ]
    for key, value in extras.items():
        outcomes.append(
            _check_input(
                grads.extras[key],
                lambda v, key=key: float(np.sum(weights * forward(net, store, x, mode, {**extras, key: v}))),
                value,
            )
        )
    if store.names():
        outcomes.append(
            _check_params(store, grads.params, lambda s: float(np.sum(weights * forward(net, s, x, mode, extras))), rng)
        )
    return _merge(*outcomes)


# network cases -----------------------------------------------------------------------------------


def check_energy_net(rng: np.random.Generator, limit: Optional[int]) -> Tuple[bool, float]:
    prior = EnergyPrior(latent_dim=3, hidden=5, seed=int(rng.integers(1 << 30)), init_std=NET_STD)
    z = rng.normal(size=(4, 3))
    z_neg = rng.normal(size=(5, 3))
    analytic = ebm_param_grad(prior, z, z_neg)

    def objective(store: ParamStore) -> float:
        tilt = EnergyPrior(3, 5, params=store).tilt
        return float(np.mean(tilt(z_neg)) - np.mean(tilt(z)))

    _, dz = prior.energy_and_grad(z)
    return _merge(
        _check_params(prior.params, analytic, objective, rng, limit),
        _check_input(dz, lambda v: float(np.sum(prior.energy(v))), z),
    )


def check_generator(rng: np.random.Generator, limit: Optional[int]) -> Tuple[bool, float]:
    widths = (2, 3, 2)
    gen = SaliencyGenerator(1, 2, widths, seed=int(rng.integers(1 << 30)), init_std=NET_STD)
    x = rng.uniform(size=(2, 1, 8, 8))
    z = rng.normal(size=(2, 2))
    y = (rng.uniform(size=(2, 1, 8, 8)) > 0.5).astype(np.float64)
    ascent = generator_param_grad(gen, x, y, z)

    def log_likelihood(store: ParamStore) -> float:
        out = SaliencyGenerator(1, 2, widths, params=store).predict(x, z)
        return -float(np.sum((y - out) ** 2)) / (2.0 * x.shape[0])

    weights = rng.normal(size=(2, 1, 8, 8))
    out, tape = gen.forward_tape(x, z)
    latent = gen.backward(tape, weights).latent
    assert latent is not None
    return _merge(
        _check_params(gen.params, ascent, log_likelihood, rng, limit),
        _check_input(latent, lambda v: float(np.sum(weights * gen.predict(x, v))), z),
    )


def check_discriminator(rng: np.random.Generator, limit: Optional[int]) -> Tuple[bool, float]:
    disc = Discriminator(1, 2, seed=int(rng.integers(1 << 30)), init_std=NET_STD)
    x = rng.uniform(size=(3, 1, 8, 8))
    m = rng.uniform(size=(3, 1, 8, 8))
    logits, tape = disc.forward_tape(x, m)
    weights = rng.normal(size=logits.shape)
    grads = backward(disc.net, disc.params, tape, weights)

    def objective(store: ParamStore) -> float:
        return float(np.sum(weights * Discriminator(1, 2, params=store).forward_tape(x, m)[0]))

    return _merge(
        _check_params(disc.params, grads.params, objective, rng, limit),
        _check_input(grads.input[:, :1], lambda v: float(np.sum(weights * disc.forward_tape(x, v)[0])), m),
    )


def check_inference_net(rng: np.random.Generator, limit: Optional[int]) -> Tuple[bool, float]:
    net = InferenceNet(2, latent_dim=2, base_channels=1, seed=int(rng.integers(1 << 30)), init_std=NET_STD)
    x = rng.uniform(size=(4, 2, 32, 32))
    stats, tape = net.forward_tape(x, TRAIN)
    w_mu, w_ls = rng.normal(size=stats.mu.shape), rng.normal(size=stats.log_sigma.shape)
    grads = net.backward(tape, w_mu, w_ls)

    def objective(store: ParamStore) -> float:
        out = InferenceNet(2, 2, 1, params=store).infer(x, TRAIN)
        return float(np.sum(w_mu * out.mu) + np.sum(w_ls * out.log_sigma))

    return _check_params(net.params, grads, objective, rng, limit)


def check_kl_gradient(rng: np.random.Generator) -> Tuple[bool, float]:
    shape = (3, 4)
    point = np.stack(
        [rng.normal(size=shape), rng.uniform(-0.5, 0.5, shape), rng.normal(size=shape), rng.uniform(-0.5, 0.5, shape)]
    )

    def unpack(p: np.ndarray) -> Tuple[GaussianLatentStats, GaussianLatentStats]:
        return GaussianLatentStats(p[0], p[1]), GaussianLatentStats(p[2], p[3])

    _, dq, dp = kl_diag_gaussians_grad(*unpack(point))
    analytic = np.stack([dq.mu, dq.log_sigma, dp.mu, dp.log_sigma])
    return _check_input(analytic, lambda p: kl_diag_gaussians(*unpack(p)), point)


# sampler cases -----------------------------------------------------------------------------------


def _trailing_states(steps: int, thin: int) -> Tuple[List[np.ndarray], Callable[[int, np.ndarray], None]]:
    kept: List[np.ndarray] = []

    def trace(step: int, z: np.ndarray) -> None:
        if step > steps // 2 and step % thin == 0:
            kept.append(z.copy())

    return kept, trace


def check_prior_sampler(size: SuiteSize, seed: int) -> Tuple[bool, str]:
    """Untilted prior, sigma_z = 1, delta = 0.1: pooled variance against the discrete-chain value."""
    step_size = 0.1
    prior = EnergyPrior(latent_dim=2, tilted=False)
    kept, trace = _trailing_states(size.prior_steps, 10)
    prior_langevin(
        prior, LangevinConfig(size.prior_steps, step_size, seed), n_chains=size.prior_chains, trace=trace
    )
    pooled = np.concatenate(kept)
    target = oracles.discrete_langevin_variance(1.0, step_size)
    variance = pooled.var(axis=0)
    mean = pooled.mean(axis=0)
    rel = np.abs(variance / target - 1.0)
    passed = bool(np.all(rel <= 0.02) and np.all(np.abs(mean) <= 0.02))
    return passed, f"var {np.round(variance, 4).tolist()} vs {target:.4f}, |mean| max {np.abs(mean).max():.4f}"


def check_posterior_sampler(size: SuiteSize, seed: int) -> Tuple[bool, str]:
    """Linear generator, d = 2: pooled posterior moments against the closed form."""
    step_size = 0.01
    worst_mean, worst_cov = 0.0, 0.0
    for instance in range(size.posterior_instances):
        rng = substream(seed, Purpose.ORACLE, 1, instance)
        weight = 0.7 * rng.normal(size=(3, 2))
        bias = rng.normal(size=3)
        y = rng.normal(size=3)
        exact = oracles.linear_gaussian_posterior(weight, bias, y)
        n = size.posterior_chains
        kept, trace = _trailing_states(size.posterior_steps, 20)
        posterior_langevin(
            LinearGenerator(weight, bias),
            EnergyPrior(latent_dim=2, tilted=False),
            np.zeros((n, 1)),
            np.tile(y, (n, 1)),
            LangevinConfig(size.posterior_steps, step_size, seed),
            round_index=instance,
            trace=trace,
        )
        pooled = np.concatenate(kept)
        worst_mean = max(worst_mean, float(np.abs(pooled.mean(axis=0) - exact.mean).max()))
        diag = np.diag(np.cov(pooled, rowvar=False))
        worst_cov = max(worst_cov, float(np.abs(diag / np.diag(exact.covariance) - 1.0).max()))
    passed = worst_mean <= 0.05 and worst_cov <= 0.10
    return passed, f"worst mean error {worst_mean:.4f}, worst variance error {worst_cov:.2%}"


def check_kl_monte_carlo(size: SuiteSize, seed: int) -> Tuple[bool, str]:
    """Closed-form KL against a Monte-Carlo estimate, within 1% on every pair.

    Samples are drawn in chunks of ``size.kl_samples`` until the standard error
    is below ``KL_STDERR_FRACTION`` of the closed form or ``KL_MAX_CHUNKS`` chunks
    have been drawn.
    """
    worst = 0.0
    passed = True
    for pair in range(size.kl_pairs):
        rng = substream(seed, Purpose.ORACLE, 2, pair)
        q = GaussianLatentStats(rng.normal(size=(1, 4)), rng.uniform(-0.7, 0.7, (1, 4)))
        p = GaussianLatentStats(rng.normal(size=(1, 4)), rng.uniform(-0.7, 0.7, (1, 4)))
        closed = kl_diag_gaussians(q, p)
        estimates: List[float] = []
        variances: List[float] = []
        while True:
            est, err = oracles.monte_carlo_kl(q.mu[0], q.sigma[0], p.mu[0], p.sigma[0], rng, size.kl_samples)
            estimates.append(est)
            variances.append(err * err)
            stderr = float(np.sqrt(np.sum(variances))) / len(variances)
            if stderr <= KL_STDERR_FRACTION * closed or len(estimates) >= KL_MAX_CHUNKS:
                break
        error = abs(float(np.mean(estimates)) - closed)
        worst = max(worst, error / closed)
        passed = passed and error <= KL_TOLERANCE * closed
    return passed, f"worst relative error {worst:.3%}"


def check_oracles() -> Tuple[bool, str]:
    """The references themselves: calculus identities, the fixed point, grid against closed form."""
    v = np.array([0.3, -1.2, 2.0])
    ok_square, _ = oracles.gradients_agree(2.0 * v, oracles.finite_diff_gradient(lambda p: float(p @ p), v), 0, 1e-8)
    ok_sine, _ = oracles.gradients_agree(
        np.array([3.0, 0.0]),
        oracles.finite_diff_gradient(lambda p: float(np.sin(p[0]) * p[1]), np.array([0.0, 3.0])),
        0,
        1e-8,
    )
    residual = 0.0
    for delta in (0.01, 0.1, 0.4):
        var = oracles.discrete_langevin_variance(1.0, delta)
        residual = max(residual, abs(var - (var * (1.0 - delta) ** 2 + 2.0 * delta)))
    rng = np.random.default_rng(0)
    weight, bias, y = rng.normal(size=(3, 2)), rng.normal(size=3), rng.normal(size=3)
    exact = oracles.linear_gaussian_posterior(weight, bias, y)
    grid = oracles.grid_posterior(weight, bias, y)
    grid_error = float(np.abs(exact.mean - grid.mean).max())
    passed = ok_square and ok_sine and residual < 1e-12 and grid_error < 0.01
    return passed, f"fixed-point residual {residual:.1e}, grid mean error {grid_error:.1e}"


# suite -------------------------------------------------------------------------------------------


def _timed(name: str, fn: Callable[[], Tuple[bool, str]]) -> CheckResult:
    tic = time.perf_counter()
    try:
        passed, detail = fn()
    except (SaliencyError, AssertionError) as e:
        passed, detail = False, f"error: {e}"
    result = CheckResult(name, passed, detail, time.perf_counter() - tic)
    logger.debug("%s: %s (%s) in %.1fs", name, "PASS" if passed else "FAIL", detail, result.seconds)
    return result


def _gradient_check(outcome: Callable[[], Tuple[bool, float]]) -> Callable[[], Tuple[bool, str]]:
    def run() -> Tuple[bool, str]:
        ok, worst = outcome()
        return ok, f"worst relative error {worst:.1e}"

    return run


def run_oracle_checks(full: bool = False, seed: int = 0) -> List[CheckResult]:
    """Run the whole suite; ``full`` selects acceptance-sized settings."""
    size = FULL if full else QUICK
    results = [_timed("oracle self-check", check_oracles)]

    def layers(kind_index: int) -> Tuple[bool, float]:
        outcomes = []
        for config in range(size.layer_configs):
            rng = substream(seed, Purpose.ORACLE, 0, config)
            _, net, shape, extras, mode = _layer_cases(rng)[kind_index]
            outcomes.append(check_layer(net, shape, extras, mode, rng))
        return _merge(*outcomes)

    labels = [case[0] for case in _layer_cases(np.random.default_rng(0))]
    for index, label in enumerate(labels):
        results.append(_timed(f"gradient: {label}", _gradient_check(lambda i=index: layers(i))))

    networks = {
        "energy MLP": check_energy_net,
        "generator": check_generator,
        "discriminator": check_discriminator,
        "inference net": check_inference_net,
    }
    for label, check in networks.items():
        rng = substream(seed, Purpose.ORACLE, 3, len(results))
        results.append(
            _timed(f"gradient: {label}", _gradient_check(lambda c=check, r=rng: c(r, size.net_coords)))
        )
    rng = substream(seed, Purpose.ORACLE, 4)
    results.append(_timed("gradient: KL", _gradient_check(lambda: check_kl_gradient(rng))))
    results.append(_timed("prior sampler", lambda: check_prior_sampler(size, seed)))
    results.append(_timed("posterior sampler", lambda: check_posterior_sampler(size, seed)))
    results.append(_timed("KL vs Monte Carlo", lambda: check_kl_monte_carlo(size, seed)))
    return results


def format_table(results: List[CheckResult]) -> str:
    width = max(len(r.name) for r in results) if results else 10
    lines = [f"{'check':<{width}}  result  seconds  detail", "-" * (width + 40)]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:7.2f}  {r.detail}")
    return "\n".join(lines)
