"""
Independent reference computations.

Nothing here imports the model code: finite differences, the closed-form
linear-Gaussian posterior, the stationary variance of a discretised Langevin
chain on a quadratic energy, and a brute-force grid posterior used to
cross-check the closed form.
"""

from typing import Callable, NamedTuple, Tuple

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .errors import ConfigurationError, NumericalError

FD_STEP = 1e-5
FD_RTOL = 1e-4
FD_ATOL = 1e-8


def finite_diff_gradient(f: Callable[[np.ndarray], float], point: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences ``(f(x + h e_i) - f(x - h e_i)) / (2h)`` for every coordinate.

    Raises:
        NumericalError: if ``f`` returns a non-finite value.
    """
    x = np.array(point, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        up = float(f(x))
        flat[i] = saved - h
        down = float(f(x))
        flat[i] = saved
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericalError(f"non-finite function value near coordinate {i}")
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(x.shape)


def gradients_agree(
    analytic: np.ndarray, numeric: np.ndarray, rtol: float = FD_RTOL, atol: float = FD_ATOL
) -> Tuple[bool, float]:
    """Entrywise agreement and the worst relative error among entries above ``atol``.

    An entry passes when ``|a - n| <= atol`` or ``|a - n| <= rtol * max(|a|, |n|)``.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    diff = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    ok = (diff <= atol) | (diff <= rtol * scale)
    rel = np.where(diff > atol, diff / np.maximum(scale, np.finfo(float).tiny), 0.0)
    return bool(np.all(ok)), float(rel.max(initial=0.0))


class GaussianPosterior(NamedTuple):
    mean: np.ndarray
    covariance: np.ndarray


def linear_gaussian_posterior(
    weight: np.ndarray, bias: np.ndarray, y: np.ndarray, sigma_z: float = 1.0, sigma_eps: float = 1.0
) -> GaussianPosterior:
    """Posterior of ``z ~ N(0, sigma_z^2 I)``, ``y = W z + b + N(0, sigma_eps^2 I)``.

    ``Sigma = (I / sigma_z^2 + W^T W / sigma_eps^2)^-1`` and
    ``mean = Sigma W^T (y - b) / sigma_eps^2``.
    """
    if not (sigma_z > 0 and sigma_eps > 0):
        raise ConfigurationError("sigma_z and sigma_eps must be positive")
    w = np.atleast_2d(np.asarray(weight, dtype=np.float64))
    d = w.shape[1]
    precision = np.eye(d) / sigma_z**2 + w.T @ w / sigma_eps**2
    covariance = linalg.solve(precision, np.eye(d), assume_a="pos")
    covariance = 0.5 * (covariance + covariance.T)
    rhs = w.T @ (np.asarray(y, dtype=np.float64) - np.asarray(bias, dtype=np.float64)) / sigma_eps**2
    return GaussianPosterior(covariance @ rhs, covariance)


def grid_posterior(
    weight: np.ndarray,
    bias: np.ndarray,
    y: np.ndarray,
    sigma_z: float = 1.0,
    sigma_eps: float = 1.0,
    half_width: float = 6.0,
    points: int = 401,
) -> GaussianPosterior:
    """Brute-force posterior moments of a 2-d latent on a dense grid."""
    w = np.atleast_2d(np.asarray(weight, dtype=np.float64))
    if w.shape[1] != 2:
        raise ConfigurationError(f"grid posterior handles 2-d latents only, got {w.shape[1]}")
    axis = np.linspace(-half_width * sigma_z, half_width * sigma_z, points)
    z1, z2 = np.meshgrid(axis, axis, indexing="ij")
    z = np.stack([z1.ravel(), z2.ravel()], axis=1)
    residual = np.asarray(y, dtype=np.float64) - (z @ w.T + np.asarray(bias, dtype=np.float64))
    log_w = -0.5 * np.sum(z * z, axis=1) / sigma_z**2 - 0.5 * np.sum(residual**2, axis=1) / sigma_eps**2
    weights = np.exp(log_w - logsumexp(log_w))
    mean = weights @ z
    centred = z - mean
    return GaussianPosterior(mean, (centred * weights[:, None]).T @ centred)


def discrete_langevin_variance(sigma_z: float, step_size: float) -> float:
    """Stationary variance of ``z' = (1 - delta / sigma^2) z + sqrt(2 delta) e``.

    Equals ``sigma^2 / (1 - delta / (2 sigma^2))``.

    Raises:
        ConfigurationError: unless ``0 < delta < 2 sigma^2``.
    """
    var = float(sigma_z) ** 2
    if not 0.0 < step_size < 2.0 * var:
        raise ConfigurationError(f"step size must lie in (0, {2.0 * var}), got {step_size}")
    return var / (1.0 - step_size / (2.0 * var))


def monte_carlo_kl(
    mu_q: np.ndarray,
    sigma_q: np.ndarray,
    mu_p: np.ndarray,
    sigma_p: np.ndarray,
    rng: np.random.Generator,
    samples: int = 1_000_000,
) -> Tuple[float, float]:
    """Sample estimate of ``KL(q || p)`` for diagonal Gaussians and its standard error."""
    mu_q, sigma_q = np.asarray(mu_q, dtype=np.float64), np.asarray(sigma_q, dtype=np.float64)
    mu_p, sigma_p = np.asarray(mu_p, dtype=np.float64), np.asarray(sigma_p, dtype=np.float64)
    z = mu_q + sigma_q * rng.standard_normal((samples, mu_q.size))
    log_q = -np.log(sigma_q) - 0.5 * ((z - mu_q) / sigma_q) ** 2
    log_p = -np.log(sigma_p) - 0.5 * ((z - mu_p) / sigma_p) ** 2
    ratio = np.sum(log_q - log_p, axis=1)
    return float(ratio.mean()), float(ratio.std(ddof=1) / np.sqrt(samples))
