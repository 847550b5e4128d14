"""
Analytic data distributions with exact scores, denoisers and posteriors.

Both distribution types are mixtures with diagonal covariances. Point masses
are components with zero variance. All closed forms are evaluated in scaled
space z = x / s(t) = x0 + sigma(t) * nu, where each component k is
N(mu_k, c_k^2 + sigma^2) per dimension; x-space quantities follow from

    score_x = score_z / s,    Hessian_x = Hessian_z / s^2.

Responsibilities are computed in the log domain with max subtraction, since
at sigma = 0.002 the logits are of order 1e5.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import ConfigError, DomainError
from .process import DiffusionSpec

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2 * np.pi)

# denoiser(z, sigma) -> E[x0 | z], z in scaled space
Denoiser = Callable[[np.ndarray, float], np.ndarray]
# data_sampler(n, rng) -> (n, D) array of clean samples
DataSampler = Callable[[int, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class Posterior:
    """Mixture form of q(x0 | x_t): responsibilities, component means and variances."""

    responsibilities: np.ndarray  # (..., K)
    means: np.ndarray  # (..., K, D)
    variances: np.ndarray  # (..., K, D)

    @property
    def mean(self) -> np.ndarray:
        return np.einsum("...k,...kd->...d", self.responsibilities, self.means)

    @property
    def variance_trace(self) -> np.ndarray:
        spread = self.means - self.mean[..., None, :]
        inner = self.variances.sum(axis=-1) + (spread ** 2).sum(axis=-1)
        return np.einsum("...k,...k->...", self.responsibilities, inner)


class _Mixture:
    """Shared closed forms for diagonal-covariance mixtures."""

    weights: np.ndarray
    means: np.ndarray

    @property
    def component_variances(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    # -- input handling -------------------------------------------------------

    def _flatten(self, x) -> tuple:
        """
        Reshape input to (n, D).

        Returns the flat array, the output shape for per-point scalars and the
        output shape for per-point vectors. In one dimension a trailing axis of
        length other than 1 is treated as a batch axis.
        """
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DomainError("Non-finite input to analytic distribution")
        if x.ndim == 0:
            if self.dim != 1:
                raise DomainError(f"Scalar input for a {self.dim}-dimensional distribution")
            return x.reshape(1, 1), (), ()
        if self.dim == 1 and x.shape[-1] != 1:
            return x.reshape(-1, 1), x.shape, x.shape
        if x.shape[-1] != self.dim:
            raise DomainError(f"Expected trailing dimension {self.dim}, got shape {x.shape}")
        return x.reshape(-1, self.dim), x.shape[:-1], x.shape

    @staticmethod
    def _restore(values: np.ndarray, shape: tuple):
        if shape == ():
            return float(values.ravel()[0])
        return values.reshape(shape)

    def _check_sigma(self, sigma: float) -> float:
        sigma = float(sigma)
        if not np.isfinite(sigma) or sigma < 0:
            raise DomainError(f"Invalid noise level sigma={sigma}")
        if sigma == 0 and np.any(self.component_variances == 0):
            raise DomainError("Point masses have no density at sigma = 0; use t >= t_min")
        return sigma

    # -- scaled-space closed forms -------------------------------------------

    def _total_variances(self, sigma: float) -> np.ndarray:
        return self.component_variances + sigma ** 2  # (K, D)

    def _component_logpdf(self, z: np.ndarray, sigma: float) -> np.ndarray:
        """log w_k + log N(z; mu_k, diag(c_k^2 + sigma^2)), shape (n, K)."""
        var = self._total_variances(sigma)
        resid = z[:, None, :] - self.means[None, :, :]
        quad = (resid ** 2 / var[None]).sum(axis=-1)
        log_norm = -0.5 * (self.dim * LOG_2PI + np.log(var).sum(axis=-1))
        return np.log(self.weights)[None, :] + log_norm[None, :] - 0.5 * quad

    def responsibilities_scaled(self, z: np.ndarray, sigma: float) -> np.ndarray:
        sigma = self._check_sigma(sigma)
        return softmax(self._component_logpdf(z, sigma), axis=1)

    def posterior_scaled(self, z: np.ndarray, sigma: float) -> Posterior:
        sigma = self._check_sigma(sigma)
        resp = self.responsibilities_scaled(z, sigma)
        var = self._total_variances(sigma)
        shrink = self.component_variances / var  # c^2 / (c^2 + sigma^2)
        means = self.means[None] + shrink[None] * (z[:, None, :] - self.means[None])
        post_var = np.broadcast_to(self.component_variances * sigma ** 2 / var, means.shape)
        return Posterior(resp, means, np.array(post_var))

    def score_scaled(self, z: np.ndarray, sigma: float) -> np.ndarray:
        """grad_z log p(z) with z ~ p0 * N(0, sigma^2)."""
        resp = self.responsibilities_scaled(z, sigma)
        grads = -(z[:, None, :] - self.means[None]) / self._total_variances(sigma)[None]
        return np.einsum("nk,nkd->nd", resp, grads)

    def denoise_scaled(self, z: np.ndarray, sigma: float) -> np.ndarray:
        return self.posterior_scaled(z, sigma).mean

    def hessian_trace_scaled(self, z: np.ndarray, sigma: float) -> np.ndarray:
        """tr of the Hessian of log p(z), analytic for diagonal mixtures."""
        resp = self.responsibilities_scaled(z, sigma)
        var = self._total_variances(sigma)
        grads = -(z[:, None, :] - self.means[None]) / var[None]
        score = np.einsum("nk,nkd->nd", resp, grads)
        per_component = -(1.0 / var).sum(axis=-1)[None, :] + (grads ** 2).sum(axis=-1)
        return np.einsum("nk,nk->n", resp, per_component) - (score ** 2).sum(axis=-1)

    def variance_trace_scaled(self, z: np.ndarray, sigma: float) -> np.ndarray:
        """tr Var[x0 | z] by the law of total variance over components."""
        return self.posterior_scaled(z, sigma).variance_trace

    def variance_trace_hessian_scaled(self, z: np.ndarray, sigma: float) -> np.ndarray:
        """tr Var[x0 | z] = sigma^2 (D + sigma^2 tr H[log p(z)]) (second-order Tweedie)."""
        return sigma ** 2 * (self.dim + sigma ** 2 * self.hessian_trace_scaled(z, sigma))

    def logpdf_scaled(self, z: np.ndarray, sigma: float) -> np.ndarray:
        sigma = float(sigma)
        if sigma == 0 and np.any(self.component_variances == 0):
            # Off-support points of a discrete distribution have no density.
            on_support = np.any(np.all(z[:, None, :] == self.means[None], axis=-1), axis=1)
            return np.where(on_support, np.inf, -np.inf)
        return logsumexp(self._component_logpdf(z, self._check_sigma(sigma)), axis=1)

    # -- sampling -------------------------------------------------------------

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ValueError(f"Sample count must be at least 1, got {n}")
        components = rng.choice(self.n_components, size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim))
        return self.means[components] + np.sqrt(self.component_variances[components]) * noise

    def sampler(self) -> DataSampler:
        return lambda n, rng: self.sample(n, rng)

    def denoiser(self) -> Denoiser:
        """The exact posterior-mean denoiser D(z, sigma) in scaled space."""
        def denoise(z, sigma):
            z = np.asarray(z, dtype=float)
            flat = z.reshape(-1, self.dim)
            return self.denoise_scaled(flat, sigma).reshape(z.shape)
        return denoise

    def score(self) -> Callable[[np.ndarray, float], np.ndarray]:
        """The exact score in scaled space, keyed by sigma."""
        def score(z, sigma):
            z = np.asarray(z, dtype=float)
            return self.score_scaled(z.reshape(-1, self.dim), sigma).reshape(z.shape)
        return score

    def describe(self) -> Dict:
        raise NotImplementedError


def _normalized_weights(weights: Sequence[float], n: int) -> np.ndarray:
    weights = np.asarray(weights, dtype=float).ravel()
    if weights.shape != (n,):
        raise DomainError(f"Expected {n} weights, got {weights.shape[0]}")
    if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
        raise DomainError("Mixture weights must be positive and finite")
    return weights / weights.sum()


@dataclass(frozen=True, eq=False)
class GaussianMixture(_Mixture):
    """Mixture of K diagonal Gaussians N(mu_k, diag(c_k^2))."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        # A flat list of means describes K components in one dimension.
        means = np.asarray(self.means, dtype=float)
        means = means.reshape(-1, 1) if means.ndim < 2 else means
        variances = np.asarray(self.variances, dtype=float)
        variances = variances.reshape(-1, 1) if variances.ndim == 1 else variances
        try:
            variances = np.broadcast_to(variances, means.shape).copy()
        except ValueError as e:
            raise DomainError(f"Variances do not match means of shape {means.shape}") from e
        if means.shape[1] < 1:
            raise DomainError("Dimension must be at least 1")
        if np.any(variances <= 0) or not np.all(np.isfinite(variances)):
            raise DomainError("Gaussian mixture variances must be positive; use PointMixture for point masses")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "weights", _normalized_weights(self.weights, means.shape[0]))

    @property
    def component_variances(self) -> np.ndarray:
        return self.variances

    @classmethod
    def isotropic(cls, c: float, dim: int = 1, mean: float = 0.0) -> "GaussianMixture":
        """Single Gaussian N(mean, c^2 I)."""
        return cls([1.0], np.full((1, dim), mean), np.full((1, dim), c ** 2))

    def describe(self) -> Dict:
        return {
            "type": "gaussian_mixture",
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }


@dataclass(frozen=True, eq=False)
class PointMixture(_Mixture):
    """Discrete distribution on K distinct points a_k with weights w_k."""

    weights: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        points = points.reshape(-1, 1) if points.ndim == 1 else np.atleast_2d(points)
        if points.shape[0] > 1:
            gaps = np.abs(points[:, None, :] - points[None, :, :]).max(axis=-1)
            np.fill_diagonal(gaps, np.inf)
            if np.min(gaps) == 0:
                raise DomainError("Mixture points must be pairwise distinct")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", _normalized_weights(self.weights, points.shape[0]))

    @property
    def means(self) -> np.ndarray:
        return self.points

    @property
    def component_variances(self) -> np.ndarray:
        return np.zeros_like(self.points)

    @property
    def prior_entropy(self) -> float:
        """Shannon entropy -sum w log w of the source."""
        return float(-np.sum(self.weights * np.log(self.weights)))

    def min_gap(self) -> float:
        """Smallest max-norm distance between two points."""
        if self.n_components < 2:
            return np.inf
        gaps = np.abs(self.points[:, None, :] - self.points[None, :, :]).max(axis=-1)
        np.fill_diagonal(gaps, np.inf)
        return float(gaps.min())

    def describe(self) -> Dict:
        return {
            "type": "point_mixture",
            "weights": self.weights.tolist(),
            "means": self.points.tolist(),
        }


Distribution = Union[GaussianMixture, PointMixture]


# -- operations in x-space ----------------------------------------------------

def _scaled_input(dist: Distribution, spec: DiffusionSpec, x, t):
    s = spec.scale(t)
    sigma = spec.sigma(t)
    flat, scalar_shape, vector_shape = dist._flatten(x)
    return flat / s, scalar_shape, vector_shape, s, sigma


def marginal_score(dist: Distribution, spec: DiffusionSpec, x, t):
    """grad_x log p_t(x)."""
    z, _, shape, s, sigma = _scaled_input(dist, spec, x, t)
    return dist._restore(dist.score_scaled(z, sigma) / s, shape)


def posterior(dist: Distribution, spec: DiffusionSpec, x, t) -> Posterior:
    """Mixture posterior q(x0 | x_t) for each input point."""
    z, lead, _, s, sigma = _scaled_input(dist, spec, x, t)
    post = dist.posterior_scaled(z, sigma)
    if lead == ():
        return Posterior(post.responsibilities[0], post.means[0], post.variances[0])
    k, d = dist.n_components, dist.dim
    return Posterior(
        post.responsibilities.reshape(*lead, k),
        post.means.reshape(*lead, k, d),
        post.variances.reshape(*lead, k, d),
    )


def denoise(dist: Distribution, spec: DiffusionSpec, x, t):
    """Posterior mean E[x0 | x_t]."""
    z, _, shape, s, sigma = _scaled_input(dist, spec, x, t)
    return dist._restore(dist.denoise_scaled(z, sigma), shape)


def tweedie_denoise(dist: Distribution, spec: DiffusionSpec, x, t):
    """First-order Tweedie: (x + s^2 sigma^2 grad log p_t(x)) / s."""
    s = spec.scale(t)
    sigma = spec.sigma(t)
    x = np.asarray(x, dtype=float)
    return (x + s ** 2 * sigma ** 2 * np.asarray(marginal_score(dist, spec, x, t))) / s


def posterior_variance_trace(dist: Distribution, spec: DiffusionSpec, x, t):
    """tr Var[x0 | x_t] via the law of total variance."""
    z, shape, _, s, sigma = _scaled_input(dist, spec, x, t)
    return dist._restore(dist.variance_trace_scaled(z, sigma), shape)


def posterior_variance_trace_hessian(dist: Distribution, spec: DiffusionSpec, x, t):
    """tr Var[x0 | x_t] = sigma^2 (D + s^2 sigma^2 tr H_x[log p_t])."""
    z, shape, _, s, sigma = _scaled_input(dist, spec, x, t)
    return dist._restore(dist.variance_trace_hessian_scaled(z, sigma), shape)


def marginal_logpdf(dist: Distribution, spec: DiffusionSpec, x, t):
    """log p_t(x), including the -D log s change of variables."""
    z, shape, _, s, sigma = _scaled_input(dist, spec, x, t)
    return dist._restore(dist.logpdf_scaled(z, sigma) - dist.dim * np.log(s), shape)


def sample_data(dist: Distribution, n: int, rng_seed: Union[int, np.random.Generator]) -> np.ndarray:
    """n i.i.d. draws, shape (n, D); deterministic given the seed."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return dist.sample(n, rng)


# -- construction helpers -----------------------------------------------------

def standardized_points(n_points: int, seed: int, dim: int = 1) -> PointMixture:
    """
    Equal-weight points drawn i.i.d. from N(0, 1) and standardized so the
    discrete distribution has mean 0 and standard deviation 1 per dimension.
    """
    rng = np.random.default_rng(seed)
    points = rng.standard_normal((n_points, dim))
    if n_points > 1:
        points = (points - points.mean(axis=0)) / points.std(axis=0)
    return PointMixture(np.full(n_points, 1.0 / n_points), points)


def standardized_gaussian_mixture(n_components: int, seed: int, relative_std: float = 0.3,
                                  dim: int = 1) -> GaussianMixture:
    """
    Equal-weight Gaussian mixture whose means are i.i.d. N(0, 1) draws; each
    component has standard deviation ``relative_std`` times the spread of the
    means, and the whole mixture is rescaled to mean 0, standard deviation 1.
    """
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((n_components, dim))
    means = means - means.mean(axis=0)
    spread = means.std(axis=0) if n_components > 1 else np.ones(dim)
    variances = np.broadcast_to((relative_std * spread) ** 2, means.shape)
    # Mixture variance = mean of component variances + variance of the means.
    total = variances.mean(axis=0) + (means ** 2).mean(axis=0)
    factor = 1.0 / np.sqrt(total)
    return GaussianMixture(
        np.full(n_components, 1.0 / n_components), means * factor, variances * factor ** 2
    )


def distribution_from_dict(data: Dict) -> Distribution:
    """Build a distribution from its JSON description."""
    kind = data.get("type")
    try:
        if kind == "gaussian_mixture":
            return GaussianMixture(data["weights"], data["means"], data["variances"])
        if kind == "point_mixture":
            return PointMixture(data["weights"], data["means"])
    except KeyError as e:
        raise ConfigError(f"Distribution description is missing field {e}") from e
    raise ConfigError(f"Unknown distribution type: {kind!r}")


def load_distribution(path: Union[str, Path]) -> Distribution:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Distribution file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    return distribution_from_dict(data)


def distribution_spread(dist: Distribution) -> float:
    """Largest max-norm distance between component means (1.0 for a single component)."""
    if dist.n_components < 2:
        return 1.0
    return float(np.abs(dist.means[:, None, :] - dist.means[None, :, :]).max())


def describe(dist: Optional[Distribution]) -> Dict:
    return {} if dist is None else dist.describe()
