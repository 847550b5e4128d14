"""
Score-based diagnostics that cross-check the entropy rate.

- entropy_production_rate: rate of the marginal entropy H[x_t]
- conditional_rate_from_scores: rate of H[x0|x_t] from score norms
- dsm_gap: denoising vs explicit score-matching loss
- information_transfer: H[x0] - H[x0|x_t] for discrete data

All estimators work in scaled space z = x/s, where the conditional score is
-nu/sigma and the marginal score is the analytic mixture score.
"""
import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import entr

from config import settings
from diffusion.analytic import Distribution, PointMixture
from diffusion.errors import DomainError, UnsupportedDistributionError
from diffusion.process import DiffusionSpec
from diffusion.streams import map_indexed, stream

from .tables import exact_squared_error

logger = logging.getLogger(__name__)

# score_fn(x, t) -> grad_x log p_t(x), x-space
ScoreFn = Callable[[np.ndarray, float], np.ndarray]


class MCEstimate(NamedTuple):
    value: float
    stderr: float


def _estimate(samples: np.ndarray) -> MCEstimate:
    n = samples.shape[0]
    stderr = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else np.nan
    return MCEstimate(float(samples.mean()), stderr)


def _noisy_draws(dist: Distribution, sigma: float, M: int, rng: np.random.Generator):
    x0 = dist.sample(M, rng)
    nu = rng.standard_normal(x0.shape)
    return x0, nu, x0 + sigma * nu


def production_terms(dist: Distribution, spec: DiffusionSpec, t: float, M: Optional[int] = None,
                     rng_seed: Optional[int] = None) -> Tuple[float, MCEstimate]:
    """
    The two parts of dH[x_t]/dt: the drift divergence D s'/s (exact) and
    (g^2/2) E||grad log p_t||^2 = sigma' sigma E||score_z||^2 (Monte-Carlo).
    """
    M = settings.mc_samples if M is None else int(M)
    s, sigma = spec.scale(t), spec.sigma(t)
    divergence = dist.dim * spec.scale_dot(t) / s
    _, _, z = _noisy_draws(dist, sigma, M, stream(rng_seed, 0))
    score = dist.score_scaled(z, sigma)
    return float(divergence), _estimate(spec.sigma_dot(t) * sigma * (score ** 2).sum(axis=1))


def entropy_production_rate(dist: Distribution, spec: DiffusionSpec, t: float, M: Optional[int] = None,
                            rng_seed: Optional[int] = None) -> MCEstimate:
    """dH[x_t]/dt = E[div f] + (g^2/2) E||grad log p_t(x_t)||^2."""
    divergence, score_term = production_terms(dist, spec, t, M, rng_seed)
    return MCEstimate(divergence + score_term.value, score_term.stderr)


def conditional_rate_from_scores(dist: Distribution, spec: DiffusionSpec, t: float,
                                 M: Optional[int] = None, rng_seed: Optional[int] = None) -> MCEstimate:
    """
    dH[x0|x_t]/dt = (g^2/2)(E||grad log p(x_t|x0)||^2 - E||grad log p_t(x_t)||^2).

    Per sample this is sigma'/sigma * (||nu||^2 - sigma^2 ||score_z||^2).
    """
    M = settings.mc_samples if M is None else int(M)
    sigma = spec.sigma(t)
    _, nu, z = _noisy_draws(dist, sigma, M, stream(rng_seed, 0))
    score = dist.score_scaled(z, sigma)
    per_sample = spec.sigma_dot(t) / sigma * ((nu ** 2).sum(axis=1) - sigma ** 2 * (score ** 2).sum(axis=1))
    return _estimate(per_sample)


@dataclass(frozen=True)
class DSMGap:
    """Weighted score-matching losses and the gap predicted by the entropy rate."""

    l_dsm: MCEstimate
    l_sm: MCEstimate
    gap: MCEstimate
    per_time_delta2: np.ndarray
    predicted_gap: float


def dsm_gap(score_fn: ScoreFn, dist: Distribution, spec: DiffusionSpec, times: Sequence[float],
            time_weights: Optional[Sequence[float]] = None, M: Optional[int] = None,
            rng_seed: Optional[int] = None, workers: Optional[int] = None) -> DSMGap:
    """
    L_DSM = E_lambda E||s(x_t) - grad log p(x_t|x0)||^2 and
    L_SM = E_lambda E||s(x_t) - grad log p_t(x_t)||^2 for a candidate score.

    Their gap equals E_lambda[(2/g^2) dH/dt] = E_lambda[eps^2 / (s^2 sigma^4)].
    Time weights are normalized to a probability vector; uniform by default.
    """
    M = settings.mc_samples if M is None else int(M)
    times = spec.check_domain(np.asarray(times, dtype=float).ravel())
    weights = np.ones(times.size) if time_weights is None else np.asarray(time_weights, dtype=float).ravel()
    if weights.shape != times.shape or np.any(weights < 0) or weights.sum() <= 0:
        raise DomainError("Time weights must be non-negative, not all zero, one per time")
    weights = weights / weights.sum()

    def per_time(i: int):
        t = float(times[i])
        s, sigma = spec.scale(t), spec.sigma(t)
        _, nu, z = _noisy_draws(dist, sigma, M, stream(rng_seed, i))
        x = s * z
        candidate = np.asarray(score_fn(x, t), dtype=float).reshape(x.shape)
        true_score = dist.score_scaled(z, sigma) / s
        conditional_score = -nu / (s * sigma)
        dsm = ((candidate - conditional_score) ** 2).sum(axis=1)
        sm = ((candidate - true_score) ** 2).sum(axis=1)
        return dsm, sm

    results = map_indexed(per_time, times.size, workers)
    dsm = np.stack([r[0] for r in results])  # (T, M)
    sm = np.stack([r[1] for r in results])

    def weighted(values: np.ndarray) -> MCEstimate:
        per_sample = weights @ values
        return _estimate(per_sample)

    sigma = np.asarray(spec.sigma(times))
    s = np.asarray(spec.scale(times))
    eps2, _, _ = exact_squared_error(dist, sigma)
    predicted = float(weights @ (eps2 / (s ** 2 * sigma ** 4)))
    return DSMGap(
        l_dsm=weighted(dsm),
        l_sm=weighted(sm),
        gap=weighted(dsm - sm),
        per_time_delta2=sm.mean(axis=1),
        predicted_gap=predicted,
    )


def _require_discrete(dist: Distribution):
    if not isinstance(dist, PointMixture):
        raise UnsupportedDistributionError(
            "Information transfer needs a discrete distribution; "
            "differential entropy of continuous data diverges as t -> 0"
        )


def information_transfer(dist: Distribution, spec: DiffusionSpec, grid: Sequence[float],
                         M: Optional[int] = None, rng_seed: Optional[int] = None,
                         workers: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    T(t) = H[x0] - H[x0|x_t] with the posterior Shannon entropy averaged over
    M draws per time. Returns values and standard errors, clipped to [0, H[x0]].
    """
    _require_discrete(dist)
    M = settings.mc_samples if M is None else int(M)
    grid = spec.check_domain(np.asarray(grid, dtype=float).ravel())
    sigmas = np.asarray(spec.sigma(grid)).ravel()
    prior = dist.prior_entropy

    def per_time(i: int) -> MCEstimate:
        _, _, z = _noisy_draws(dist, float(sigmas[i]), M, stream(rng_seed, i))
        resp = dist.responsibilities_scaled(z, float(sigmas[i]))
        return _estimate(entr(resp).sum(axis=1))

    results = map_indexed(per_time, grid.size, workers)
    conditional = np.array([r.value for r in results])
    stderr = np.array([r.stderr for r in results])
    return np.clip(prior - conditional, 0.0, prior), stderr


def exact_information_transfer(dist: Distribution, spec: DiffusionSpec, grid: Sequence[float],
                               quadrature_points: Optional[int] = None) -> np.ndarray:
    """Information transfer by Gauss-Hermite quadrature, one-dimensional discrete data."""
    _require_discrete(dist)
    if dist.dim != 1:
        raise DomainError("Quadrature information transfer is one-dimensional only")
    n = settings.quadrature_points if quadrature_points is None else int(quadrature_points)
    nodes, node_weights = hermgauss(n)
    grid = spec.check_domain(np.asarray(grid, dtype=float).ravel())
    prior = dist.prior_entropy
    values = []
    for sigma in np.asarray(spec.sigma(grid)).ravel():
        z = dist.points[:, :1] + np.sqrt(2.0) * sigma * nodes[None, :]
        resp = dist.responsibilities_scaled(z.reshape(-1, 1), float(sigma))
        posterior_entropy = entr(resp).sum(axis=1).reshape(z.shape)
        conditional = dist.weights @ (posterior_entropy @ node_weights) / np.sqrt(np.pi)
        values.append(prior - conditional)
    return np.clip(np.array(values), 0.0, prior)
