"""
KL divergence between generated samples and an analytic target.

Discrete targets: samples are binned into non-overlapping boxes around the
target points (max-norm half width eps) and compared with the target weights.
Continuous targets: a fixed-bandwidth Gaussian KDE of the samples is compared
with the target density by Monte-Carlo.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from config import settings
from diffusion.analytic import GaussianMixture, PointMixture
from diffusion.errors import DomainError, UnsupportedDistributionError
from diffusion.streams import stream

logger = logging.getLogger(__name__)

DIRECTIONS = ("forward", "reverse")
# Default bin half width as a fraction of the smallest point gap.
BIN_FRACTION = 0.25
# Rows of evaluation points per KDE chunk.
KDE_CHUNK = 512


@dataclass(frozen=True)
class BinnedKL:
    """Binned KL with the counts needed to interpret it."""

    value: float
    bin_probs: np.ndarray
    out_of_support: int
    eps: float
    direction: str
    empty_bins: int


def _as_rows(samples, dim: int) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise DomainError("No samples to evaluate")
    return samples.reshape(-1, dim)


def default_bin_half_width(target: PointMixture) -> float:
    """BIN_FRACTION times the smallest max-norm gap; BIN_FRACTION for a single point."""
    gap = target.min_gap()
    return BIN_FRACTION * gap if np.isfinite(gap) else BIN_FRACTION


def binned_kl(samples, target: PointMixture, eps: Optional[float] = None,
              direction: str = "forward") -> BinnedKL:
    """
    KL between target weights w and the binned sample frequencies p.

    forward: sum_k w_k log(w_k / p_k); +inf when a weighted bin is empty.
    reverse: sum_k p_k log(p_k / w_k); +inf when samples fall outside every bin.
    Samples outside every bin are counted in the out-of-support bucket.
    """
    if not isinstance(target, PointMixture):
        raise UnsupportedDistributionError("Binned KL needs a discrete target")
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    eps = default_bin_half_width(target) if eps is None else float(eps)
    gap = target.min_gap()
    if eps <= 0 or (np.isfinite(gap) and eps >= 0.5 * gap):
        raise DomainError(f"Bin half width {eps} must be positive and below half the smallest gap {gap}")

    rows = _as_rows(samples, target.dim)
    distance = np.abs(rows[:, None, :] - target.points[None, :, :]).max(axis=-1)
    inside = distance <= eps
    counts = inside.sum(axis=0)
    out_of_support = int(rows.shape[0] - inside.any(axis=1).sum())
    probs = counts / rows.shape[0]
    w = target.weights
    empty = int(np.sum(counts == 0))

    if direction == "forward":
        if empty:
            value = np.inf
        else:
            value = float(np.sum(w * np.log(w / probs)))
    else:
        if out_of_support:
            value = np.inf
        else:
            hit = probs > 0
            value = float(np.sum(probs[hit] * np.log(probs[hit] / w[hit])))
    if not np.isfinite(value):
        logger.debug(f"Binned KL is infinite: {empty} empty bins, {out_of_support} samples out of support")
    return BinnedKL(value, probs, out_of_support, eps, direction, empty)


def kde_logpdf(points: np.ndarray, samples: np.ndarray, bandwidth: float) -> np.ndarray:
    """log of the Gaussian KDE with kernel std ``bandwidth`` at each point."""
    n, dim = samples.shape
    log_norm = -0.5 * dim * np.log(2 * np.pi * bandwidth ** 2) - np.log(n)
    out = np.empty(points.shape[0])
    for start in range(0, points.shape[0], KDE_CHUNK):
        chunk = points[start:start + KDE_CHUNK]
        sq = ((chunk[:, None, :] - samples[None, :, :]) ** 2).sum(axis=-1)
        out[start:start + KDE_CHUNK] = logsumexp(-0.5 * sq / bandwidth ** 2, axis=1) + log_norm
    return out


def kde_kl(samples, target: GaussianMixture, bandwidth: Optional[float] = None, n_mc: Optional[int] = None,
           rng_seed: Optional[int] = None, direction: str = "forward") -> float:
    """
    Monte-Carlo KL between the target and a KDE of the samples.

    forward: mean over y ~ target of log p_target(y) - log p_kde(y)
    reverse: mean over y ~ KDE of log p_kde(y) - log p_target(y)
    """
    if not isinstance(target, GaussianMixture):
        raise UnsupportedDistributionError("KDE KL needs a Gaussian-mixture target")
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    bandwidth = settings.kde_bandwidth if bandwidth is None else float(bandwidth)
    n_mc = settings.kde_mc if n_mc is None else int(n_mc)
    if bandwidth <= 0:
        raise DomainError(f"Bandwidth must be positive, got {bandwidth}")
    rows = _as_rows(samples, target.dim)
    rng = stream(rng_seed, 0)

    if direction == "forward":
        y = target.sample(n_mc, rng)
        return float(np.mean(target.logpdf_scaled(y, 0.0) - kde_logpdf(y, rows, bandwidth)))
    picks = rng.integers(0, rows.shape[0], size=n_mc)
    y = rows[picks] + bandwidth * rng.standard_normal((n_mc, target.dim))
    return float(np.mean(kde_logpdf(y, rows, bandwidth) - target.logpdf_scaled(y, 0.0)))
