"""
Squared-error tables eps^2(t) = E ||D(x_t) - x_0||^2 on a time grid.

Three routes produce the same quantity:
- estimate_error_table: Monte-Carlo over (x_0, noise) pairs with any denoiser
- spectral_error_table: the same draws, decomposed over an orthonormal basis
- exact_error_table: quadrature of the analytic posterior variance

Every grid index draws from its own stream keyed by (seed, index), so tables
do not depend on the worker count.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.hermite import hermgauss

from config import settings
from diffusion.analytic import DataSampler, Denoiser, Distribution
from diffusion.errors import DomainError
from diffusion.process import DiffusionSpec
from diffusion.streams import map_indexed, stream

logger = logging.getLogger(__name__)

BASES = ("fourier", "pixel")
# Relative tolerance for per-basis rows summing to the total.
PARSEVAL_RTOL = 1e-6


@dataclass(frozen=True, eq=False)
class ErrorTable:
    """eps^2 on ascending times, optionally split over basis directions."""

    times: np.ndarray
    values: np.ndarray
    per_basis: Optional[np.ndarray] = None
    basis_shape: Optional[Tuple[int, ...]] = None
    basis: Optional[str] = None
    stderr: Optional[np.ndarray] = None
    provenance: Dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if times.size < 2:
            raise DomainError("An error table needs at least two times")
        if values.shape != times.shape:
            raise DomainError(f"{values.size} values for {times.size} times")
        if not np.all(np.isfinite(times)) or np.any(np.diff(times) <= 0):
            raise DomainError("Error table times must be finite and strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise DomainError("Error table values must be finite and non-negative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

        if self.per_basis is not None:
            per_basis = np.asarray(self.per_basis, dtype=float)
            if per_basis.ndim != 2 or per_basis.shape[0] != times.size:
                raise DomainError(f"Per-basis matrix must have {times.size} rows")
            if not np.all(np.isfinite(per_basis)) or np.any(per_basis < 0):
                raise DomainError("Per-basis errors must be finite and non-negative")
            row_sums = per_basis.sum(axis=1)
            scale = max(float(values.max()), 1e-300)
            if np.any(np.abs(row_sums - values) > PARSEVAL_RTOL * np.maximum(values, 1e-12 * scale)):
                raise DomainError("Per-basis rows do not sum to the total squared error")
            object.__setattr__(self, "per_basis", per_basis)
            shape = self.basis_shape or (per_basis.shape[1],)
            object.__setattr__(self, "basis_shape", tuple(int(n) for n in shape))
        if self.stderr is not None:
            object.__setattr__(self, "stderr", np.asarray(self.stderr, dtype=float).ravel())

    @property
    def n_basis(self) -> int:
        return 0 if self.per_basis is None else self.per_basis.shape[1]

    def check_domain(self, spec: DiffusionSpec) -> "ErrorTable":
        spec.check_domain(self.times)
        return self

    def column(self, b: int) -> "ErrorTable":
        """Table of a single basis direction."""
        if self.per_basis is None:
            raise DomainError("Table has no per-basis decomposition")
        return ErrorTable(self.times, self.per_basis[:, b], provenance={**self.provenance, "basis_index": b})


def _grid_sigmas(spec: DiffusionSpec, grid: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    grid = spec.check_domain(np.asarray(grid, dtype=float).ravel())
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise DomainError("Estimation grid must be strictly increasing with at least two times")
    return grid, np.asarray(spec.sigma(grid))


def _residuals(denoiser: Denoiser, data_sampler: DataSampler, sigma: float, n: int,
               rng: np.random.Generator) -> np.ndarray:
    """Denoising residuals D(x0 + sigma nu, sigma) - x0, one row per sample."""
    x0 = np.asarray(data_sampler(n, rng), dtype=float).reshape(n, -1)
    nu = rng.standard_normal(x0.shape)
    x0_hat = np.asarray(denoiser(x0 + sigma * nu, sigma), dtype=float).reshape(n, -1)
    return x0_hat - x0


def _mean_and_stderr(samples: np.ndarray) -> Tuple[float, float]:
    n = samples.shape[0]
    stderr = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else np.nan
    return float(samples.mean()), stderr


def estimate_error_table(denoiser: Denoiser, spec: DiffusionSpec, data_sampler: DataSampler,
                         grid: Sequence[float], M: Optional[int] = None, rng_seed: Optional[int] = None,
                         workers: Optional[int] = None) -> ErrorTable:
    """Monte-Carlo eps^2(t_i) with M samples per grid time."""
    M = settings.mc_samples if M is None else int(M)
    if M < 1:
        raise ValueError(f"Need at least one sample per time, got M={M}")
    grid, sigmas = _grid_sigmas(spec, grid)

    def estimate(i: int) -> Tuple[float, float]:
        residual = _residuals(denoiser, data_sampler, float(sigmas[i]), M, stream(rng_seed, i))
        return _mean_and_stderr((residual ** 2).sum(axis=1))

    results = map_indexed(estimate, grid.size, workers)
    logger.debug(f"Estimated eps^2 on {grid.size} times with M={M}")
    return ErrorTable(
        times=grid,
        values=np.array([mean for mean, _ in results]),
        stderr=np.array([err for _, err in results]),
        provenance={"method": "mc", "samples": M, "seed": rng_seed},
    )


def _basis_energy(residual: np.ndarray, shape: Tuple[int, ...], basis: str) -> np.ndarray:
    """Mean squared coefficient per basis direction, unitary transform."""
    arr = residual.reshape(residual.shape[0], *shape)
    if basis == "fourier":
        axes = tuple(range(1, arr.ndim))
        coefficients = np.fft.fftn(arr, axes=axes, norm="ortho")
        energy = np.abs(coefficients) ** 2
    else:
        energy = arr ** 2
    return energy.mean(axis=0).ravel()


def spectral_error_table(denoiser: Denoiser, spec: DiffusionSpec, data_sampler: DataSampler,
                         grid: Sequence[float], M: Optional[int] = None, rng_seed: Optional[int] = None,
                         shape: Optional[Tuple[int, ...]] = None, basis: str = "fourier",
                         workers: Optional[int] = None) -> ErrorTable:
    """
    eps^2 decomposed over basis directions.

    Uses the same random draws as estimate_error_table with the same seed, so
    the totals agree exactly and each row of the per-basis matrix sums to the
    total (Parseval, unitary DFT). ``shape`` gives the array layout of one
    sample (e.g. (H, W)); ``basis="pixel"`` keeps the coordinate directions.
    """
    if basis not in BASES:
        raise ValueError(f"Unknown basis {basis!r}; expected one of {BASES}")
    M = settings.mc_samples if M is None else int(M)
    if M < 1:
        raise ValueError(f"Need at least one sample per time, got M={M}")
    grid, sigmas = _grid_sigmas(spec, grid)

    def estimate(i: int):
        residual = _residuals(denoiser, data_sampler, float(sigmas[i]), M, stream(rng_seed, i))
        layout = tuple(shape) if shape is not None else (residual.shape[1],)
        if int(np.prod(layout)) != residual.shape[1]:
            raise DomainError(f"Sample of size {residual.shape[1]} does not fit shape {layout}")
        mean, err = _mean_and_stderr((residual ** 2).sum(axis=1))
        return mean, err, _basis_energy(residual, layout, basis), layout

    results = map_indexed(estimate, grid.size, workers)
    return ErrorTable(
        times=grid,
        values=np.array([r[0] for r in results]),
        stderr=np.array([r[1] for r in results]),
        per_basis=np.vstack([r[2] for r in results]),
        basis_shape=results[0][3],
        basis=basis,
        provenance={"method": "mc", "samples": M, "seed": rng_seed, "basis": basis},
    )


def _quadrature_eps2(dist: Distribution, sigma: float, nodes: np.ndarray, weights: np.ndarray) -> float:
    """E_z[Var[x0 | z]] for D = 1, Gauss-Hermite nodes per mixture component."""
    std = np.sqrt(dist.component_variances[:, 0] + sigma ** 2)
    z = dist.means[:, :1] + np.sqrt(2.0) * std[:, None] * nodes[None, :]
    variance = dist.variance_trace_scaled(z.reshape(-1, 1), sigma).reshape(z.shape)
    return float(dist.weights @ (variance @ weights) / np.sqrt(np.pi))


def exact_squared_error(dist: Distribution, sigmas, quadrature_points: Optional[int] = None,
                        mc_samples: Optional[int] = None, rng_seed: int = 0) -> Tuple[np.ndarray, Optional[np.ndarray], Dict]:
    """
    eps^2 = E[tr Var[x0 | z]] at each noise level, z = x0 + sigma nu.

    Single components have the closed form sum_d c_d^2 sigma^2 / (c_d^2 + sigma^2).
    One-dimensional mixtures use Gauss-Hermite quadrature; other mixtures fall
    back to Monte-Carlo over the exact posterior variance. Returns values,
    standard errors (None when exact) and provenance.
    """
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
    if dist.n_components == 1:
        c2 = dist.component_variances[0]
        values = np.array([np.sum(c2 * s ** 2 / (c2 + s ** 2)) for s in sigmas])
        return values, None, {"method": "exact"}

    if dist.dim == 1:
        n = settings.quadrature_points if quadrature_points is None else int(quadrature_points)
        nodes, weights = hermgauss(n)
        values = np.array([_quadrature_eps2(dist, float(s), nodes, weights) for s in sigmas])
        return values, None, {"method": "exact", "quadrature_points": n}

    M = settings.mc_samples if mc_samples is None else int(mc_samples)
    logger.warning(
        f"No quadrature for a {dist.dim}-dimensional mixture; "
        f"falling back to Monte-Carlo with M={M}, seed={rng_seed}"
    )

    def estimate(i: int) -> Tuple[float, float]:
        rng = stream(rng_seed, i)
        sigma = float(sigmas[i])
        z = dist.sample(M, rng) + sigma * rng.standard_normal((M, dist.dim))
        return _mean_and_stderr(dist.variance_trace_scaled(z, sigma))

    results = [estimate(i) for i in range(sigmas.size)]
    return (
        np.array([mean for mean, _ in results]),
        np.array([err for _, err in results]),
        {"method": "mc-posterior-variance", "samples": M, "seed": rng_seed},
    )


def exact_error_table(dist: Distribution, spec: DiffusionSpec, grid: Sequence[float],
                      quadrature_points: Optional[int] = None, mc_samples: Optional[int] = None,
                      rng_seed: int = 0) -> ErrorTable:
    """eps^2(t) = E[tr Var[x0 | x_t]] for an analytic distribution."""
    grid, sigmas = _grid_sigmas(spec, grid)
    values, stderr, provenance = exact_squared_error(dist, sigmas, quadrature_points, mc_samples, rng_seed)
    return ErrorTable(grid, values, stderr=stderr, provenance=provenance)


def error_table_from_loss(spec: DiffusionSpec, times: Sequence[float], losses: Sequence[float],
                          loss_weights: Sequence[float]) -> ErrorTable:
    """Convert a training-loss table L(t) = lambda(t) s(t)^2 eps^2(t) into eps^2."""
    times = spec.check_domain(np.asarray(times, dtype=float).ravel())
    losses = np.asarray(losses, dtype=float).ravel()
    loss_weights = np.asarray(loss_weights, dtype=float).ravel()
    if np.any(loss_weights <= 0):
        raise DomainError("Loss weights lambda(t) must be positive")
    values = losses / (loss_weights * np.asarray(spec.scale(times)) ** 2)
    return ErrorTable(times, values, provenance={"method": "imported", "format": "loss"})
