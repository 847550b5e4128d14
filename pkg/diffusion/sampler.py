"""
DDIM samplers driven by a Schedule.

All updates happen in scaled space z = x/s. With x0_hat = D(z, sigma_cur):

    deterministic:  z' = x0_hat + (sigma_next / sigma_cur) (z - x0_hat)
    stochastic:     z' = x0_hat + (sigma_next / sigma_cur)^2 (z - x0_hat) + tau nu,
                    tau = sigma_next sqrt(1 - (sigma_next / sigma_cur)^2)

and x' = s_next z'. A final step to sigma = 0 returns the posterior mean
(with s = 1), so a schedule of N steps costs N + 1 denoiser calls.
"""
import logging
from enum import Enum
from typing import Optional

import numpy as np

from .analytic import Denoiser
from .errors import DomainError
from .process import DiffusionSpec
from .streams import PATH_BLOCK, map_indexed, path_blocks, stream

logger = logging.getLogger(__name__)


class SolverKind(str, Enum):
    DDIM_DETERMINISTIC = "ddim_deterministic"
    DDIM_STOCHASTIC = "ddim_stochastic"

    @property
    def stochastic(self) -> bool:
        return self is SolverKind.DDIM_STOCHASTIC


def ddim_step(kind: SolverKind, x: np.ndarray, x0_hat: np.ndarray, sigma_cur: float, sigma_next: float,
              s_cur: float, s_next: float, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """One DDIM update from sigma_cur to sigma_next."""
    kind = SolverKind(kind)
    if s_cur <= 0 or s_next <= 0:
        raise DomainError(f"Scales must be positive, got s_cur={s_cur}, s_next={s_next}")
    if not sigma_next < sigma_cur:
        raise DomainError(f"DDIM steps must decrease sigma: {sigma_cur} -> {sigma_next}")
    x0_hat = np.asarray(x0_hat, dtype=float)
    if sigma_next == 0:
        return s_next * x0_hat

    z = np.asarray(x, dtype=float) / s_cur
    ratio = sigma_next / sigma_cur
    if not kind.stochastic:
        return s_next * (x0_hat + ratio * (z - x0_hat))

    if rng is None:
        raise ValueError("The stochastic DDIM step needs a random generator")
    tau = sigma_next * np.sqrt(1.0 - ratio ** 2)
    z_next = x0_hat + ratio ** 2 * (z - x0_hat) + tau * rng.standard_normal(z.shape)
    return s_next * z_next


def count_nfe(schedule, final_step_to_mean: bool = True) -> int:
    """Denoiser calls made by run_sampler on this schedule."""
    return schedule.steps + int(final_step_to_mean)


def run_sampler(x_init: np.ndarray, schedule, denoiser: Denoiser, kind: SolverKind = SolverKind.DDIM_DETERMINISTIC,
                rng: Optional[np.random.Generator] = None, final_step_to_mean: bool = True) -> np.ndarray:
    """Integrate from x_init at schedule.times[0] down the schedule."""
    kind = SolverKind(kind)
    if kind.stochastic and rng is None:
        raise ValueError("Stochastic sampling needs a random generator")
    x = np.asarray(x_init, dtype=float)
    sigmas, scales = schedule.sigmas, schedule.scales
    for i in range(schedule.steps):
        x0_hat = denoiser(x / scales[i], float(sigmas[i]))
        x = ddim_step(kind, x, x0_hat, float(sigmas[i]), float(sigmas[i + 1]),
                      float(scales[i]), float(scales[i + 1]), rng)
    if final_step_to_mean:
        x = np.asarray(denoiser(x / scales[-1], float(sigmas[-1])), dtype=float)
    return x


def _check_schedule(spec: DiffusionSpec, schedule):
    if schedule is None or schedule.steps < 1:
        raise DomainError("Sampling needs a schedule with at least one step")
    spec.check_domain(schedule.times)
    expected = np.asarray(spec.sigma(schedule.times))
    if np.any(np.abs(expected - schedule.sigmas) > 1e-9 * np.abs(expected)):
        raise DomainError(f"Schedule {schedule.label!r} was not built for process {spec.name!r}")


def generate(spec: DiffusionSpec, schedule, denoiser: Denoiser,
             kind: SolverKind = SolverKind.DDIM_DETERMINISTIC, n_paths: int = 1,
             rng_seed: Optional[int] = None, dim: int = 1, final_step_to_mean: bool = True,
             workers: Optional[int] = None) -> np.ndarray:
    """
    Draw n_paths samples, shape (n_paths, dim).

    Paths start from N(0, s(t_max)^2 sigma(t_max)^2 I). They are processed in
    fixed blocks of PATH_BLOCK rows, block b using the stream (seed, b) for its
    initial noise and step noise; output does not depend on the worker count.
    """
    kind = SolverKind(kind)
    _check_schedule(spec, schedule)
    if n_paths < 1:
        raise ValueError(f"Need at least one path, got {n_paths}")
    if rng_seed is None:
        raise ValueError("generate needs a seed for its initial noise")
    std = float(schedule.scales[0] * schedule.sigmas[0])
    blocks = path_blocks(n_paths, PATH_BLOCK)

    def run_block(b: int) -> np.ndarray:
        rng = stream(rng_seed, b)
        rows = blocks[b].stop - blocks[b].start
        x_init = std * rng.standard_normal((rows, dim))
        return run_sampler(x_init, schedule, denoiser, kind, rng, final_step_to_mean)

    samples = np.concatenate(map_indexed(run_block, len(blocks), workers), axis=0)
    logger.debug(f"Generated {n_paths} paths with {schedule.label} ({kind.value}, {schedule.steps} steps)")
    return samples


def gaussian_exact_trajectory(c: float, schedule, x_init, final_step_to_mean: bool = True) -> np.ndarray:
    """
    Deterministic DDIM on N(0, c^2) data in closed form: each step multiplies
    z by (c^2 + sigma_next sigma_cur) / (c^2 + sigma_cur^2); the final step to
    the mean multiplies by c^2 / (c^2 + sigma_0^2).
    """
    x = np.asarray(x_init, dtype=float)
    c2 = c ** 2
    sigmas, scales = schedule.sigmas, schedule.scales
    factor = 1.0
    for i in range(schedule.steps):
        factor *= (c2 + sigmas[i + 1] * sigmas[i]) / (c2 + sigmas[i] ** 2) * scales[i + 1] / scales[i]
    if final_step_to_mean:
        factor *= c2 / (c2 + sigmas[-1] ** 2) / scales[-1]
    return factor * x
