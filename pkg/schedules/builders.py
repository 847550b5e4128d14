"""
Sampling schedules.

A schedule is a strictly descending list of times t_N > ... > t_0 together
with sigma(t_i) and s(t_i). Solvers only read the (sigma, s) pairs, so a
schedule built under one parameterization drives any equivalent process
through Schedule.matched.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from config import settings
from diffusion.errors import ConfigError, DomainError, FlatCurveError
from diffusion.process import DiffusionSpec, ve_spec

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Schedule:
    """Descending sampling times with their noise levels and scales."""

    times: np.ndarray
    sigmas: np.ndarray
    scales: np.ndarray
    label: str
    params: Dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        sigmas = np.asarray(self.sigmas, dtype=float).ravel()
        scales = np.asarray(self.scales, dtype=float).ravel()
        if times.size < 2:
            raise DomainError(f"Schedule {self.label!r} needs at least one step (two times)")
        if sigmas.shape != times.shape or scales.shape != times.shape:
            raise DomainError(f"Schedule {self.label!r}: times, sigmas and scales differ in length")
        if np.any(np.diff(times) >= 0) or np.any(np.diff(sigmas) >= 0):
            raise DomainError(f"Schedule {self.label!r} must be strictly descending")
        if np.any(scales <= 0) or np.any(sigmas <= 0):
            raise DomainError(f"Schedule {self.label!r}: sigma and s must be positive")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "scales", scales)

    @property
    def steps(self) -> int:
        return self.times.size - 1

    def to_dict(self) -> Dict:
        return {
            "label": self.label,
            "params": self.params,
            "times": self.times.tolist(),
            "sigmas": self.sigmas.tolist(),
            "scales": self.scales.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "Schedule":
        try:
            return cls(data["times"], data["sigmas"], data["scales"], data["label"], data.get("params", {}))
        except KeyError as e:
            raise ConfigError(f"Schedule description is missing field {e}") from e

    def matched(self, spec: DiffusionSpec) -> "Schedule":
        """Same noise levels on another (equivalent) process."""
        times = np.asarray(spec.time_for_sigma(self.sigmas))
        return schedule_for_spec(spec, times, f"{self.label}@{spec.name}", self.params)


def schedule_for_spec(spec: DiffusionSpec, times, label: str, params: Optional[Dict] = None) -> Schedule:
    times = np.asarray(times, dtype=float).ravel()
    if times.size > 1 and times[0] < times[-1]:
        times = times[::-1]
    spec.check_domain(times)
    return Schedule(
        times=times,
        sigmas=np.asarray(spec.sigma(times)),
        scales=np.asarray(spec.scale(times)),
        label=label,
        params=params or {},
    )


def _check_steps(n_steps: int):
    if int(n_steps) < 1:
        raise DomainError(f"A schedule needs at least one step, got N={n_steps}")


def _check_bounds(lo: float, hi: float, what: str):
    if not (np.isfinite(lo) and np.isfinite(hi)) or not 0 < lo < hi:
        raise DomainError(f"Invalid {what} bounds [{lo}, {hi}]")


def _pin_endpoints(ascending: np.ndarray, lo: float, hi: float) -> np.ndarray:
    ascending = np.asarray(ascending, dtype=float).copy()
    ascending[0], ascending[-1] = lo, hi
    return ascending


def edm_sigmas(sigma_min: float, sigma_max: float, rho: float, n_steps: int) -> np.ndarray:
    """sigma_i = (sigma_max^(1/rho) + i/N (sigma_min^(1/rho) - sigma_max^(1/rho)))^rho, descending."""
    _check_bounds(sigma_min, sigma_max, "sigma")
    _check_steps(n_steps)
    if rho <= 0:
        raise DomainError(f"rho must be positive, got {rho}")
    ramp = np.arange(n_steps + 1) / n_steps
    inv_rho = 1.0 / rho
    sigmas = (sigma_max ** inv_rho + ramp * (sigma_min ** inv_rho - sigma_max ** inv_rho)) ** rho
    return _pin_endpoints(sigmas[::-1], sigma_min, sigma_max)[::-1]


def edm_schedule(n_steps: int, sigma_min: Optional[float] = None, sigma_max: Optional[float] = None,
                 rho: Optional[float] = None, spec: Optional[DiffusionSpec] = None) -> Schedule:
    """Karras-style power schedule in sigma (defaults rho=7, sigma in [0.002, 80])."""
    sigma_min = settings.sigma_min if sigma_min is None else sigma_min
    sigma_max = settings.sigma_max if sigma_max is None else sigma_max
    rho = settings.rho if rho is None else rho
    sigmas = edm_sigmas(sigma_min, sigma_max, rho, n_steps)
    spec = spec or ve_spec(sigma_min, sigma_max)
    times = np.asarray(spec.time_for_sigma(sigmas))
    params = {"sigma_min": sigma_min, "sigma_max": sigma_max, "rho": rho, "steps": int(n_steps)}
    return schedule_for_spec(spec, times, "edm", params)


def edm_grid(n_points: int, sigma_min: Optional[float] = None, sigma_max: Optional[float] = None,
             rho: Optional[float] = None, spec: Optional[DiffusionSpec] = None) -> np.ndarray:
    """Ascending estimation grid with EDM spacing."""
    return edm_schedule(n_points - 1, sigma_min, sigma_max, rho, spec).times[::-1].copy()


def uniform_schedule(t_min: float, t_max: float, n_steps: int,
                     spec: Optional[DiffusionSpec] = None) -> Schedule:
    """Equidistant steps in t."""
    _check_bounds(t_min, t_max, "time")
    _check_steps(n_steps)
    times = _pin_endpoints(np.linspace(t_min, t_max, n_steps + 1), t_min, t_max)
    spec = spec or ve_spec(t_min, t_max)
    return schedule_for_spec(spec, times, "uniform", {"t_min": t_min, "t_max": t_max, "steps": int(n_steps)})


def entropic_schedule(curve, t_min: float, t_max: float, n_steps: int,
                      spec: Optional[DiffusionSpec] = None, label: Optional[str] = None) -> Schedule:
    """
    Invert an entropy curve at equally spaced levels.

    Levels are phi(t_min) + j/N (phi(t_max) - phi(t_min)) for j = 0..N; both
    endpoints are returned exactly. A flat stretch of the curve touching an
    endpoint is skipped over (that endpoint absorbs it); any other flat
    stretch inside [t_min, t_max] is an error.
    """
    _check_bounds(t_min, t_max, "time")
    _check_steps(n_steps)
    restricted = curve.restricted(t_min, t_max)
    lo, hi = restricted.range
    if hi <= lo:
        raise FlatCurveError(f"{curve.kind} curve is flat on [{t_min}, {t_max}]")
    for start, end in restricted.flat_intervals():
        if start > t_min and end < t_max:
            raise FlatCurveError(f"{curve.kind} curve is flat on [{start}, {end}] inside the schedule range")
        logger.warning(f"{curve.kind} curve is flat on [{start}, {end}]; endpoint step spans it")

    levels = lo + np.arange(n_steps + 1) / n_steps * (hi - lo)
    times = _pin_endpoints(restricted.inverse(levels), t_min, t_max)
    if np.any(np.diff(times) <= 0):
        raise FlatCurveError(f"{curve.kind} curve does not separate {n_steps} steps on [{t_min}, {t_max}]")
    spec = spec or ve_spec(t_min, t_max)
    params = {"t_min": t_min, "t_max": t_max, "steps": int(n_steps), "curve": curve.kind}
    return schedule_for_spec(spec, times, label or curve.kind, params)


def gaussian_optimal_schedule(c: float, t_min: float, t_max: float, n_steps: int,
                              spec: Optional[DiffusionSpec] = None) -> Schedule:
    """t_i = c tan(a_min + i/N (a_max - a_min)), a = arctan(t/c): optimal for N(0, c^2) data."""
    if c <= 0:
        raise DomainError(f"Gaussian scale must be positive, got c={c}")
    _check_bounds(t_min, t_max, "time")
    _check_steps(n_steps)
    a_min, a_max = np.arctan(t_min / c), np.arctan(t_max / c)
    times = c * np.tan(a_min + np.arange(n_steps + 1) / n_steps * (a_max - a_min))
    times = _pin_endpoints(times, t_min, t_max)
    spec = spec or ve_spec(t_min, t_max)
    params = {"c": c, "t_min": t_min, "t_max": t_max, "steps": int(n_steps)}
    return schedule_for_spec(spec, times, "gaussian_optimal", params)


@dataclass(frozen=True)
class ScheduleBuilder:
    """Named schedule family; build(N) returns the N-step member."""

    name: str
    build: Callable[[int], Schedule]
