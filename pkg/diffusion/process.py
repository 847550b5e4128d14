"""
Diffusion processes in the (scale, noise) parameterization and time changes.

A forward process is fixed by a scale s(t) > 0 and a noise level sigma(t)
with their time derivatives. The SDE

    dX = (s'/s) X dt + s * sqrt(2 sigma' sigma) dW

has the forward kernel N(s x0, s^2 sigma^2 I). Drift and diffusion are always
derived from (s, sigma), never stored, so the two can not disagree.

A time change phi is a continuous strictly increasing map. Reparameterizing a
process by phi gives s'(t) = s(phi(t)), sigma'(t) = sigma(phi(t)).
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import Polynomial

from .errors import DomainError, TimeChangeError

logger = logging.getLogger(__name__)

Fn = Callable[[np.ndarray], np.ndarray]

# Relative slack on domain bounds, absorbs rounding in inverted schedules.
DOMAIN_RTOL = 1e-12
# Probe grid used by equivalence and validity checks.
PROBE_POINTS = 64
# Grid for numeric inverses of time changes.
INVERSE_GRID = 1024
BISECTION_STEPS = 64


def _as_output(values: np.ndarray, like: np.ndarray):
    values = np.broadcast_to(np.asarray(values, dtype=float), like.shape)
    return float(values) if like.ndim == 0 else np.array(values)


def _probe_grid(t_min: float, t_max: float, n: int = PROBE_POINTS) -> np.ndarray:
    if t_min > 0:
        return np.geomspace(t_min, t_max, n)
    return np.linspace(t_min, t_max, n)


def central_difference(fn: Fn, rel_step: float = 1e-5) -> Fn:
    """Derivative by central differences with step ``rel_step * t``."""
    def derivative(t):
        t = np.asarray(t, dtype=float)
        h = rel_step * np.maximum(np.abs(t), 1e-8)
        return (np.asarray(fn(t + h)) - np.asarray(fn(t - h))) / (2 * h)
    return derivative


@dataclass(frozen=True)
class DiffusionSpec:
    """Forward process given by s(t), sigma(t) and their derivatives on [t_min, t_max]."""

    scale_fn: Fn
    noise_fn: Fn
    scale_deriv: Fn
    noise_deriv: Fn
    t_min: float
    t_max: float
    name: str = "custom"

    def __post_init__(self):
        if not (np.isfinite(self.t_min) and np.isfinite(self.t_max)) or not 0 < self.t_min < self.t_max:
            raise DomainError(f"Invalid domain [{self.t_min}, {self.t_max}]: need 0 < t_min < t_max")

    def check_domain(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if not np.all(np.isfinite(t)):
            raise DomainError(f"{self.name}: non-finite time")
        lo = self.t_min * (1 - DOMAIN_RTOL)
        hi = self.t_max * (1 + DOMAIN_RTOL)
        if np.any(t < lo) or np.any(t > hi):
            bad = t[(t < lo) | (t > hi)] if t.ndim else t
            raise DomainError(
                f"{self.name}: time {np.ravel(bad)[0]!r} outside domain [{self.t_min}, {self.t_max}]"
            )
        return t

    def scale(self, t):
        t = self.check_domain(t)
        return _as_output(self.scale_fn(t), t)

    def sigma(self, t):
        t = self.check_domain(t)
        return _as_output(self.noise_fn(t), t)

    def scale_dot(self, t):
        t = self.check_domain(t)
        return _as_output(self.scale_deriv(t), t)

    def sigma_dot(self, t):
        t = self.check_domain(t)
        return _as_output(self.noise_deriv(t), t)

    @property
    def sigma_range(self) -> Tuple[float, float]:
        return self.sigma(self.t_min), self.sigma(self.t_max)

    def probe_times(self, n: int = PROBE_POINTS) -> np.ndarray:
        return _probe_grid(self.t_min, self.t_max, n)

    def validate(self) -> "DiffusionSpec":
        """Check sigma' > 0 and s*sigma > 0 on the probe grid."""
        t = self.probe_times()
        if np.any(self.sigma_dot(t) <= 0):
            raise DomainError(f"{self.name}: sigma must be strictly increasing (sigma' > 0)")
        if np.any(self.scale(t) * self.sigma(t) <= 0):
            raise DomainError(f"{self.name}: forward kernel std s*sigma must be positive")
        return self

    def time_for_sigma(self, sigma):
        """Invert the strictly increasing noise level: t with sigma(t) = sigma."""
        sigma = np.asarray(sigma, dtype=float)
        lo_sigma, hi_sigma = self.sigma_range
        if np.any(sigma < lo_sigma * (1 - 1e-10)) or np.any(sigma > hi_sigma * (1 + 1e-10)):
            raise DomainError(
                f"{self.name}: sigma outside [{lo_sigma}, {hi_sigma}]"
            )
        t = _bisect_increasing(self.noise_fn, np.atleast_1d(sigma), self.t_min, self.t_max)
        return float(t[0]) if sigma.ndim == 0 else t.reshape(sigma.shape)


def _bisect_increasing(fn: Fn, targets: np.ndarray, lo: float, hi: float,
                       grid: Optional[np.ndarray] = None) -> np.ndarray:
    """Vectorized inverse of an increasing function, bracketed on a grid then bisected."""
    if grid is None:
        grid = _probe_grid(lo, hi, INVERSE_GRID)
    values = np.asarray(fn(grid), dtype=float)
    idx = np.clip(np.searchsorted(values, targets), 1, len(grid) - 1)
    left = grid[idx - 1].copy()
    right = grid[idx].copy()
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (left + right)
        below = np.asarray(fn(mid), dtype=float) < targets
        left = np.where(below, mid, left)
        right = np.where(below, right, mid)
    result = 0.5 * (left + right)
    # Endpoints are returned exactly.
    result = np.where(targets <= values[0], grid[0], result)
    return np.where(targets >= values[-1], grid[-1], result)


def ve_spec(t_min: float = 0.002, t_max: float = 80.0) -> DiffusionSpec:
    """Variance-exploding process with s = 1, sigma(t) = t."""
    return DiffusionSpec(
        scale_fn=lambda t: np.ones_like(np.asarray(t, dtype=float)),
        noise_fn=lambda t: np.asarray(t, dtype=float),
        scale_deriv=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        noise_deriv=lambda t: np.ones_like(np.asarray(t, dtype=float)),
        t_min=t_min,
        t_max=t_max,
        name="ve",
    )


def vp_spec(beta_min: float = 0.1, beta_max: float = 20.0,
            t_min: float = 1e-3, t_max: float = 1.0) -> DiffusionSpec:
    """Variance-preserving process with a linear beta schedule, in (s, sigma) form."""
    beta_d = beta_max - beta_min

    def exponent(t):
        t = np.asarray(t, dtype=float)
        return 0.5 * beta_d * t ** 2 + beta_min * t

    def beta(t):
        return beta_d * np.asarray(t, dtype=float) + beta_min

    def noise(t):
        return np.sqrt(np.expm1(exponent(t)))

    def noise_deriv(t):
        return beta(t) * np.exp(exponent(t)) / (2 * noise(t))

    def scale(t):
        return np.exp(-0.5 * exponent(t))

    def scale_deriv(t):
        return -0.5 * beta(t) * scale(t)

    return DiffusionSpec(scale, noise, scale_deriv, noise_deriv, t_min, t_max, name="vp")


def from_callables(scale_fn: Fn, noise_fn: Fn, t_min: float, t_max: float,
                   scale_deriv: Optional[Fn] = None, noise_deriv: Optional[Fn] = None,
                   name: str = "custom") -> DiffusionSpec:
    """Build a spec from user functions; missing derivatives use central differences."""
    if scale_deriv is None or noise_deriv is None:
        logger.warning(
            f"{name}: derivatives estimated by central differences (step 1e-5*t); "
            "expect roughly 1e-10 relative accuracy"
        )
    return DiffusionSpec(
        scale_fn=scale_fn,
        noise_fn=noise_fn,
        scale_deriv=scale_deriv or central_difference(scale_fn),
        noise_deriv=noise_deriv or central_difference(noise_fn),
        t_min=t_min,
        t_max=t_max,
        name=name,
    ).validate()


def drift_diffusion(spec: DiffusionSpec, t) -> Tuple[float, float]:
    """Drift coefficient s'/s and diffusion s*sqrt(2 sigma' sigma) at time t."""
    s = spec.scale(t)
    drift = spec.scale_dot(t) / s
    diffusion = s * np.sqrt(2 * spec.sigma_dot(t) * spec.sigma(t))
    return drift, diffusion


def forward_kernel(spec: DiffusionSpec, t) -> Tuple[float, float]:
    """Mean scale s(t) and standard deviation s(t)*sigma(t) of p(x_t | x_0)."""
    s = spec.scale(t)
    return s, s * spec.sigma(t)


@dataclass(frozen=True)
class TimeChange:
    """Continuous strictly increasing map phi on [t_min, t_max] with derivative and inverse."""

    fn: Fn
    derivative: Fn
    t_min: float
    t_max: float
    inverse_fn: Optional[Fn] = None
    name: str = "phi"
    _grid: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.t_min < self.t_max:
            raise TimeChangeError(f"{self.name}: empty domain [{self.t_min}, {self.t_max}]")
        grid = _probe_grid(self.t_min, self.t_max, INVERSE_GRID)
        values = np.asarray(self.fn(grid), dtype=float)
        if not np.all(np.isfinite(values)) or np.any(np.diff(values) <= 0):
            raise TimeChangeError(f"{self.name}: not strictly increasing on its domain")
        object.__setattr__(self, "_grid", grid)

    def _check(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        lo = self.t_min - DOMAIN_RTOL * abs(self.t_min)
        hi = self.t_max + DOMAIN_RTOL * abs(self.t_max)
        if np.any(t < lo) or np.any(t > hi):
            raise TimeChangeError(f"{self.name}: time outside [{self.t_min}, {self.t_max}]")
        return t

    def __call__(self, t):
        t = self._check(t)
        return _as_output(self.fn(t), t)

    def rate(self, t):
        t = self._check(t)
        return _as_output(self.derivative(t), t)

    @property
    def range(self) -> Tuple[float, float]:
        return float(self.fn(np.asarray(self.t_min))), float(self.fn(np.asarray(self.t_max)))

    def inverse(self, u):
        u = np.asarray(u, dtype=float)
        lo, hi = self.range
        slack = DOMAIN_RTOL * max(abs(lo), abs(hi), 1.0)
        if np.any(u < lo - slack) or np.any(u > hi + slack):
            raise TimeChangeError(f"{self.name}: value outside range [{lo}, {hi}]")
        if self.inverse_fn is not None:
            return _as_output(self.inverse_fn(u), u)
        t = _bisect_increasing(self.fn, np.atleast_1d(u), self.t_min, self.t_max, grid=self._grid)
        return float(t[0]) if u.ndim == 0 else t.reshape(u.shape)

    def inverted(self) -> "TimeChange":
        """phi^-1 as a time change on phi's range."""
        lo, hi = self.range
        return TimeChange(
            fn=self.inverse,
            derivative=lambda u: 1.0 / np.asarray(self.derivative(self.inverse(u)), dtype=float),
            t_min=lo,
            t_max=hi,
            inverse_fn=self.fn,
            name=f"{self.name}^-1",
        )

    def normalized(self) -> "TimeChange":
        """Shifted copy with phi(t_min) = 0."""
        offset = self.range[0]
        return TimeChange(
            fn=lambda t: np.asarray(self.fn(t), dtype=float) - offset,
            derivative=self.derivative,
            t_min=self.t_min,
            t_max=self.t_max,
            inverse_fn=lambda u: self.inverse(np.asarray(u, dtype=float) + offset),
            name=f"{self.name}-normalized",
        )

    @classmethod
    def identity(cls, t_min: float, t_max: float) -> "TimeChange":
        return cls(
            fn=lambda t: np.asarray(t, dtype=float),
            derivative=lambda t: np.ones_like(np.asarray(t, dtype=float)),
            t_min=t_min,
            t_max=t_max,
            inverse_fn=lambda u: np.asarray(u, dtype=float),
            name="identity",
        )

    @classmethod
    def from_polynomial(cls, coefficients: Sequence[float], t_min: float, t_max: float) -> "TimeChange":
        """Polynomial time change, coefficients in increasing degree."""
        poly = Polynomial(coefficients)
        deriv = poly.deriv()
        return cls(fn=poly, derivative=deriv, t_min=t_min, t_max=t_max, name=f"poly{list(coefficients)}")

    @classmethod
    def from_table(cls, times: np.ndarray, values: np.ndarray, name: str = "tabulated") -> "TimeChange":
        """Piecewise-linear time change through (times, values)."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        slopes = np.diff(values) / np.diff(times)

        def derivative(t):
            idx = np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(slopes) - 1)
            return slopes[idx]

        return cls(
            fn=lambda t: np.interp(t, times, values),
            derivative=derivative,
            t_min=float(times[0]),
            t_max=float(times[-1]),
            inverse_fn=lambda u: np.interp(u, values, times),
            name=name,
        )


def apply_time_change(spec: DiffusionSpec, phi: TimeChange) -> DiffusionSpec:
    """The process Y_t = X_phi(t): s'(t) = s(phi(t)), sigma'(t) = sigma(phi(t))."""
    lo, hi = phi.range
    if lo < spec.t_min * (1 - DOMAIN_RTOL) or hi > spec.t_max * (1 + DOMAIN_RTOL):
        raise TimeChangeError(
            f"Range of {phi.name} [{lo}, {hi}] is not inside the domain of {spec.name} "
            f"[{spec.t_min}, {spec.t_max}]"
        )

    def scale(t):
        return spec.scale_fn(phi.fn(t))

    def noise(t):
        return spec.noise_fn(phi.fn(t))

    def scale_deriv(t):
        return np.asarray(spec.scale_deriv(phi.fn(t))) * np.asarray(phi.derivative(t))

    def noise_deriv(t):
        return np.asarray(spec.noise_deriv(phi.fn(t))) * np.asarray(phi.derivative(t))

    return DiffusionSpec(
        scale_fn=scale,
        noise_fn=noise,
        scale_deriv=scale_deriv,
        noise_deriv=noise_deriv,
        t_min=phi.t_min,
        t_max=phi.t_max,
        name=f"{spec.name}o{phi.name}",
    ).validate()


class EquivalenceCheck(NamedTuple):
    equivalent: bool
    max_residual: float


def _relative_residual(lhs: np.ndarray, rhs: np.ndarray, floor: float) -> float:
    denom = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), floor)
    return float(np.max(np.abs(lhs - rhs) / denom))


def _equivalence_residual(original: DiffusionSpec, changed: DiffusionSpec, phi: TimeChange) -> float:
    """Residual of phi' f_orig(phi(t)) = f_changed(t) and sqrt(phi') g_orig(phi(t)) = g_changed(t)."""
    lo = max(phi.t_min, changed.t_min)
    hi = min(phi.t_max, changed.t_max)
    if not lo < hi:
        return np.inf
    t = _probe_grid(lo, hi)
    try:
        u = phi(t)
        rate = phi.rate(t)
        f_orig, g_orig = drift_diffusion(original, u)
        f_new, g_new = drift_diffusion(changed, t)
    except (DomainError, TimeChangeError):
        return np.inf
    floor = 1e-12 * max(float(np.max(np.abs(g_new))), float(np.max(np.abs(f_new))), 1e-300)
    drift_res = _relative_residual(rate * f_orig, f_new, floor)
    diffusion_res = _relative_residual(np.sqrt(rate) * g_orig, g_new, floor)
    return max(drift_res, diffusion_res)


def check_equivalence(a: DiffusionSpec, b: DiffusionSpec, phi: TimeChange,
                      tolerance: float = 1e-8) -> EquivalenceCheck:
    """
    Test whether a and b are equivalent up to the time change phi.

    phi maps the time axis of the reparameterized process onto the time axis
    of the other one. Either argument may be the reparameterized process; the
    orientation with the smaller residual is reported.
    """
    residual = min(_equivalence_residual(a, b, phi), _equivalence_residual(b, a, phi))
    return EquivalenceCheck(bool(residual < tolerance), float(residual))
