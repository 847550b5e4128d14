"""
Entropy curves: conditional-entropy rates, entropic and rescaled entropic time.

The conditional entropy of the data given x_t grows at the rate

    dH/dt = sigma'(t) / sigma(t)^3 * eps^2(t)

(the I-MMSE identity). Entropic time integrates this rate; rescaled entropic
time weights it by sigma(t). Both integrals use the left-endpoint Riemann rule
and are anchored at 0 on the first grid time.
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from diffusion.errors import DegenerateCurveError, DomainError, TimeChangeError
from diffusion.process import DOMAIN_RTOL, DiffusionSpec, TimeChange

from .tables import ErrorTable

logger = logging.getLogger(__name__)

Fn = Callable[[np.ndarray], np.ndarray]

CURVE_KINDS = ("entropic", "rescaled", "spectral_rescaled", "gaussian_rescaled", "identity", "tabulated")
RADIAL_CONVENTIONS = ("ring", "annulus")


@dataclass(frozen=True, eq=False)
class EntropyCurve:
    """Non-decreasing map t -> phi(t) on ascending times, with phi(times[0]) = 0."""

    times: np.ndarray
    values: np.ndarray
    kind: str
    exact_fn: Optional[Fn] = None
    exact_inverse: Optional[Fn] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if self.kind not in CURVE_KINDS:
            raise DomainError(f"Unknown curve kind {self.kind!r}")
        if times.size < 2 or values.shape != times.shape:
            raise DomainError("A curve needs matching times and values, at least two of each")
        if np.any(np.diff(times) <= 0) or not np.all(np.isfinite(times)):
            raise DomainError("Curve times must be finite and strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(np.diff(values) < 0):
            raise DomainError("Curve values must be finite and non-decreasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def t_min(self) -> float:
        return float(self.times[0])

    @property
    def t_max(self) -> float:
        return float(self.times[-1])

    @property
    def range(self) -> Tuple[float, float]:
        return float(self.values[0]), float(self.values[-1])

    @property
    def is_strictly_increasing(self) -> bool:
        return bool(np.all(np.diff(self.values) > 0))

    def _check_times(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        slack = DOMAIN_RTOL * max(abs(self.t_max), 1.0)
        if np.any(t < self.t_min - slack) or np.any(t > self.t_max + slack):
            raise DomainError(f"{self.kind} curve: time outside [{self.t_min}, {self.t_max}]")
        return t

    def __call__(self, t):
        t = self._check_times(t)
        values = self.exact_fn(t) if self.exact_fn is not None else np.interp(t, self.times, self.values)
        return float(values) if t.ndim == 0 else np.asarray(values, dtype=float)

    def _inverse_knots(self) -> Tuple[np.ndarray, np.ndarray]:
        """Knots of the piecewise-linear inverse; a leading flat run keeps its last time."""
        values = self.values
        keep = np.r_[True, np.diff(values) > 0]
        run_end = int(np.argmax(values > values[0])) - 1 if values[-1] > values[0] else 0
        if run_end > 0:
            keep[0] = False
            keep[run_end] = True
        return values[keep], self.times[keep]

    def inverse(self, v):
        """Time at which the curve reaches level v."""
        v = np.asarray(v, dtype=float)
        lo, hi = self.range
        slack = DOMAIN_RTOL * max(abs(lo), abs(hi), 1.0)
        if np.any(v < lo - slack) or np.any(v > hi + slack):
            raise DomainError(f"{self.kind} curve: level outside [{lo}, {hi}]")
        if self.exact_inverse is not None:
            t = np.asarray(self.exact_inverse(v), dtype=float)
        else:
            knot_values, knot_times = self._inverse_knots()
            t = np.interp(v, knot_values, knot_times)
        return float(t) if v.ndim == 0 else t

    def flat_intervals(self) -> List[Tuple[float, float]]:
        """Maximal time intervals on which the tabulated values do not increase."""
        flat = np.diff(self.values) <= 0
        intervals = []
        i = 0
        while i < flat.size:
            if flat[i]:
                j = i
                while j + 1 < flat.size and flat[j + 1]:
                    j += 1
                intervals.append((float(self.times[i]), float(self.times[j + 1])))
                i = j + 1
            else:
                i += 1
        return intervals

    def restricted(self, t_min: float, t_max: float) -> "EntropyCurve":
        """The curve on [t_min, t_max], values shifted to start at 0 there."""
        self._check_times([t_min, t_max])
        inside = (self.times > t_min) & (self.times < t_max)
        times = np.r_[t_min, self.times[inside], t_max]
        offset = self(t_min)
        exact_fn = exact_inverse = None
        if self.exact_fn is not None:
            exact_fn = lambda t: np.asarray(self.exact_fn(t), dtype=float) - offset  # noqa: E731
        if self.exact_inverse is not None:
            exact_inverse = lambda v: self.exact_inverse(np.asarray(v, dtype=float) + offset)  # noqa: E731
        values = np.maximum.accumulate(np.asarray(self(times)) - offset)
        return EntropyCurve(times, values, self.kind, exact_fn, exact_inverse)

    def normalized(self) -> "EntropyCurve":
        """Copy scaled to end at 1."""
        total = self.range[1]
        if total <= 0:
            raise DegenerateCurveError(f"{self.kind} curve is identically zero")
        exact_fn = exact_inverse = None
        if self.exact_fn is not None:
            exact_fn = lambda t: np.asarray(self.exact_fn(t), dtype=float) / total  # noqa: E731
        if self.exact_inverse is not None:
            exact_inverse = lambda v: self.exact_inverse(np.asarray(v, dtype=float) * total)  # noqa: E731
        return EntropyCurve(self.times, self.values / total, self.kind, exact_fn, exact_inverse)

    def as_time_change(self) -> TimeChange:
        if not self.is_strictly_increasing:
            raise TimeChangeError(f"{self.kind} curve has flat regions and is not a proper time change")
        knots = self.times

        def derivative(t):
            idx = np.clip(np.searchsorted(knots, t, side="right") - 1, 0, knots.size - 2)
            return np.diff(self.values)[idx] / np.diff(knots)[idx]

        return TimeChange(
            fn=lambda t: self(t),
            derivative=derivative,
            t_min=self.t_min,
            t_max=self.t_max,
            inverse_fn=self.inverse,
            name=self.kind,
        )

    @classmethod
    def identity(cls, t_min: float, t_max: float, n_points: int = 2) -> "EntropyCurve":
        """phi(t) = t - t_min."""
        times = np.linspace(t_min, t_max, max(n_points, 2))
        return cls(
            times, times - t_min, "identity",
            exact_fn=lambda t: np.asarray(t, dtype=float) - t_min,
            exact_inverse=lambda v: np.asarray(v, dtype=float) + t_min,
        )


def entropy_rate(spec: DiffusionSpec, table: ErrorTable) -> np.ndarray:
    """dH[x0|x_t]/dt = sigma' / sigma^3 * eps^2 at the table times."""
    table.check_domain(spec)
    sigma = np.asarray(spec.sigma(table.times))
    if np.any(sigma <= 0):
        raise DomainError("Entropy rate needs sigma(t) > 0 at every table time")
    return np.asarray(spec.sigma_dot(table.times)) / sigma ** 3 * table.values


def entropy_rate_from_loss(spec: DiffusionSpec, times: Sequence[float], losses: Sequence[float],
                           loss_weights: Sequence[float]) -> np.ndarray:
    """Rate from a weighted training loss L(t) = lambda(t) s(t)^2 eps^2(t)."""
    times = spec.check_domain(np.asarray(times, dtype=float))
    loss_weights = np.asarray(loss_weights, dtype=float)
    if np.any(loss_weights <= 0):
        raise DomainError("Loss weights lambda(t) must be positive")
    s = np.asarray(spec.scale(times))
    sigma = np.asarray(spec.sigma(times))
    return np.asarray(spec.sigma_dot(times)) / (loss_weights * s ** 2 * sigma ** 3) * np.asarray(losses, dtype=float)


def _check_zero_errors(values: np.ndarray, label: str):
    """Warn about zero-error grid cells; all zero is an error."""
    zero = values == 0
    if np.all(zero):
        raise DegenerateCurveError(f"{label}: squared error is zero at every grid time")
    if np.any(zero):
        prefix = int(np.argmax(~zero))
        if prefix and not np.any(zero[prefix:]):
            logger.warning(f"{label}: zero squared error on the first {prefix} grid times; curve is flat there")
        else:
            logger.warning(f"{label}: zero squared error at {int(zero.sum())} grid times; curve has flat regions")


def _riemann_curve(spec: DiffusionSpec, times: np.ndarray, eps2: np.ndarray, kind: str) -> np.ndarray:
    """Left-endpoint sums; eps2 may carry extra trailing columns."""
    sigma = np.asarray(spec.sigma(times))
    weight = spec.sigma_dot(times) / sigma ** 2
    if kind == "entropic":
        weight = weight / sigma
    weight = np.asarray(weight).reshape(-1, *([1] * (eps2.ndim - 1)))
    increments = (weight * eps2)[:-1] * np.diff(times).reshape(-1, *([1] * (eps2.ndim - 1)))
    zero = np.zeros((1,) + eps2.shape[1:])
    return np.concatenate([zero, np.cumsum(increments, axis=0)])


def integrate_entropy(spec: DiffusionSpec, table: ErrorTable, kind: str = "rescaled") -> EntropyCurve:
    """
    Entropic (weight 1) or rescaled entropic (weight sigma) time from a table.

    phi_{i+1} = phi_i + w(t_i) * sigma'(t_i) / sigma(t_i)^3 * eps^2(t_i) * (t_{i+1} - t_i)
    """
    if kind not in ("entropic", "rescaled"):
        raise ValueError(f"kind must be 'entropic' or 'rescaled', got {kind!r}")
    table.check_domain(spec)
    _check_zero_errors(table.values[:-1], f"{kind} curve")
    values = _riemann_curve(spec, table.times, table.values, kind)
    return EntropyCurve(table.times, values, kind)


def integrated_conditional_entropy(spec: DiffusionSpec, table: ErrorTable) -> float:
    """
    H[x0|x_T] - H[x0|x_0+] as -1/2 int SNR'(t) eps^2(t) dt with SNR = 1/sigma^2,
    on the same left-endpoint rule as integrate_entropy.
    """
    table.check_domain(spec)
    sigma = np.asarray(spec.sigma(table.times))
    snr_dot = -2.0 * np.asarray(spec.sigma_dot(table.times)) / sigma ** 3
    return float(np.sum(-0.5 * snr_dot[:-1] * table.values[:-1] * np.diff(table.times)))


def gaussian_rescaled_entropy(c: float, D: int, t):
    """Rescaled entropy of N(0, c^2 I) under VE: D c arctan(t / c)."""
    if c <= 0:
        raise DomainError(f"Gaussian scale must be positive, got c={c}")
    result = D * c * np.arctan(np.asarray(t, dtype=float) / c)
    return float(result) if np.ndim(result) == 0 else result


def gaussian_rescaled_curve(c: float, D: int, t_min: float, t_max: float,
                            n_points: int = 128) -> EntropyCurve:
    """Closed-form rescaled curve anchored at t_min, with an exact inverse."""
    if not 0 <= t_min < t_max:
        raise DomainError(f"Invalid curve support [{t_min}, {t_max}]")
    offset = gaussian_rescaled_entropy(c, D, t_min)
    times = np.geomspace(t_min, t_max, n_points) if t_min > 0 else np.linspace(t_min, t_max, n_points)
    times[0], times[-1] = t_min, t_max

    def exact_fn(t):
        return D * c * np.arctan(np.asarray(t, dtype=float) / c) - offset

    def exact_inverse(v):
        return c * np.tan((np.asarray(v, dtype=float) + offset) / (D * c))

    return EntropyCurve(times, exact_fn(times), "gaussian_rescaled", exact_fn, exact_inverse)


def basis_curves(spec: DiffusionSpec, table: ErrorTable) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rescaled curve of every basis direction, each normalized to end at 1.

    Returns the (times, directions) matrix and a mask of directions kept;
    directions with identically zero error are dropped with a warning.
    """
    if table.per_basis is None:
        raise DomainError("Spectral rescaled entropy needs a per-basis error table")
    table.check_domain(spec)
    curves = _riemann_curve(spec, table.times, table.per_basis, "rescaled")
    finals = curves[-1]
    kept = finals > 0
    if not np.any(kept):
        raise DegenerateCurveError("Every basis direction has zero squared error")
    if not np.all(kept):
        logger.warning(f"Excluding {int((~kept).sum())} basis directions with zero squared error")
    normalized = np.zeros_like(curves)
    normalized[:, kept] = curves[:, kept] / finals[kept]
    return normalized, kept


def spectral_rescaled_entropy(table: ErrorTable, spec: DiffusionSpec, amplitudes) -> EntropyCurve:
    """Amplitude-weighted mean of per-direction rescaled curves, each normalized to 1."""
    amplitudes = np.asarray(amplitudes, dtype=float).ravel()
    if amplitudes.size != table.n_basis:
        raise DomainError(f"{amplitudes.size} amplitudes for {table.n_basis} basis directions")
    if np.any(amplitudes < 0) or not np.any(amplitudes > 0):
        raise DomainError("Amplitudes must be non-negative and not all zero")
    curves, kept = basis_curves(spec, table)
    weights = np.where(kept, amplitudes, 0.0)
    if weights.sum() <= 0:
        raise DegenerateCurveError("No basis direction with both error and amplitude")
    values = curves @ weights / weights.sum()
    return EntropyCurve(table.times, values - values[0], "spectral_rescaled")


def data_amplitudes(samples: np.ndarray, shape: Optional[Tuple[int, ...]] = None,
                    basis: str = "fourier", kind: str = "power") -> np.ndarray:
    """Per-direction amplitude of data samples: mean power (default) or mean modulus."""
    samples = np.asarray(samples, dtype=float)
    samples = samples.reshape(samples.shape[0], -1)
    layout = tuple(shape) if shape is not None else (samples.shape[1],)
    arr = samples.reshape(samples.shape[0], *layout)
    if basis == "fourier":
        coefficients = np.abs(np.fft.fftn(arr, axes=tuple(range(1, arr.ndim)), norm="ortho"))
    elif basis == "pixel":
        coefficients = np.abs(arr)
    else:
        raise ValueError(f"Unknown basis {basis!r}")
    if kind == "power":
        return (coefficients ** 2).mean(axis=0).ravel()
    if kind == "modulus":
        return coefficients.mean(axis=0).ravel()
    raise ValueError(f"Amplitude kind must be 'power' or 'modulus', got {kind!r}")


def _radial_frequencies(shape: Tuple[int, ...]) -> np.ndarray:
    axes = np.meshgrid(*[np.fft.fftfreq(n) * n for n in shape], indexing="ij")
    return np.sqrt(sum(a ** 2 for a in axes)).ravel()


def radial_profile(values: np.ndarray, shape: Tuple[int, ...], convention: str = "ring",
                   n_bins: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Average per-frequency values over radial frequency.

    ``ring`` groups frequencies by rounded integer radius; ``annulus`` uses
    ``n_bins`` equal-width annuli from 0 to the largest radius. Returns bin
    radii (ring radius or annulus centre) and the profile over the last axis;
    empty annuli are NaN.
    """
    if convention not in RADIAL_CONVENTIONS:
        raise ValueError(f"Unknown radial convention {convention!r}; expected one of {RADIAL_CONVENTIONS}")
    values = np.asarray(values, dtype=float)
    radius = _radial_frequencies(tuple(shape))
    if values.shape[-1] != radius.size:
        raise DomainError(f"Expected {radius.size} frequencies, got {values.shape[-1]}")

    if convention == "ring":
        labels = np.rint(radius).astype(int)
        radii = np.unique(labels).astype(float)
        index = np.searchsorted(radii, labels)
    else:
        n_bins = n_bins or max(int(np.ceil(radius.max())), 1)
        edges = np.linspace(0.0, radius.max(), n_bins + 1)
        index = np.clip(np.digitize(radius, edges) - 1, 0, n_bins - 1)
        radii = 0.5 * (edges[:-1] + edges[1:])

    counts = np.bincount(index, minlength=radii.size).astype(float)
    flat = values.reshape(-1, radius.size)
    sums = np.stack([np.bincount(index, weights=row, minlength=radii.size) for row in flat])
    with np.errstate(invalid="ignore", divide="ignore"):
        profile = np.where(counts > 0, sums / counts, np.nan)
    return radii, profile.reshape(*values.shape[:-1], radii.size)
