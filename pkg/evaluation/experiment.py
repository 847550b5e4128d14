"""
KL-versus-NFE experiments: sample under several schedules and score each run.

Repeat r of every (schedule, solver, NFE) cell uses the same sampling seed,
derive_seed(seed, r), so schedules are compared on common random numbers.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from config import settings
from diffusion.analytic import Distribution, GaussianMixture, PointMixture
from diffusion.errors import DomainError, UnsupportedDistributionError
from diffusion.process import DiffusionSpec
from diffusion.sampler import SolverKind, generate
from diffusion.streams import derive_seed, map_indexed
from schedules.builders import ScheduleBuilder

from .kl import binned_kl, default_bin_half_width, kde_kl

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KLScore:
    """One KL estimate; the bin counts stay zero for KDE estimates."""

    value: float
    empty_bins: int = 0
    out_of_support: int = 0


def _summarize(values: np.ndarray):
    if not np.all(np.isfinite(values)):
        return np.inf, np.inf
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return float(values.mean()), std


@dataclass(frozen=True)
class KLEntry:
    """
    KL over the repeats of one NFE. kl_mean and kl_std are +inf as soon as
    one repeat is; the finite_* fields summarise the finite repeats alone.
    """

    nfe: int
    kl_mean: float
    kl_std: float
    repeats: int
    paths: int
    seed: int
    values: np.ndarray = field(repr=False)
    empty_bins: Optional[np.ndarray] = field(default=None, repr=False)
    out_of_support: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def from_scores(cls, nfe: int, scores: Sequence[KLScore], paths: int, seed: int) -> "KLEntry":
        values = np.array([s.value for s in scores], dtype=float)
        mean, std = _summarize(values)
        return cls(int(nfe), mean, std, len(scores), int(paths), int(seed), values,
                   np.array([s.empty_bins for s in scores]), np.array([s.out_of_support for s in scores]))

    @property
    def kl_stderr(self) -> float:
        return self.kl_std / np.sqrt(self.repeats) if self.repeats > 1 else np.nan

    @property
    def finite_repeats(self) -> int:
        return int(np.isfinite(self.values).sum())

    @property
    def finite_mean(self) -> float:
        finite = self.values[np.isfinite(self.values)]
        return float(finite.mean()) if finite.size else np.nan

    @property
    def finite_std(self) -> float:
        finite = self.values[np.isfinite(self.values)]
        if finite.size == 0:
            return np.nan
        return float(finite.std(ddof=1)) if finite.size > 1 else 0.0

    @property
    def mean_empty_bins(self) -> float:
        return float(np.mean(self.empty_bins)) if self.empty_bins is not None else 0.0

    @property
    def mean_out_of_support(self) -> float:
        return float(np.mean(self.out_of_support)) if self.out_of_support is not None else 0.0

    def summary(self) -> str:
        if self.finite_repeats == self.repeats:
            return f"KL={self.kl_mean:.5f} (std {self.kl_std:.5f})"
        return (f"KL=inf in {self.repeats - self.finite_repeats}/{self.repeats} repeats; "
                f"finite KL={self.finite_mean:.5f}, empty bins {self.mean_empty_bins:.2f}, "
                f"out of support {self.mean_out_of_support:.1f}")


@dataclass(frozen=True)
class KLReport:
    """KL against NFE for one schedule family and solver."""

    schedule: str
    solver: str
    entries: List[KLEntry]
    metadata: Dict = field(default_factory=dict)

    def entry(self, nfe: int) -> KLEntry:
        for e in self.entries:
            if e.nfe == nfe:
                return e
        raise KeyError(f"No entry for NFE {nfe} in {self.schedule}/{self.solver}")

    def rows(self) -> List[Dict]:
        return [
            {
                "schedule": self.schedule,
                "solver": self.solver,
                "nfe": e.nfe,
                "kl_mean": e.kl_mean,
                "kl_std": e.kl_std,
                "repeats": e.repeats,
                "paths": e.paths,
                "seed": e.seed,
                "finite_repeats": e.finite_repeats,
                "finite_mean": e.finite_mean,
                "finite_std": e.finite_std,
                "mean_empty_bins": e.mean_empty_bins,
                "mean_out_of_support": e.mean_out_of_support,
            }
            for e in self.entries
        ]


def evaluate_kl(samples: np.ndarray, dist: Distribution, rng_seed: int, eps: Optional[float] = None,
                bandwidth: Optional[float] = None, n_mc: Optional[int] = None,
                direction: str = "forward") -> KLScore:
    """Binned KL with its bin counts for discrete targets, KDE KL for Gaussian mixtures."""
    if isinstance(dist, PointMixture):
        binned = binned_kl(samples, dist, eps, direction)
        return KLScore(binned.value, binned.empty_bins, binned.out_of_support)
    if isinstance(dist, GaussianMixture):
        return KLScore(kde_kl(samples, dist, bandwidth, n_mc, rng_seed, direction))
    raise UnsupportedDistributionError(f"No KL estimator for {type(dist).__name__}")


def kl_experiment(spec: DiffusionSpec, dist: Distribution, builders: Sequence[ScheduleBuilder],
                  kinds: Sequence[SolverKind], nfe_list: Sequence[int], repeats: Optional[int] = None,
                  paths: Optional[int] = None, rng_seed: Optional[int] = None, final_step_to_mean: bool = True,
                  eps: Optional[float] = None, bandwidth: Optional[float] = None, n_mc: Optional[int] = None,
                  direction: str = "forward", workers: Optional[int] = None) -> List[KLReport]:
    """
    For each schedule builder, solver kind and NFE: run generate ``repeats``
    times with ``paths`` paths each and report mean and std of the KL.

    With the final step to the mean an NFE budget n uses n - 1 schedule steps.
    """
    if rng_seed is None:
        raise ValueError("kl_experiment needs a seed")
    repeats = settings.kl_repeats if repeats is None else int(repeats)
    paths = settings.kl_paths if paths is None else int(paths)
    if repeats < 1 or paths < 1:
        raise ValueError(f"Need at least one repeat and one path, got R={repeats}, P={paths}")
    denoiser = dist.denoiser()
    if isinstance(dist, PointMixture) and eps is None:
        eps = default_bin_half_width(dist)
    reports = []

    for builder in builders:
        for kind in kinds:
            kind = SolverKind(kind)
            entries = []
            for nfe in nfe_list:
                n_steps = int(nfe) - int(final_step_to_mean)
                if n_steps < 1:
                    raise DomainError(f"NFE {nfe} leaves no sampling steps")
                schedule = builder.build(n_steps)

                def one_repeat(r: int) -> KLScore:
                    samples = generate(spec, schedule, denoiser, kind, paths, derive_seed(rng_seed, r),
                                       dim=dist.dim, final_step_to_mean=final_step_to_mean, workers=1)
                    return evaluate_kl(samples, dist, derive_seed(rng_seed, r, 1), eps, bandwidth, n_mc, direction)

                entry = KLEntry.from_scores(nfe, map_indexed(one_repeat, repeats, workers), paths, rng_seed)
                entries.append(entry)
                logger.info(f"{builder.name:>18} {kind.value:>18} NFE={nfe:>3}: {entry.summary()}")

            reports.append(KLReport(
                schedule=builder.name,
                solver=kind.value,
                entries=entries,
                metadata={
                    "distribution": dist.describe(),
                    "direction": direction,
                    "eps": eps,
                    "bandwidth": bandwidth,
                    "final_step_to_mean": final_step_to_mean,
                },
            ))
    return reports
