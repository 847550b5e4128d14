"""
Experiment configuration: one JSON document per run.

Sections mirror the pipeline (distribution -> process -> grid -> estimator ->
schedules -> sampler -> evaluation). Defaults come from ``settings``; the
resolved document is hashed and the hash names every output file.
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from diffusion.analytic import (
    Distribution,
    GaussianMixture,
    distribution_from_dict,
    load_distribution,
    standardized_gaussian_mixture,
    standardized_points,
)
from diffusion.errors import ConfigError
from diffusion.process import DiffusionSpec, ve_spec, vp_spec
from diffusion.sampler import SolverKind
from schedules.builders import edm_grid

from .settings import settings

logger = logging.getLogger(__name__)

PRESETS_FILE = Path(__file__).parent / "presets.yaml"
# Short names accepted by `reproduce` for the two mixture comparisons.
PRESET_ALIASES = {"fig3a": "discrete-mixture", "fig3b": "gaussian-mixture"}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DistributionConfig(_Section):
    type: Literal[
        "standardized_points", "standardized_gaussians", "gaussian",
        "point_mixture", "gaussian_mixture", "file",
    ] = "standardized_points"
    n_components: int = Field(15, ge=1)
    seed: int = 0
    relative_std: float = Field(0.3, gt=0)
    dim: int = Field(1, ge=1)
    c: float = Field(1.0, gt=0)
    weights: Optional[List[float]] = None
    means: Optional[List[Any]] = None
    variances: Optional[List[Any]] = None
    file: Optional[str] = None
    # Array layout of one sample for spectral tables, e.g. [8, 8].
    shape: Optional[List[int]] = None

    @model_validator(mode="after")
    def _check_fields(self):
        if self.type == "file" and not self.file:
            raise ValueError("type 'file' needs 'file'")
        if self.type in ("point_mixture", "gaussian_mixture") and (self.weights is None or self.means is None):
            raise ValueError(f"type '{self.type}' needs 'weights' and 'means'")
        if self.type == "gaussian_mixture" and self.variances is None:
            raise ValueError("type 'gaussian_mixture' needs 'variances'")
        return self

    def build(self) -> Distribution:
        if self.type == "standardized_points":
            return standardized_points(self.n_components, self.seed, self.dim)
        if self.type == "standardized_gaussians":
            return standardized_gaussian_mixture(self.n_components, self.seed, self.relative_std, self.dim)
        if self.type == "gaussian":
            return GaussianMixture.isotropic(self.c, self.dim)
        if self.type == "file":
            return load_distribution(self.file)
        return distribution_from_dict(
            {"type": self.type, "weights": self.weights, "means": self.means, "variances": self.variances}
        )


class ProcessConfig(_Section):
    kind: Literal["ve", "vp"] = "ve"
    t_min: Optional[float] = Field(None, gt=0)
    t_max: Optional[float] = Field(None, gt=0)
    beta_min: float = 0.1
    beta_max: float = 20.0

    def build(self) -> DiffusionSpec:
        if self.kind == "vp":
            spec = vp_spec(self.beta_min, self.beta_max, self.t_min or 1e-3, self.t_max or 1.0)
        else:
            spec = ve_spec(self.t_min or settings.sigma_min, self.t_max or settings.sigma_max)
        return spec.validate()


class GridConfig(_Section):
    spacing: Literal["edm", "uniform"] = "edm"
    size: int = Field(default_factory=lambda: settings.grid_size, ge=2)
    sigma_min: float = Field(default_factory=lambda: settings.sigma_min, gt=0)
    sigma_max: float = Field(default_factory=lambda: settings.sigma_max, gt=0)
    rho: float = Field(default_factory=lambda: settings.rho, gt=0)


class EstimatorConfig(_Section):
    route: Literal["exact", "mc"] = "exact"
    samples: int = Field(default_factory=lambda: settings.mc_samples, ge=1)
    quadrature_points: int = Field(default_factory=lambda: settings.quadrature_points, ge=2)
    curve: Literal["entropic", "rescaled"] = "rescaled"
    spectral: bool = False
    basis: Literal["fourier", "pixel"] = "fourier"
    amplitude: Literal["power", "modulus"] = "power"
    amplitude_samples: int = Field(4096, ge=1)
    radial: Optional[Literal["ring", "annulus"]] = None
    radial_bins: Optional[int] = Field(None, ge=1)
    information_transfer: bool = False


class BuilderConfig(_Section):
    name: Literal["entropic", "rescaled", "spectral_rescaled", "edm", "uniform", "gaussian_optimal", "curve"]
    label: Optional[str] = None
    rho: Optional[float] = Field(None, gt=0)
    c: Optional[float] = Field(None, gt=0)
    curve_file: Optional[str] = None

    @model_validator(mode="after")
    def _check_fields(self):
        if self.name == "curve" and not self.curve_file:
            raise ValueError("builder 'curve' needs 'curve_file'")
        return self

    @property
    def display_name(self) -> str:
        return self.label or self.name


class SchedulesConfig(_Section):
    builders: List[BuilderConfig] = Field(
        default_factory=lambda: [BuilderConfig(name="rescaled"), BuilderConfig(name="edm"),
                                 BuilderConfig(name="uniform")]
    )
    nfe: List[int] = Field(default_factory=lambda: [4, 8, 16, 32, 64])
    t_min: Optional[float] = Field(None, gt=0)
    t_max: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _check_nfe(self):
        if not self.nfe or min(self.nfe) < 2:
            raise ValueError("every NFE must be at least 2")
        return self


class SamplerConfig(_Section):
    kinds: List[SolverKind] = Field(default_factory=lambda: [SolverKind.DDIM_STOCHASTIC])
    final_step_to_mean: bool = True
    paths: int = Field(default_factory=lambda: settings.kl_paths, ge=1)


class EvaluationConfig(_Section):
    repeats: int = Field(default_factory=lambda: settings.kl_repeats, ge=1)
    paths: int = Field(default_factory=lambda: settings.kl_paths, ge=1)
    eps: Optional[float] = Field(None, gt=0)
    bandwidth: float = Field(default_factory=lambda: settings.kde_bandwidth, gt=0)
    n_mc: int = Field(default_factory=lambda: settings.kde_mc, ge=1)
    direction: Literal["forward", "reverse"] = "forward"


class ExperimentConfig(_Section):
    distribution: DistributionConfig = Field(default_factory=DistributionConfig)
    process: ProcessConfig = Field(default_factory=ProcessConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    schedules: SchedulesConfig = Field(default_factory=SchedulesConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    seed: Optional[int] = None
    output_dir: str = Field(default_factory=lambda: settings.output_dir)

    def resolved(self) -> Dict:
        return self.model_dump(mode="json")

    def require_seed(self, command: str) -> int:
        if self.seed is None:
            raise ConfigError(f"'{command}' is stochastic: pass --seed or set 'seed' in the config")
        return self.seed


def config_hash(config: ExperimentConfig) -> str:
    """First 12 hex digits of the SHA-256 of the canonical resolved config."""
    canonical = json.dumps(config.resolved(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def _validation_message(error: ValidationError) -> str:
    parts = []
    for err in error.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{path}: {err['msg']}")
    return "; ".join(parts)


def config_from_dict(data: Dict, source: str = "config") -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"{source}: {_validation_message(e)}") from e


def load_config(path: Optional[Union[str, Path]] = None) -> ExperimentConfig:
    """Read a JSON config; no path gives the defaults."""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    return config_from_dict(data, str(path))


def load_presets() -> Dict[str, Dict]:
    with open(PRESETS_FILE) as f:
        return yaml.safe_load(f) or {}


def load_preset(name: str) -> ExperimentConfig:
    name = PRESET_ALIASES.get(name, name)
    presets = load_presets()
    if name not in presets:
        raise ConfigError(f"Unknown preset {name!r}; available: {', '.join(sorted(presets))}")
    preset = dict(presets[name])
    preset.pop("description", None)
    return config_from_dict(preset, f"preset {name}")


def apply_overrides(config: ExperimentConfig, overrides: Dict[str, Any]) -> ExperimentConfig:
    """
    Set dotted fields, e.g. {"seed": 3, "evaluation.repeats": 10}; None
    values are skipped. The result is validated again.
    """
    data = config.resolved()
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = data
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return config_from_dict(data, "command line")


def build_grid(config: ExperimentConfig, spec: DiffusionSpec) -> np.ndarray:
    """Ascending estimation grid inside the process domain."""
    grid = config.grid
    if grid.spacing == "uniform":
        times = np.linspace(spec.t_min, spec.t_max, grid.size)
        times[0], times[-1] = spec.t_min, spec.t_max
        return times
    lo, hi = spec.sigma_range
    sigma_min, sigma_max = max(grid.sigma_min, lo), min(grid.sigma_max, hi)
    if (sigma_min, sigma_max) != (grid.sigma_min, grid.sigma_max):
        logger.info(f"Grid sigma range clipped to [{sigma_min:.6g}, {sigma_max:.6g}] for process {spec.name}")
    return edm_grid(grid.size, sigma_min, sigma_max, grid.rho, spec)
