#!/usr/bin/env python3
"""
Entropic Time - sampling schedules from the conditional entropy of the data

This script:
1. Estimates the squared denoising error eps^2(t) on a grid (exact or Monte-Carlo)
2. Integrates it into an entropic or rescaled entropic time curve
3. Builds sampling schedules by inverting the curve at equal spacing
4. Samples with DDIM and scores the samples by KL against the data distribution

Every command reads an optional JSON config, applies its flags on top and
writes config_<hash>.json next to its outputs; <hash> names every file.

Usage:
    python scripts/entropic_time.py entropy --config run.json
    python scripts/entropic_time.py entropy --route mc --seed 1 --spectral
    python scripts/entropic_time.py schedule --curve outputs/curve_<hash>.csv --steps 16
    python scripts/entropic_time.py schedule --builder edm --steps 16
    python scripts/entropic_time.py sample --schedule outputs/schedule_<...>.json --seed 1
    python scripts/entropic_time.py eval --samples outputs/samples_<...>.csv --seed 1
    python scripts/entropic_time.py eval --preset discrete-mixture --seed 1 --repeats 10
    python scripts/entropic_time.py import-errors losses.csv --format loss
    python scripts/entropic_time.py reproduce discrete-mixture --seed 1
    python scripts/entropic_time.py reproduce fig3a --seed 1 --repeats 10
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from dotenv import load_dotenv

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

load_dotenv()

from config import settings

# Setup logging
LOG_DIR = Path(settings.log_dir)
LOG_DIR.mkdir(parents=True, exist_ok=True)
logging.basicConfig(
    level=getattr(logging, settings.log_level),
    format='%(asctime)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler(LOG_DIR / "entropic_time.log"),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger(__name__)

# Import project modules
from config.experiment import (
    PRESET_ALIASES,
    BuilderConfig,
    ExperimentConfig,
    apply_overrides,
    build_grid,
    config_hash,
    load_config,
    load_preset,
)
from diffusion.analytic import Distribution, GaussianMixture, sample_data
from diffusion.errors import ConfigError, EntropicTimeError
from diffusion.process import DiffusionSpec
from diffusion.sampler import SolverKind, count_nfe, generate
from diffusion.streams import derive_seed
from entropy.curves import (
    EntropyCurve,
    basis_curves,
    data_amplitudes,
    integrate_entropy,
    radial_profile,
    spectral_rescaled_entropy,
)
from entropy.diagnostics import exact_information_transfer, information_transfer
from entropy.tables import (
    ErrorTable,
    error_table_from_loss,
    estimate_error_table,
    exact_error_table,
    spectral_error_table,
)
from evaluation.experiment import KLEntry, KLReport, evaluate_kl, kl_experiment
from schedules.builders import (
    Schedule,
    ScheduleBuilder,
    edm_schedule,
    entropic_schedule,
    gaussian_optimal_schedule,
    uniform_schedule,
)
from storage.artifacts import (
    ArtifactStore,
    read_curve,
    read_error_table,
    read_loss_table,
    read_samples,
    read_schedule,
)
from version import VERSION_FULL

PRESETS = ("discrete-mixture", "gaussian-mixture", "gaussian-optimal", *PRESET_ALIASES)

# Seed offsets for the streams a command derives from its --seed.
AMPLITUDE_STREAM = 2
TRANSFER_STREAM = 3


# =============================================================================
# Pipeline pieces
# =============================================================================

class EntropyResult:
    """Error table, curve and the optional per-direction exports of one entropy run."""

    def __init__(self, table: ErrorTable, curve: EntropyCurve):
        self.table = table
        self.curve = curve
        self.columns: Dict[str, Dict[str, np.ndarray]] = {}


def _gaussian_scale(dist: Distribution) -> float:
    """c for N(mu, c^2 I) data; other distributions have no closed-form schedule."""
    if isinstance(dist, GaussianMixture) and dist.n_components == 1:
        variances = dist.component_variances[0]
        if np.allclose(variances, variances[0]):
            return float(np.sqrt(variances[0]))
    raise ConfigError("gaussian_optimal needs isotropic single-Gaussian data or an explicit 'c'")


def compute_entropy(config: ExperimentConfig, spec: DiffusionSpec, dist: Distribution) -> EntropyResult:
    """Error table and entropy curve for the configured route."""
    est = config.estimator
    grid = build_grid(config, spec)
    shape = tuple(config.distribution.shape) if config.distribution.shape else None

    if est.spectral:
        if est.route != "mc":
            raise ConfigError("estimator.spectral needs estimator.route = 'mc'")
        seed = config.require_seed("entropy --spectral")
        table = spectral_error_table(dist.denoiser(), spec, dist.sampler(), grid, est.samples, seed,
                                     shape=shape, basis=est.basis)
        data = sample_data(dist, est.amplitude_samples, derive_seed(seed, AMPLITUDE_STREAM))
        amplitudes = data_amplitudes(data, shape, est.basis, est.amplitude)
        result = EntropyResult(table, spectral_rescaled_entropy(table, spec, amplitudes))
        curves, kept = basis_curves(spec, table)
        result.columns["basis_curves"] = {f"b{b}": curves[:, b] for b in np.flatnonzero(kept)}
        if est.radial:
            radii, profile = radial_profile(curves, shape or (table.n_basis,), est.radial, est.radial_bins)
            result.columns[f"radial_{est.radial}"] = {
                f"{est.radial}_r{r:g}": profile[:, i] for i, r in enumerate(radii)
            }
    else:
        if est.route == "mc":
            seed = config.require_seed("entropy --route mc")
            table = estimate_error_table(dist.denoiser(), spec, dist.sampler(), grid, est.samples, seed)
        else:
            table = exact_error_table(dist, spec, grid, est.quadrature_points, est.samples,
                                      config.seed if config.seed is not None else 0)
        result = EntropyResult(table, integrate_entropy(spec, table, est.curve))

    if est.information_transfer:
        if dist.dim == 1:
            values = exact_information_transfer(dist, spec, grid, est.quadrature_points)
            result.columns["information_transfer"] = {"transfer": values}
        else:
            seed = config.require_seed("entropy --information-transfer")
            values, stderr = information_transfer(dist, spec, grid, est.samples,
                                                  derive_seed(seed, TRANSFER_STREAM))
            result.columns["information_transfer"] = {"transfer": values, "stderr": stderr}

    logger.info(f"{result.curve.kind} curve: {result.table.times.size} times, "
                f"range {result.curve.range[1] - result.curve.range[0]:.6g} "
                f"({result.table.provenance.get('method')})")
    return result


def _time_bounds(config: ExperimentConfig, spec: DiffusionSpec, curve: Optional[EntropyCurve] = None):
    lo = config.schedules.t_min or spec.t_min
    hi = config.schedules.t_max or spec.t_max
    if curve is not None:
        lo, hi = max(lo, curve.t_min), min(hi, curve.t_max)
    return lo, hi


def make_builder(builder: BuilderConfig, config: ExperimentConfig, spec: DiffusionSpec,
                 dist: Optional[Distribution] = None,
                 entropy: Optional[EntropyResult] = None) -> ScheduleBuilder:
    """Turn one configured schedule family into a ScheduleBuilder on ``spec``."""
    name = builder.display_name

    if builder.name in ("entropic", "rescaled", "spectral_rescaled", "curve"):
        if builder.name == "curve":
            curve = read_curve(builder.curve_file)
        elif entropy is None:
            raise ConfigError(f"builder '{builder.name}' needs an entropy curve")
        elif builder.name == "spectral_rescaled":
            if entropy.curve.kind != "spectral_rescaled":
                raise ConfigError("builder 'spectral_rescaled' needs estimator.spectral = true")
            curve = entropy.curve
        elif entropy.curve.kind == builder.name:
            curve = entropy.curve
        else:
            curve = integrate_entropy(spec, entropy.table, builder.name)
        lo, hi = _time_bounds(config, spec, curve)
        return ScheduleBuilder(name, lambda n: entropic_schedule(curve, lo, hi, n, spec, label=name))

    lo, hi = _time_bounds(config, spec)
    if builder.name == "edm":
        rho = builder.rho or config.grid.rho
        sigma_lo, sigma_hi = float(spec.sigma(lo)), float(spec.sigma(hi))
        return ScheduleBuilder(name, lambda n: edm_schedule(n, sigma_lo, sigma_hi, rho, spec))
    if builder.name == "uniform":
        return ScheduleBuilder(name, lambda n: uniform_schedule(lo, hi, n, spec))
    c = builder.c or _gaussian_scale(dist)
    return ScheduleBuilder(name, lambda n: gaussian_optimal_schedule(c, lo, hi, n, spec))


def fit_schedule(schedule: Schedule, spec: DiffusionSpec) -> Schedule:
    """The schedule itself when built for ``spec``, else its noise levels moved onto ``spec``."""
    times = schedule.times
    if times.min() >= spec.t_min and times.max() <= spec.t_max:
        expected = np.asarray(spec.sigma(times))
        if np.all(np.abs(expected - schedule.sigmas) <= 1e-9 * np.abs(expected)):
            return schedule
    logger.info(f"Schedule {schedule.label!r} re-matched onto process {spec.name}")
    return schedule.matched(spec)


# =============================================================================
# Commands
# =============================================================================

def cmd_entropy(config: ExperimentConfig, store: ArtifactStore) -> Dict[str, Path]:
    """Error table and curve files (plus per-direction and transfer exports)."""
    spec = config.process.build()
    dist = config.distribution.build()
    result = compute_entropy(config, spec, dist)
    paths = {
        "errors": store.write_error_table(result.table),
        "curve": store.write_curve(result.curve),
    }
    for stem, columns in result.columns.items():
        paths[stem] = store.write_columns(stem, result.table.times, columns)
    return paths


def cmd_schedule(config: ExperimentConfig, store: ArtifactStore, steps: int,
                 curve_path: Optional[str] = None, builder: Optional[str] = None,
                 c: Optional[float] = None, rho: Optional[float] = None) -> Path:
    """One schedule JSON from a curve file or a named builder."""
    if (curve_path is None) == (builder is None):
        raise ConfigError("schedule needs exactly one of --curve or --builder")
    spec = config.process.build()
    if curve_path is not None:
        builder_config = BuilderConfig(name="curve", curve_file=str(curve_path), label=read_curve(curve_path).kind)
    else:
        builder_config = BuilderConfig(name=builder, c=c, rho=rho)
    dist = config.distribution.build() if builder == "gaussian_optimal" and c is None else None
    schedule = make_builder(builder_config, config, spec, dist).build(steps)
    logger.info(f"{schedule.label}: {schedule.steps} steps, sigma {schedule.sigmas[-1]:.6g} .. {schedule.sigmas[0]:.6g}")
    return store.write_schedule(schedule, stem=f"schedule_{schedule.label}_{schedule.steps}")


def cmd_sample(config: ExperimentConfig, store: ArtifactStore, schedule_path: str,
               kind: Optional[str] = None, paths: Optional[int] = None, repeat: int = 0) -> Path:
    """
    Samples under a schedule file. Repeat r draws with derive_seed(seed, r), the
    stream kl_experiment uses for its repeat r.
    """
    seed = config.require_seed("sample")
    spec = config.process.build()
    dist = config.distribution.build()
    schedule = fit_schedule(read_schedule(schedule_path), spec)
    kind = SolverKind(kind) if kind else config.sampler.kinds[0]
    n_paths = paths or config.sampler.paths
    final = config.sampler.final_step_to_mean
    samples = generate(spec, schedule, dist.denoiser(), kind, n_paths, derive_seed(seed, repeat),
                       dim=dist.dim, final_step_to_mean=final)
    sidecar = {
        "schedule": schedule.label,
        "steps": schedule.steps,
        "nfe": count_nfe(schedule, final),
        "solver": kind.value,
        "paths": n_paths,
        "seed": seed,
        "repeat": repeat,
        "final_step_to_mean": final,
        "distribution": dist.describe(),
    }
    stem = f"samples_{schedule.label}_{kind.value}_{sidecar['nfe']}_r{repeat}"
    return store.write_samples(samples, sidecar, stem=stem)


def _report_from_samples(config: ExperimentConfig, samples_path: str) -> KLReport:
    samples, sidecar = read_samples(samples_path)
    dist = config.distribution.build()
    seed = int(sidecar["seed"]) if "seed" in sidecar else config.require_seed("eval")
    repeat = int(sidecar.get("repeat", 0))
    ev = config.evaluation
    score = evaluate_kl(samples, dist, derive_seed(seed, repeat, 1), ev.eps, ev.bandwidth, ev.n_mc, ev.direction)
    entry = KLEntry.from_scores(int(sidecar.get("nfe", 0)), [score], samples.shape[0], seed)
    return KLReport(
        schedule=sidecar.get("schedule", "unknown"),
        solver=sidecar.get("solver", "unknown"),
        entries=[entry],
        metadata={"distribution": dist.describe(), "direction": ev.direction, "eps": ev.eps,
                  "bandwidth": ev.bandwidth, "source": str(samples_path), "repeat": repeat},
    )


def run_experiment(config: ExperimentConfig) -> Dict:
    """Entropy curve, schedule builders and the KL-vs-NFE reports."""
    seed = config.require_seed("eval")
    spec = config.process.build()
    dist = config.distribution.build()
    needs_curve = any(b.name in ("entropic", "rescaled", "spectral_rescaled") for b in config.schedules.builders)
    entropy = compute_entropy(config, spec, dist) if needs_curve else None
    builders = [make_builder(b, config, spec, dist, entropy) for b in config.schedules.builders]
    ev = config.evaluation
    reports = kl_experiment(
        spec, dist, builders, config.sampler.kinds, config.schedules.nfe,
        repeats=ev.repeats, paths=ev.paths, rng_seed=seed,
        final_step_to_mean=config.sampler.final_step_to_mean,
        eps=ev.eps, bandwidth=ev.bandwidth, n_mc=ev.n_mc, direction=ev.direction,
    )
    return {"entropy": entropy, "reports": reports}


def cmd_eval(config: ExperimentConfig, store: ArtifactStore, samples_path: Optional[str] = None) -> Path:
    """KL report for a samples file, or the full configured experiment."""
    if samples_path is not None:
        reports = [_report_from_samples(config, samples_path)]
    else:
        outcome = run_experiment(config)
        if outcome["entropy"] is not None:
            store.write_error_table(outcome["entropy"].table)
            store.write_curve(outcome["entropy"].curve)
        reports = outcome["reports"]
    _log_reports(reports)
    return store.write_kl_reports(reports)


def cmd_import_errors(config: ExperimentConfig, store: ArtifactStore, csv_path: str,
                      fmt: str = "eps2") -> ErrorTable:
    """Validated ErrorTable from an eps^2 or training-loss CSV; writes the table and its curve."""
    spec = config.process.build()
    if fmt == "eps2":
        table = read_error_table(csv_path)
    elif fmt == "loss":
        times, losses, weights = read_loss_table(csv_path)
        try:
            table = error_table_from_loss(spec, times, losses, weights)
        except EntropicTimeError as e:
            raise ConfigError(f"{csv_path}: {e}") from e
    else:
        raise ConfigError(f"Unknown error-table format {fmt!r}; expected eps2 or loss")
    table.check_domain(spec)
    store.write_error_table(table, stem="errors_imported")
    store.write_curve(integrate_entropy(spec, table, config.estimator.curve), stem="curve_imported")
    logger.info(f"Imported {table.times.size} rows from {csv_path} ({fmt})")
    return table


def _log_reports(reports: List[KLReport]):
    logger.info("-" * 60)
    for report in reports:
        for entry in report.entries:
            logger.info(f"{report.schedule:>18} {report.solver:>18} NFE={entry.nfe:>3} {entry.summary()}")
    logger.info("-" * 60)


# =============================================================================
# Command line
# =============================================================================

def resolve_config(args) -> ExperimentConfig:
    """Config file or preset, with the command-line flags applied on top."""
    if getattr(args, "preset", None) and args.config:
        raise ConfigError("Pass either --config or a preset, not both")
    config = load_preset(args.preset) if getattr(args, "preset", None) else load_config(args.config)
    overrides = {
        "seed": args.seed,
        "output_dir": args.output_dir,
        "grid.size": getattr(args, "grid_size", None),
        "estimator.route": getattr(args, "route", None),
        "estimator.samples": getattr(args, "samples_per_time", None),
        "estimator.curve": getattr(args, "curve_kind", None),
        "estimator.basis": getattr(args, "basis", None),
        "estimator.radial": getattr(args, "radial", None),
        "evaluation.repeats": getattr(args, "repeats", None),
        "evaluation.paths": getattr(args, "paths", None),
        "evaluation.direction": getattr(args, "direction", None),
        "evaluation.eps": getattr(args, "eps", None),
        "evaluation.bandwidth": getattr(args, "bandwidth", None),
        "schedules.nfe": getattr(args, "nfe", None),
        "schedules.t_min": getattr(args, "t_min", None),
        "schedules.t_max": getattr(args, "t_max", None),
    }
    if args.command == "sample":
        overrides["sampler.paths"] = overrides.pop("evaluation.paths")
        overrides["sampler.kinds"] = [args.solver] if args.solver else None
    if getattr(args, "spectral", False):
        overrides["estimator.spectral"] = True
        overrides["estimator.route"] = "mc"
    if getattr(args, "information_transfer", False):
        overrides["estimator.information_transfer"] = True
    return apply_overrides(config, overrides)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON experiment config')
    common.add_argument('--seed', type=int, help='Seed for every stochastic step (required for them)')
    common.add_argument('--output-dir', help=f'Output directory (default: {settings.output_dir})')
    common.add_argument('--workers', type=int, help='Threads for per-time and per-block work')

    parser = argparse.ArgumentParser(description='Entropic time schedules for diffusion sampling')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('entropy', parents=[common], help='Estimate eps^2 and the entropy curve')
    p.add_argument('--route', choices=['exact', 'mc'])
    p.add_argument('--samples-per-time', type=int, help='Monte-Carlo samples per grid time')
    p.add_argument('--grid-size', type=int)
    p.add_argument('--curve-kind', choices=['entropic', 'rescaled'])
    p.add_argument('--spectral', action='store_true', help='Per-frequency table and spectral curve')
    p.add_argument('--basis', choices=['fourier', 'pixel'])
    p.add_argument('--radial', choices=['ring', 'annulus'], help='Also export radial profiles')
    p.add_argument('--information-transfer', action='store_true', help='Also export T(t) (discrete data)')

    p = sub.add_parser('schedule', parents=[common], help='Build a schedule')
    p.add_argument('--curve', help='Curve CSV to invert')
    p.add_argument('--builder', choices=['edm', 'uniform', 'gaussian_optimal'])
    p.add_argument('--steps', type=int, required=True)
    p.add_argument('--t-min', type=float)
    p.add_argument('--t-max', type=float)
    p.add_argument('--c', type=float, help='Gaussian data scale for gaussian_optimal')
    p.add_argument('--rho', type=float)

    p = sub.add_parser('sample', parents=[common], help='Sample under a schedule file')
    p.add_argument('--schedule', required=True)
    p.add_argument('--solver', choices=[k.value for k in SolverKind])
    p.add_argument('--paths', type=int)
    p.add_argument('--repeat', type=int, default=0, help='Repeat index (stream derive_seed(seed, repeat))')

    for name, help_text in (('eval', 'KL evaluation'), ('reproduce', 'Run a reproduction preset')):
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == 'eval':
            p.add_argument('--samples', help='Samples CSV to score (default: run the full experiment)')
            p.add_argument('--preset', choices=PRESETS)
        else:
            p.add_argument('preset', choices=PRESETS)
        p.add_argument('--repeats', type=int)
        p.add_argument('--paths', type=int)
        p.add_argument('--nfe', type=int, nargs='+')
        p.add_argument('--direction', choices=['forward', 'reverse'])
        p.add_argument('--eps', type=float, help='Bin half-width for discrete data')
        p.add_argument('--bandwidth', type=float, help='KDE bandwidth for continuous data')

    p = sub.add_parser('import-errors', parents=[common], help='Import an eps^2 or loss table')
    p.add_argument('csv')
    p.add_argument('--format', choices=['eps2', 'loss'], default='eps2')
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers:
        settings.workers = args.workers

    logger.info("=" * 60)
    logger.info(f"entropic_time {args.command} (v{VERSION_FULL})")
    logger.info("=" * 60)

    try:
        config = resolve_config(args)
        digest = config_hash(config)
        store = ArtifactStore(config.output_dir, digest)
        store.write_config(config.resolved())
        logger.info(f"Config hash: {digest}")

        if args.command == 'entropy':
            outputs = cmd_entropy(config, store)
            summary = ", ".join(str(p) for p in outputs.values())
        elif args.command == 'schedule':
            summary = cmd_schedule(config, store, args.steps, args.curve, args.builder, args.c, args.rho)
        elif args.command == 'sample':
            summary = cmd_sample(config, store, args.schedule, repeat=args.repeat)
        elif args.command in ('eval', 'reproduce'):
            summary = cmd_eval(config, store, getattr(args, 'samples', None))
        else:
            table = cmd_import_errors(config, store, args.csv, args.format)
            summary = f"{table.times.size} rows"
    except EntropicTimeError as e:
        logger.error(f"❌ {e}")
        return 1

    logger.info(f"✅ Done: {summary}")
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
