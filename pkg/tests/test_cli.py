#!/usr/bin/env python3
"""
Tests for experiment configs and the entropic_time commands

Commands run against a temporary output directory; every file they write
must be reproducible from the config and the seed.
"""
import json
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from config.experiment import (
    ExperimentConfig,
    apply_overrides,
    build_grid,
    config_from_dict,
    config_hash,
    load_config,
    load_preset,
)
from config.settings import Settings, validate_settings
from diffusion.analytic import GaussianMixture
from diffusion.errors import ConfigError, EntropicTimeError
from diffusion.process import ve_spec
from diffusion.sampler import SolverKind
from entropy.curves import gaussian_rescaled_curve, integrate_entropy
from entropy.tables import exact_error_table
from evaluation.experiment import kl_experiment
from schedules.builders import (
    ScheduleBuilder,
    edm_schedule,
    gaussian_optimal_schedule,
    uniform_schedule,
)
from scripts.entropic_time import (
    cmd_entropy,
    cmd_eval,
    cmd_import_errors,
    cmd_sample,
    cmd_schedule,
    run,
)
from storage.artifacts import ArtifactStore, read_curve, read_error_table, read_samples, read_schedule


@pytest.fixture
def store(tmp_path):
    return ArtifactStore(str(tmp_path), "0123456789ab")


def write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data))
    return path


# =============================================================================
# TESTS FOR: load_config / apply_overrides / config_hash (experiment.py)
# =============================================================================

class TestExperimentConfig:
    """JSON configs validated by pydantic."""

    def test_defaults(self):
        config = load_config()
        assert config.process.kind == "ve"
        assert config.seed is None
        assert [b.name for b in config.schedules.builders] == ["rescaled", "edm", "uniform"]
        assert config.sampler.kinds == [SolverKind.DDIM_STOCHASTIC]

    def test_from_file(self, tmp_path):
        path = write_json(tmp_path / "run.json", {"seed": 5, "grid": {"size": 16}})
        config = load_config(path)
        assert config.seed == 5
        assert config.grid.size == 16

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "missing.json")

    def test_syntax_error_position(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text('{\n  "seed": 1,\n}\n')
        with pytest.raises(ConfigError, match="line 3, column 1"):
            load_config(path)

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="sede"):
            config_from_dict({"sede": 1})

    def test_error_names_field_path(self):
        with pytest.raises(ConfigError, match="grid.size"):
            config_from_dict({"grid": {"size": 1}})

    def test_nfe_must_leave_a_step(self):
        with pytest.raises(ConfigError, match="schedules"):
            config_from_dict({"schedules": {"nfe": [1, 4]}})

    def test_curve_builder_needs_file(self):
        with pytest.raises(ConfigError, match="curve_file"):
            config_from_dict({"schedules": {"builders": [{"name": "curve"}]}})

    def test_overrides(self):
        config = apply_overrides(ExperimentConfig(), {"seed": 3, "evaluation.repeats": 10, "grid.size": None})
        assert config.seed == 3
        assert config.evaluation.repeats == 10
        assert config.grid.size == ExperimentConfig().grid.size

    def test_overrides_are_validated(self):
        with pytest.raises(ConfigError, match="command line"):
            apply_overrides(ExperimentConfig(), {"evaluation.direction": "sideways"})

    def test_hash_is_stable(self):
        assert config_hash(ExperimentConfig()) == config_hash(load_config())
        assert len(config_hash(ExperimentConfig())) == 12

    def test_hash_follows_content(self):
        base = ExperimentConfig()
        assert config_hash(apply_overrides(base, {"seed": 1})) != config_hash(base)
        assert config_hash(apply_overrides(base, {"output_dir": "elsewhere"})) != config_hash(base)

    def test_require_seed(self):
        with pytest.raises(ConfigError, match="--seed"):
            ExperimentConfig().require_seed("sample")
        assert ExperimentConfig(seed=0).require_seed("sample") == 0


class TestSettings:
    """Environment defaults are range-checked."""

    def test_defaults_are_valid(self):
        assert validate_settings(Settings()) == []

    def test_sampling_sizes_checked(self):
        problems = validate_settings(Settings(mc_samples=0, kl_repeats=0, kl_paths=0, kde_bandwidth=0.0))
        assert problems == [
            "MC_SAMPLES must be at least 1",
            "KL_REPEATS must be at least 1",
            "KL_PATHS must be at least 1",
            "KDE_BANDWIDTH must be positive",
        ]


class TestPresets:
    """Reproduction presets load as plain configs."""

    def test_discrete_preset(self):
        config = load_preset("discrete-mixture")
        assert config.distribution.type == "standardized_points"
        assert config.estimator.curve == "entropic"
        assert [b.name for b in config.schedules.builders] == ["entropic", "edm", "uniform"]
        assert config.schedules.nfe == [4, 8, 16, 32, 64]

    def test_continuous_preset(self):
        config = load_preset("gaussian-mixture")
        assert config.distribution.type == "standardized_gaussians"
        assert config.evaluation.bandwidth == 0.01
        assert config.evaluation.n_mc == 1000

    def test_gaussian_preset(self):
        config = load_preset("gaussian-optimal")
        assert config.schedules.builders[0].name == "gaussian_optimal"
        assert config.sampler.kinds == [SolverKind.DDIM_DETERMINISTIC, SolverKind.DDIM_STOCHASTIC]

    def test_presets_carry_no_seed(self):
        for name in ("discrete-mixture", "gaussian-mixture", "gaussian-optimal"):
            assert load_preset(name).seed is None

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="Unknown preset"):
            load_preset("fig9")

    def test_short_names(self):
        assert load_preset("fig3a") == load_preset("discrete-mixture")
        assert config_hash(load_preset("fig3b")) == config_hash(load_preset("gaussian-mixture"))


class TestBuildGrid:
    """Estimation grids inside the process domain."""

    def test_uniform_grid(self):
        config = config_from_dict({"grid": {"spacing": "uniform", "size": 5}})
        spec = config.process.build()
        grid = build_grid(config, spec)
        np.testing.assert_allclose(grid, np.linspace(spec.t_min, spec.t_max, 5), rtol=1e-15)
        assert grid[0] == spec.t_min and grid[-1] == spec.t_max

    def test_edm_grid(self):
        config = config_from_dict({"grid": {"size": 9}})
        grid = build_grid(config, config.process.build())
        np.testing.assert_allclose(grid, edm_schedule(8).times[::-1], rtol=1e-15)

    def test_vp_grid_is_clipped(self):
        """sigma_min = 0.002 lies below sigma(t_min) on VP; the grid starts at t_min."""
        config = config_from_dict({"process": {"kind": "vp"}, "grid": {"size": 33}})
        spec = config.process.build()
        grid = build_grid(config, spec)
        assert grid[0] == pytest.approx(spec.t_min, rel=1e-6)
        assert grid[-1] <= spec.t_max
        assert float(spec.sigma(grid[-1])) == pytest.approx(80.0, rel=1e-6)
        assert np.all(np.diff(grid) > 0)


# =============================================================================
# TESTS FOR: cmd_entropy (entropic_time.py)
# =============================================================================

class TestEntropyCommand:
    """Error tables and curves written from a config."""

    def test_gaussian_exact_curve(self, store):
        config = config_from_dict({"distribution": {"type": "gaussian", "c": 1.0}, "grid": {"size": 2048}})
        paths = cmd_entropy(config, store)
        curve = read_curve(paths["curve"])
        assert curve.kind == "rescaled"
        assert paths["curve"].name == "curve_0123456789ab.csv"

        spec = ve_spec()
        grid = build_grid(config, spec)
        table = exact_error_table(GaussianMixture.isotropic(1.0), spec, grid,
                                  config.estimator.quadrature_points, config.estimator.samples)
        np.testing.assert_array_equal(curve.values, integrate_entropy(spec, table).values)
        assert curve.values[-1] == pytest.approx(np.arctan(80.0) - np.arctan(0.002), abs=0.05)

    def test_rerun_is_byte_identical(self, store):
        config = config_from_dict({"distribution": {"type": "gaussian"}, "grid": {"size": 64}})
        first = cmd_entropy(config, store)["curve"].read_bytes()
        assert cmd_entropy(config, store)["curve"].read_bytes() == first

    def test_spectral_table(self, store):
        config = config_from_dict({
            "seed": 4,
            "distribution": {"type": "gaussian", "c": 1.0, "dim": 64, "shape": [8, 8]},
            "grid": {"size": 8},
            "estimator": {"route": "mc", "spectral": True, "samples": 64, "amplitude_samples": 128},
        })
        paths = cmd_entropy(config, store)
        table = read_error_table(paths["errors"])
        assert table.n_basis == 64
        np.testing.assert_allclose(table.per_basis.sum(axis=1), table.values, rtol=1e-9)
        assert read_curve(paths["curve"]).kind == "spectral_rescaled"
        assert "basis_curves" in paths

    def test_spectral_needs_seed(self, store):
        config = config_from_dict({
            "distribution": {"type": "gaussian", "dim": 4, "shape": [2, 2]},
            "estimator": {"route": "mc", "spectral": True},
        })
        with pytest.raises(ConfigError, match="--seed"):
            cmd_entropy(config, store)

    def test_information_transfer_export(self, store):
        config = config_from_dict({
            "distribution": {"type": "standardized_points", "n_components": 3},
            "grid": {"size": 16},
            "estimator": {"curve": "entropic", "information_transfer": True},
        })
        paths = cmd_entropy(config, store)
        lines = paths["information_transfer"].read_text().splitlines()
        assert lines[0] == "t,transfer"
        assert len(lines) == 17


# =============================================================================
# TESTS FOR: cmd_schedule (entropic_time.py)
# =============================================================================

class TestScheduleCommand:
    """Schedule files from builders and curve files."""

    def test_uniform(self, store):
        path = cmd_schedule(ExperimentConfig(), store, 4, builder="uniform")
        assert path.name == "schedule_uniform_4_0123456789ab.json"
        np.testing.assert_array_equal(read_schedule(path).times, uniform_schedule(0.002, 80.0, 4).times)

    def test_edm_defaults(self, store):
        schedule = read_schedule(cmd_schedule(ExperimentConfig(), store, 6, builder="edm"))
        np.testing.assert_allclose(schedule.sigmas, edm_schedule(6).sigmas, rtol=1e-12)

    def test_gaussian_optimal_from_data(self, store):
        config = config_from_dict({"distribution": {"type": "gaussian", "c": 0.5}})
        schedule = read_schedule(cmd_schedule(config, store, 8, builder="gaussian_optimal"))
        np.testing.assert_allclose(schedule.times, gaussian_optimal_schedule(0.5, 0.002, 80.0, 8).times,
                                   rtol=1e-12)

    def test_gaussian_optimal_needs_scale(self, store):
        """Point data has no closed-form schedule without an explicit c."""
        with pytest.raises(ConfigError, match="gaussian_optimal"):
            cmd_schedule(ExperimentConfig(), store, 8, builder="gaussian_optimal")
        schedule = read_schedule(cmd_schedule(ExperimentConfig(), store, 8, builder="gaussian_optimal", c=1.0))
        assert schedule.params["c"] == 1.0

    def test_from_curve_file(self, store):
        curve_path = store.write_curve(gaussian_rescaled_curve(1.0, 1, 0.002, 80.0))
        schedule = read_schedule(cmd_schedule(ExperimentConfig(), store, 8, curve_path=str(curve_path)))
        assert schedule.label == "gaussian_rescaled"
        np.testing.assert_allclose(schedule.times, gaussian_optimal_schedule(1.0, 0.002, 80.0, 8).times,
                                   rtol=1e-2)

    def test_flat_curve_file(self, store, tmp_path):
        curve_path = tmp_path / "flat.csv"
        curve_path.write_text("t,phi,kind\n0.002,0,tabulated\n1,1,tabulated\n10,1,tabulated\n80,2,tabulated\n")
        with pytest.raises(EntropicTimeError):
            cmd_schedule(ExperimentConfig(), store, 4, curve_path=str(curve_path))

    def test_needs_exactly_one_source(self, store):
        with pytest.raises(ConfigError, match="exactly one"):
            cmd_schedule(ExperimentConfig(), store, 4)
        with pytest.raises(ConfigError, match="exactly one"):
            cmd_schedule(ExperimentConfig(), store, 4, curve_path="c.csv", builder="edm")


# =============================================================================
# TESTS FOR: cmd_sample / cmd_eval (entropic_time.py)
# =============================================================================

class TestSampleAndEval:
    """The file-based pipeline matches the in-memory experiment."""

    def config(self):
        return config_from_dict({
            "seed": 11,
            "distribution": {"type": "standardized_points", "n_components": 3},
            "sampler": {"paths": 500},
        })

    def test_sample_needs_seed(self, store):
        schedule_path = cmd_schedule(ExperimentConfig(), store, 3, builder="uniform")
        with pytest.raises(ConfigError, match="--seed"):
            cmd_sample(ExperimentConfig(), store, str(schedule_path))

    def test_sample_sidecar(self, store):
        config = self.config()
        schedule_path = cmd_schedule(config, store, 3, builder="uniform")
        path = cmd_sample(config, store, str(schedule_path), repeat=2)
        samples, sidecar = read_samples(path)
        assert samples.shape == (500, 1)
        assert path.name == "samples_uniform_ddim_stochastic_4_r2_0123456789ab.csv"
        assert sidecar["nfe"] == 4
        assert sidecar["repeat"] == 2
        assert sidecar["seed"] == 11
        assert sidecar["distribution"]["type"] == "point_mixture"

    def test_file_pipeline_matches_experiment(self, store):
        """schedule -> sample -> eval equals kl_experiment with one repeat, bit for bit."""
        config = self.config()
        schedule_path = cmd_schedule(config, store, 3, builder="uniform")
        samples_path = cmd_sample(config, store, str(schedule_path))
        kl_path = cmd_eval(config, store, str(samples_path))
        row = kl_path.read_text().splitlines()[1].split(",")

        spec = config.process.build()
        dist = config.distribution.build()
        builder = ScheduleBuilder("uniform", lambda n: uniform_schedule(spec.t_min, spec.t_max, n, spec))
        report = kl_experiment(spec, dist, [builder], [SolverKind.DDIM_STOCHASTIC], [4],
                               repeats=1, paths=500, rng_seed=11)[0]
        assert row[:3] == ["uniform", "ddim_stochastic", "4"]
        entry = report.entry(4)
        assert float(row[3]) == entry.kl_mean
        assert int(row[8]) == entry.finite_repeats
        assert float(row[11]) == entry.mean_empty_bins
        assert float(row[12]) == entry.mean_out_of_support


# =============================================================================
# TESTS FOR: cmd_import_errors (entropic_time.py)
# =============================================================================

class TestImportErrors:
    """External eps^2 and loss tables."""

    def test_loss_with_unit_weights(self, store, tmp_path):
        """On VE with lambda = 1 the loss is eps^2."""
        path = tmp_path / "loss.csv"
        path.write_text("t,loss,lambda\n0.01,0.001,1\n0.1,0.01,1\n1,0.3,1\n10,0.9,1\n")
        table = cmd_import_errors(ExperimentConfig(), store, str(path), "loss")
        np.testing.assert_array_equal(table.values, [0.001, 0.01, 0.3, 0.9])
        assert (store.root / "curve_imported_0123456789ab.csv").exists()

    def test_eps2_round_trip(self, store, tmp_path):
        path = tmp_path / "eps2.csv"
        path.write_text("t,eps2\n0.01,0.0001\n1,0.5\n50,0.99\n")
        table = cmd_import_errors(ExperimentConfig(), store, str(path))
        restored = read_error_table(store.root / "errors_imported_0123456789ab.csv")
        np.testing.assert_array_equal(restored.values, table.values)

    def test_loss_outside_domain(self, store, tmp_path):
        path = tmp_path / "loss.csv"
        path.write_text("t,loss,lambda\n0.001,0.001,1\n1,0.3,1\n")
        with pytest.raises(ConfigError):
            cmd_import_errors(ExperimentConfig(), store, str(path), "loss")

    def test_unknown_format(self, store, tmp_path):
        with pytest.raises(ConfigError, match="format"):
            cmd_import_errors(ExperimentConfig(), store, str(tmp_path / "x.csv"), "npz")


# =============================================================================
# TESTS FOR: run (entropic_time.py)
# =============================================================================

class TestRun:
    """Exit codes of the command line."""

    def test_missing_seed_fails(self, tmp_path):
        assert run(["eval", "--output-dir", str(tmp_path)]) == 1

    def test_reproduce_accepts_short_name(self, tmp_path):
        """reproduce fig3a resolves to the discrete-mixture preset before asking for a seed."""
        assert run(["reproduce", "fig3a", "--output-dir", str(tmp_path)]) == 1
        expected = config_hash(apply_overrides(load_preset("discrete-mixture"), {"output_dir": str(tmp_path)}))
        assert (tmp_path / f"config_{expected}.json").exists()

    def test_schedule_succeeds(self, tmp_path):
        assert run(["schedule", "--builder", "uniform", "--steps", "4", "--output-dir", str(tmp_path)]) == 0
        assert len(list(tmp_path.glob("schedule_uniform_4_*.json"))) == 1
        assert len(list(tmp_path.glob("config_*.json"))) == 1

    def test_bad_config_fails(self, tmp_path):
        path = write_json(tmp_path / "run.json", {"grid": {"size": 0}})
        assert run(["entropy", "--config", str(path), "--output-dir", str(tmp_path)]) == 1

    def test_workers_flag(self, tmp_path, mocker):
        """--workers sets the thread count used by the Monte-Carlo helpers."""
        from config import settings
        mocker.patch.object(settings, "workers", 1)
        write_config = mocker.spy(ArtifactStore, "write_config")
        assert run(["schedule", "--builder", "edm", "--steps", "2", "--workers", "3",
                    "--output-dir", str(tmp_path)]) == 0
        assert settings.workers == 3
        assert write_config.call_count == 1
