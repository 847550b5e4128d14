#!/usr/bin/env python3
"""
Tests for squared-error tables, entropy curves and score diagnostics

Closed forms used throughout: for N(0, c^2 I) data under VE,
eps^2 = D sigma^2 c^2 / (sigma^2 + c^2) and the rescaled entropy is
D c arctan(t / c).
"""
import logging
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from diffusion.analytic import GaussianMixture, PointMixture, marginal_score
from diffusion.errors import DegenerateCurveError, DomainError, UnsupportedDistributionError
from diffusion.process import TimeChange, apply_time_change, ve_spec, vp_spec
from entropy.curves import (
    EntropyCurve,
    basis_curves,
    data_amplitudes,
    entropy_rate,
    entropy_rate_from_loss,
    gaussian_rescaled_curve,
    gaussian_rescaled_entropy,
    integrate_entropy,
    integrated_conditional_entropy,
    radial_profile,
    spectral_rescaled_entropy,
)
from entropy.diagnostics import (
    conditional_rate_from_scores,
    dsm_gap,
    entropy_production_rate,
    exact_information_transfer,
    information_transfer,
    production_terms,
)
from entropy.tables import (
    ErrorTable,
    error_table_from_loss,
    estimate_error_table,
    exact_error_table,
    spectral_error_table,
)
from schedules.builders import edm_grid


@pytest.fixture
def ve():
    return ve_spec()


@pytest.fixture
def unit_gaussian():
    return GaussianMixture.isotropic(1.0)


def gaussian_eps2(c2, sigma):
    return sigma ** 2 * c2 / (sigma ** 2 + c2)


# =============================================================================
# TESTS FOR: ErrorTable and estimators (tables.py)
# =============================================================================

class TestErrorTables:
    """Monte-Carlo, exact and loss-derived squared-error tables."""

    def test_table_validation(self):
        """Tables need increasing times and non-negative values."""
        with pytest.raises(DomainError):
            ErrorTable([1.0, 1.0], [0.1, 0.2])
        with pytest.raises(DomainError):
            ErrorTable([1.0, 2.0], [0.1, -0.2])
        with pytest.raises(DomainError):
            ErrorTable([1.0], [0.1])

    def test_single_point_is_zero(self, ve):
        """Exact denoiser on a point mass has zero error."""
        dist = PointMixture([1.0], [0.4])
        table = estimate_error_table(dist.denoiser(), ve, dist.sampler(), [0.1, 1.0, 10.0], M=64, rng_seed=0)
        np.testing.assert_array_equal(table.values, 0.0)

    def test_gaussian_mc_matches_closed_form(self, ve, unit_gaussian):
        """N(0, 1) at sigma=1 with M=4096: 0.5 within 3 stderr."""
        table = estimate_error_table(unit_gaussian.denoiser(), ve, unit_gaussian.sampler(),
                                     [0.5, 1.0, 2.0], M=4096, rng_seed=11)
        assert abs(table.values[1] - 0.5) < 3 * table.stderr[1]
        assert table.provenance["samples"] == 4096

    def test_mc_deterministic(self, ve, unit_gaussian):
        """Same seed gives bit-identical tables, with or without threads."""
        args = (unit_gaussian.denoiser(), ve, unit_gaussian.sampler(), [0.5, 1.0, 2.0, 4.0])
        first = estimate_error_table(*args, M=256, rng_seed=3, workers=1)
        second = estimate_error_table(*args, M=256, rng_seed=3, workers=4)
        np.testing.assert_array_equal(first.values, second.values)

    def test_zero_samples_rejected(self, ve, unit_gaussian):
        """M must be at least 1."""
        with pytest.raises(ValueError):
            estimate_error_table(unit_gaussian.denoiser(), ve, unit_gaussian.sampler(), [1.0, 2.0], M=0, rng_seed=0)

    def test_grid_outside_domain(self, ve, unit_gaussian):
        """Grid times must lie in the process domain."""
        with pytest.raises(DomainError):
            exact_error_table(unit_gaussian, ve, [0.001, 1.0])

    def test_exact_isotropic_gaussian(self, ve):
        """Isotropic Gaussian: eps^2 = D sigma^2 c^2 / (sigma^2 + c^2) exactly."""
        dist = GaussianMixture.isotropic(0.7, dim=2)
        grid = np.array([0.01, 0.3, 1.0, 5.0, 80.0])
        table = exact_error_table(dist, ve, grid)
        np.testing.assert_allclose(table.values, 2 * gaussian_eps2(0.49, grid), rtol=1e-14)
        assert table.stderr is None

    def test_exact_single_point(self, ve):
        """A point mass has zero exact error."""
        table = exact_error_table(PointMixture([1.0], [2.0]), ve, [0.1, 1.0])
        np.testing.assert_array_equal(table.values, 0.0)

    def test_quadrature_matches_brute_force(self, ve):
        """Two points at +-1: quadrature equals a large Monte-Carlo run within 3 stderr."""
        dist = PointMixture([0.5, 0.5], [-1.0, 1.0])
        grid = [0.5, 1.0]
        exact = exact_error_table(dist, ve, grid)
        mc = estimate_error_table(dist.denoiser(), ve, dist.sampler(), grid, M=200000, rng_seed=5)
        assert np.all(np.abs(exact.values - mc.values) < 3 * mc.stderr)

    def test_mc_fallback_warns(self, ve, caplog):
        """Multi-dimensional mixtures fall back to Monte-Carlo with a warning."""
        dist = GaussianMixture([0.5, 0.5], [[0.0, 0.0], [1.0, 1.0]], [[0.1, 0.1], [0.2, 0.2]])
        with caplog.at_level(logging.WARNING):
            table = exact_error_table(dist, ve, [0.5, 1.0], mc_samples=512, rng_seed=1)
        assert "falling back to Monte-Carlo" in caplog.text
        assert table.stderr is not None

    def test_loss_table_unit_weights(self, ve):
        """lambda = 1 and s = 1 leave the loss values unchanged."""
        table = error_table_from_loss(ve, [0.1, 0.5, 2.0], [0.01, 0.2, 0.7], [1.0, 1.0, 1.0])
        np.testing.assert_array_equal(table.values, [0.01, 0.2, 0.7])

    def test_loss_weights_must_be_positive(self, ve):
        with pytest.raises(DomainError):
            error_table_from_loss(ve, [0.1, 0.5], [0.01, 0.2], [1.0, 0.0])


# =============================================================================
# TESTS FOR: spectral_error_table (tables.py)
# =============================================================================

class TestSpectralTable:
    """Per-direction decomposition of the squared error."""

    def test_parseval_against_plain_table(self, ve):
        """Fourier rows sum to the plain estimate with the same seed."""
        dist = GaussianMixture([1.0], np.zeros((1, 16)), np.linspace(0.1, 2.0, 16)[None, :])
        grid = [0.1, 1.0, 10.0]
        plain = estimate_error_table(dist.denoiser(), ve, dist.sampler(), grid, M=512, rng_seed=4)
        spectral = spectral_error_table(dist.denoiser(), ve, dist.sampler(), grid, M=512, rng_seed=4, shape=(4, 4))
        np.testing.assert_array_equal(spectral.values, plain.values)
        np.testing.assert_allclose(spectral.per_basis.sum(axis=1), plain.values, rtol=1e-6)
        assert spectral.basis_shape == (4, 4)

    def test_constant_residual_is_dc(self, ve):
        """Constant residual arrays put all energy in frequency (0, 0)."""
        def sampler(n, rng):
            return np.zeros((n, 16))

        def denoiser(z, sigma):
            return np.ones_like(z)

        table = spectral_error_table(denoiser, ve, sampler, [0.5, 1.0], M=8, rng_seed=0, shape=(4, 4))
        np.testing.assert_allclose(table.per_basis[:, 0], 16.0, rtol=1e-12)
        np.testing.assert_allclose(table.per_basis[:, 1:], 0.0, atol=1e-12)

    def test_white_residual_is_flat(self, ve):
        """Isotropic data gives a flat spectrum within 5%."""
        dist = GaussianMixture.isotropic(1.0, dim=16)
        table = spectral_error_table(dist.denoiser(), ve, dist.sampler(), [0.5, 1.0], M=16384, rng_seed=2, shape=(4, 4))
        expected = table.values[:, None] / 16
        np.testing.assert_allclose(table.per_basis, np.broadcast_to(expected, table.per_basis.shape), rtol=0.05)

    def test_shape_mismatch(self, ve):
        dist = GaussianMixture.isotropic(1.0, dim=6)
        with pytest.raises(DomainError):
            spectral_error_table(dist.denoiser(), ve, dist.sampler(), [0.5, 1.0], M=4, rng_seed=0, shape=(4, 4))


# =============================================================================
# TESTS FOR: entropy_rate and integrate_entropy (curves.py)
# =============================================================================

class TestEntropyRate:
    """dH/dt = sigma' / sigma^3 eps^2."""

    def test_plug_in(self, ve):
        """VE, eps^2 = 0.5 at sigma = 1: rate 0.5."""
        rate = entropy_rate(ve, ErrorTable([1.0, 2.0], [0.5, 0.8]))
        assert rate[0] == pytest.approx(0.5)

    def test_zero_table(self, ve):
        np.testing.assert_array_equal(entropy_rate(ve, ErrorTable([1.0, 2.0], [0.0, 0.0])), 0.0)

    def test_gaussian_at_one(self, ve, unit_gaussian):
        """N(0, 1): rate 1/(t(1 + t^2)) equals 0.5 at t=1."""
        rate = entropy_rate(ve, exact_error_table(unit_gaussian, ve, [1.0, 2.0]))
        assert rate[0] == pytest.approx(0.5, rel=1e-14)

    def test_rate_from_loss(self, ve):
        """Loss route equals the eps^2 route when L = lambda s^2 eps^2."""
        times = np.array([0.5, 1.0, 2.0])
        eps2 = np.array([0.2, 0.5, 0.8])
        weights = np.array([2.0, 1.0, 0.5])
        from_loss = entropy_rate_from_loss(ve, times, weights * eps2, weights)
        np.testing.assert_allclose(from_loss, entropy_rate(ve, ErrorTable(times, eps2)), rtol=1e-14)


class TestIntegrateEntropy:
    """Left-Riemann entropic and rescaled curves."""

    def test_dense_grid_matches_arctan(self, ve, unit_gaussian):
        """Rescaled curve of N(0, 1) on a dense grid is arctan(t) - arctan(t_0)."""
        grid = edm_grid(4096)
        curve = integrate_entropy(ve, exact_error_table(unit_gaussian, ve, grid), "rescaled")
        np.testing.assert_allclose(curve.values, np.arctan(grid) - np.arctan(grid[0]), atol=5e-3)
        assert curve.values[0] == 0.0
        assert curve.is_strictly_increasing

    def test_first_order_convergence(self, ve, unit_gaussian):
        """Refining the grid 4x cuts the endpoint error by at least 2x."""
        exact = np.arctan(80.0) - np.arctan(0.002)

        def endpoint_error(n):
            grid = edm_grid(n)
            curve = integrate_entropy(ve, exact_error_table(unit_gaussian, ve, grid), "rescaled")
            return abs(curve.values[-1] - exact)

        assert endpoint_error(1024) < endpoint_error(256) / 2

    def test_mc_curve_matches_same_grid_exact_curve(self, ve, unit_gaussian):
        """
        On 128 EDM points the left-Riemann sum itself is off arctan by a few
        percent, so the Monte-Carlo curve is held against the exact-eps^2
        curve on the same grid, within 3 propagated standard errors.
        """
        grid = edm_grid(128)
        mc_table = estimate_error_table(unit_gaussian.denoiser(), ve, unit_gaussian.sampler(), grid,
                                        M=4096, rng_seed=0)
        mc = integrate_entropy(ve, mc_table, "rescaled")
        exact = integrate_entropy(ve, exact_error_table(unit_gaussian, ve, grid), "rescaled")
        # VE: sigma = t, sigma' = 1, so each increment carries stderr / t^2 * dt
        increment_se = (mc_table.stderr / grid ** 2)[:-1] * np.diff(grid)
        curve_se = np.concatenate([[0.0], np.sqrt(np.cumsum(increment_se ** 2))])
        for i in (32, 64, 96, 127):
            assert abs(mc.values[i] - exact.values[i]) < 3 * curve_se[i]

    def test_constant_rate_is_linear(self, ve):
        """eps^2 = t^3 under VE gives unit entropic rate and a linear curve."""
        grid = np.linspace(0.5, 4.0, 15)
        curve = integrate_entropy(ve, ErrorTable(grid, grid ** 3), "entropic")
        np.testing.assert_allclose(curve.values, grid - grid[0], rtol=1e-12, atol=1e-14)

    def test_integrated_identity(self, ve):
        """-1/2 sum SNR' eps^2 dt equals the entropic endpoint to 1e-10."""
        dist = PointMixture([0.2, 0.5, 0.3], [-1.0, 0.2, 1.5])
        table = exact_error_table(dist, ve, edm_grid(256))
        curve = integrate_entropy(ve, table, "entropic")
        assert integrated_conditional_entropy(ve, table) == pytest.approx(curve.values[-1], rel=1e-10)

    def test_all_zero_table(self, ve):
        """A zero table can not define a curve."""
        with pytest.raises(DegenerateCurveError):
            integrate_entropy(ve, ErrorTable([1.0, 2.0, 3.0], [0.0, 0.0, 0.0]))

    def test_zero_prefix_warns(self, ve, caplog):
        """Zero errors at the first times give a warning and a flat start."""
        table = ErrorTable([0.1, 0.2, 0.3, 0.4], [0.0, 0.0, 0.1, 0.2])
        with caplog.at_level(logging.WARNING):
            curve = integrate_entropy(ve, table)
        assert "zero squared error on the first 2 grid times" in caplog.text
        assert curve.flat_intervals() == [(0.1, 0.3)]

    def test_unknown_kind(self, ve):
        with pytest.raises(ValueError):
            integrate_entropy(ve, ErrorTable([1.0, 2.0], [0.1, 0.2]), "spectral")

    def test_reparameterization_invariance(self, ve, unit_gaussian):
        """Curves under t and under phi(t) = t^2 agree as functions of sigma."""
        grid = edm_grid(4096)
        phi = TimeChange.from_polynomial([0.0, 0.0, 1.0], np.sqrt(0.002), np.sqrt(80.0))
        changed = apply_time_change(ve, phi)
        changed_grid = np.sqrt(grid)
        changed_grid[0], changed_grid[-1] = changed.t_min, changed.t_max
        base = integrate_entropy(ve, exact_error_table(unit_gaussian, ve, grid))
        other = integrate_entropy(changed, exact_error_table(unit_gaussian, changed, changed_grid))
        exact = np.arctan(grid) - np.arctan(grid[0])
        assert np.max(np.abs(other.values - exact)) < 0.01
        assert np.max(np.abs(other.values - base.values)) < 0.01


# =============================================================================
# TESTS FOR: EntropyCurve (curves.py)
# =============================================================================

class TestEntropyCurve:
    """Interpolation, inversion and restriction."""

    def test_inverse_round_trip(self, ve, unit_gaussian):
        """phi^-1(phi(t)) reproduces the grid to 1e-9 of the range."""
        grid = edm_grid(128)
        curve = integrate_entropy(ve, exact_error_table(unit_gaussian, ve, grid))
        levels = curve.values
        np.testing.assert_allclose(curve(curve.inverse(levels)), levels, atol=1e-9 * levels[-1])

    def test_non_monotone_rejected(self):
        with pytest.raises(DomainError):
            EntropyCurve([0.0, 1.0, 2.0], [0.0, 2.0, 1.0], "tabulated")

    def test_flat_prefix_inverse(self):
        """Level 0 on a curve with a flat start maps to the end of the flat run."""
        curve = EntropyCurve([0.0, 1.0, 2.0, 3.0], [0.0, 0.0, 1.0, 2.0], "tabulated")
        assert curve.inverse(0.0) == pytest.approx(1.0)
        assert curve.inverse(1.5) == pytest.approx(2.5)

    def test_restricted_and_normalized(self):
        """Restriction re-anchors at 0; normalization ends at 1."""
        curve = EntropyCurve([0.0, 1.0, 2.0, 4.0], [0.0, 1.0, 3.0, 5.0], "tabulated")
        part = curve.restricted(0.5, 3.0)
        np.testing.assert_allclose(part.values, [0.0, 0.5, 2.5, 3.5])
        assert part.normalized().values[-1] == pytest.approx(1.0)

    def test_as_time_change(self):
        """Strictly increasing curves convert to time changes."""
        curve = EntropyCurve([1.0, 2.0, 3.0], [0.0, 1.0, 3.0], "tabulated")
        phi = curve.as_time_change()
        assert phi(2.5) == pytest.approx(2.0)
        assert phi.inverse(2.0) == pytest.approx(2.5)


class TestGaussianRescaledEntropy:
    """D c arctan(t / c)."""

    def test_values(self):
        assert gaussian_rescaled_entropy(1.0, 1, 1.0) == pytest.approx(np.pi / 4, rel=1e-15)
        assert gaussian_rescaled_entropy(1.0, 1, 80.0) == pytest.approx(1.55829, abs=1e-5)

    def test_linear_in_dimension(self):
        assert gaussian_rescaled_entropy(0.5, 3, 2.0) == pytest.approx(3 * gaussian_rescaled_entropy(0.5, 1, 2.0))

    def test_invalid_scale(self):
        with pytest.raises(DomainError):
            gaussian_rescaled_entropy(0.0, 1, 1.0)

    def test_curve_exact_inverse(self):
        """The closed-form curve starts at 0 and inverts exactly."""
        curve = gaussian_rescaled_curve(1.0, 1, 0.002, 80.0)
        assert curve(0.002) == 0.0
        t = np.array([0.01, 0.7, 3.0, 50.0])
        np.testing.assert_allclose(curve.inverse(curve(t)), t, rtol=1e-12)


# =============================================================================
# TESTS FOR: spectral rescaled entropy and radial profiles (curves.py)
# =============================================================================

class TestSpectralCurves:
    """Per-direction curves, amplitude weighting and radial binning."""

    def test_single_direction_matches_plain(self, ve, unit_gaussian):
        """One direction reproduces the normalized rescaled curve."""
        grid = edm_grid(64)
        plain = exact_error_table(unit_gaussian, ve, grid)
        table = ErrorTable(grid, plain.values, per_basis=plain.values[:, None])
        curve = spectral_rescaled_entropy(table, ve, [1.0])
        expected = integrate_entropy(ve, plain).normalized()
        np.testing.assert_allclose(curve.values, expected.values, rtol=1e-12, atol=1e-15)
        assert curve.kind == "spectral_rescaled"

    def test_anisotropic_directions(self, ve):
        """Pixel directions of a diagonal Gaussian follow their own arctan curves within 2%."""
        c = np.linspace(0.2, 3.0, 16)
        dist = GaussianMixture([1.0], np.zeros((1, 16)), (c ** 2)[None, :])
        grid = edm_grid(64)
        table = spectral_error_table(dist.denoiser(), ve, dist.sampler(), grid, M=2048, rng_seed=9,
                                     shape=(4, 4), basis="pixel")
        curves, kept = basis_curves(ve, table)
        assert kept.all()
        for b in range(16):
            exact = integrate_entropy(ve, ErrorTable(grid, gaussian_eps2(c[b] ** 2, grid))).normalized()
            np.testing.assert_allclose(curves[:, b], exact.values, atol=0.02)

    def test_zero_direction_excluded(self, ve, caplog):
        """Directions with no error are dropped with a warning."""
        per_basis = np.array([[0.1, 0.0], [0.2, 0.0], [0.3, 0.0]])
        table = ErrorTable([0.5, 1.0, 2.0], per_basis.sum(axis=1), per_basis=per_basis)
        with caplog.at_level(logging.WARNING):
            curve = spectral_rescaled_entropy(table, ve, [1.0, 1.0])
        assert "Excluding 1 basis directions" in caplog.text
        assert curve.values[-1] == pytest.approx(1.0)

    def test_amplitude_validation(self, ve):
        per_basis = np.array([[0.1, 0.1], [0.2, 0.2]])
        table = ErrorTable([0.5, 1.0], per_basis.sum(axis=1), per_basis=per_basis)
        with pytest.raises(DomainError):
            spectral_rescaled_entropy(table, ve, [0.0, 0.0])
        with pytest.raises(DomainError):
            spectral_rescaled_entropy(table, ve, [1.0])

    def test_data_amplitudes(self):
        """Power and modulus of constant data sit at DC."""
        samples = np.ones((3, 16))
        power = data_amplitudes(samples, (4, 4))
        modulus = data_amplitudes(samples, (4, 4), kind="modulus")
        assert power[0] == pytest.approx(16.0)
        assert modulus[0] == pytest.approx(4.0)
        np.testing.assert_allclose(power[1:], 0.0, atol=1e-12)

    def test_radial_ring(self):
        """Ring convention on 4x4 has radii 0..3 and averages per ring."""
        radii, profile = radial_profile(np.ones((2, 16)), (4, 4), "ring")
        np.testing.assert_array_equal(radii, [0.0, 1.0, 2.0, 3.0])
        np.testing.assert_array_equal(profile, np.ones((2, 4)))

    def test_radial_annulus(self):
        """Annulus convention uses the requested number of bins."""
        radii, profile = radial_profile(np.full(16, 2.5), (4, 4), "annulus", n_bins=3)
        np.testing.assert_allclose(radii, np.sqrt(8.0) * np.array([1, 3, 5]) / 6)
        np.testing.assert_allclose(profile, 2.5)

    def test_radial_unknown_convention(self):
        with pytest.raises(ValueError):
            radial_profile(np.ones(16), (4, 4), "square")


# =============================================================================
# TESTS FOR: score diagnostics (diagnostics.py)
# =============================================================================

class TestScoreDiagnostics:
    """Entropy production, score-norm rates and the DSM gap."""

    def test_production_rate_gaussian(self, ve, unit_gaussian):
        """N(0, 1) at sigma=1: dH[x_t]/dt = sigma sigma' / (sigma^2 + c^2) = 0.5."""
        estimate = entropy_production_rate(unit_gaussian, ve, 1.0, M=20000, rng_seed=1)
        assert abs(estimate.value - 0.5) < 3 * estimate.stderr

    def test_production_divergence_term(self, unit_gaussian):
        """The drift divergence is D s'/s exactly."""
        spec = vp_spec()
        divergence, _ = production_terms(GaussianMixture.isotropic(1.0, dim=3), spec, 0.3, M=16, rng_seed=0)
        assert divergence == pytest.approx(3 * spec.scale_dot(0.3) / spec.scale(0.3), rel=1e-14)

    def test_conditional_rate_single_point(self, ve):
        """One point: conditional and marginal score terms cancel."""
        estimate = conditional_rate_from_scores(PointMixture([1.0], [0.3]), ve, 1.0, M=256, rng_seed=0)
        assert estimate.value == pytest.approx(0.0, abs=1e-10)

    def test_conditional_rate_gaussian(self, ve, unit_gaussian):
        """N(0, 1) at sigma=1: 0.5 within 3 stderr."""
        estimate = conditional_rate_from_scores(unit_gaussian, ve, 1.0, M=20000, rng_seed=2)
        assert abs(estimate.value - 0.5) < 3 * estimate.stderr

    def test_conditional_rate_two_points(self, ve):
        """Two points at sigma=1: score route equals the eps^2 route within 3 stderr."""
        dist = PointMixture([0.5, 0.5], [-1.0, 1.0])
        estimate = conditional_rate_from_scores(dist, ve, 1.0, M=50000, rng_seed=3)
        exact = entropy_rate(ve, exact_error_table(dist, ve, [1.0, 2.0]))[0]
        assert abs(estimate.value - exact) < 3 * estimate.stderr

    @pytest.mark.slow
    def test_dual_route_random_mixtures(self, ve):
        """Score-norm rate vs sigma'/sigma^3 eps^2 on 20 random 1-D mixtures x 8 times."""
        rng = np.random.default_rng(21)
        times = np.geomspace(0.05, 20.0, 8)
        for m in range(20):
            k = int(rng.integers(2, 6))
            means = rng.normal(0, 1.5, k)
            if m % 2:
                dist = PointMixture(rng.uniform(0.2, 1.0, k), means)
            else:
                dist = GaussianMixture(rng.uniform(0.2, 1.0, k), means, rng.uniform(0.05, 0.5, k))
            rates = entropy_rate(ve, exact_error_table(dist, ve, times))
            for i, t in enumerate(times):
                estimate = conditional_rate_from_scores(dist, ve, t, M=20000, rng_seed=100 * m + i)
                # 160 comparisons: 4 stderr keeps the family-wise false alarm rate near 1%.
                assert abs(estimate.value - rates[i]) < 4 * estimate.stderr

    def test_dsm_gap_exact_score(self, ve, unit_gaussian):
        """Exact score: L_SM = 0 and L_DSM matches the predicted gap within 3 stderr."""
        times = [0.5, 1.0, 2.0]
        result = dsm_gap(lambda x, t: marginal_score(unit_gaussian, ve, x, t), unit_gaussian, ve, times,
                         M=20000, rng_seed=4)
        assert result.l_sm.value < 1e-20
        assert abs(result.l_dsm.value - result.predicted_gap) < 3 * result.l_dsm.stderr
        expected = np.mean([gaussian_eps2(1.0, t) / t ** 4 for t in times])
        assert result.predicted_gap == pytest.approx(expected, rel=1e-12)

    def test_dsm_gap_constant_offset(self, ve, unit_gaussian):
        """Adding a constant delta to the score raises L_SM by exactly ||delta||^2."""
        delta = 0.3
        result = dsm_gap(lambda x, t: marginal_score(unit_gaussian, ve, x, t) + delta, unit_gaussian, ve,
                         [0.5, 1.0], M=512, rng_seed=5)
        assert result.l_sm.value == pytest.approx(delta ** 2, rel=1e-9)
        np.testing.assert_allclose(result.per_time_delta2, delta ** 2, rtol=1e-9)

    def test_dsm_gap_single_point(self, ve):
        """One point: no entropy production, so both losses vanish for the exact score."""
        dist = PointMixture([1.0], [0.0])
        result = dsm_gap(lambda x, t: marginal_score(dist, ve, x, t), dist, ve, [0.5, 1.0], M=128, rng_seed=6)
        assert result.predicted_gap == 0.0
        assert result.l_dsm.value < 1e-20

    def test_dsm_gap_bad_weights(self, ve, unit_gaussian):
        with pytest.raises(DomainError):
            dsm_gap(lambda x, t: x, unit_gaussian, ve, [0.5, 1.0], time_weights=[0.0, 0.0], M=4, rng_seed=0)


class TestInformationTransfer:
    """T(t) = H[x0] - H[x0 | x_t] for discrete data."""

    def test_single_point(self, ve):
        """A point mass transfers no information."""
        values, _ = information_transfer(PointMixture([1.0], [1.0]), ve, [0.1, 1.0], M=64, rng_seed=0)
        np.testing.assert_array_equal(values, 0.0)

    def test_two_points_small_noise(self, ve):
        """Two equal points at t_min: all log 2 nats transferred."""
        dist = PointMixture([0.5, 0.5], [0.0, 1.0])
        values, _ = information_transfer(dist, ve, [0.002, 0.01], M=256, rng_seed=1)
        assert values[0] == pytest.approx(np.log(2), rel=1e-9)
        assert exact_information_transfer(dist, ve, [0.002, 0.01])[0] == pytest.approx(np.log(2), rel=1e-9)

    def test_decreasing_in_noise(self, ve):
        """Exact transfer decreases with sigma and stays in [0, H[x0]]."""
        dist = PointMixture([0.2, 0.3, 0.5], [-1.0, 0.0, 2.0])
        values = exact_information_transfer(dist, ve, np.geomspace(0.01, 50.0, 40))
        assert np.all(np.diff(values) <= 1e-12)
        assert np.all((values >= 0) & (values <= dist.prior_entropy))

    def test_derivative_matches_entropy_rate(self, ve):
        """dT/dt = -sigma'/sigma^3 eps^2."""
        dist = PointMixture([0.5, 0.5], [0.0, 1.0])
        h = 1e-4
        for t in (0.4, 0.7, 1.0):
            values = exact_information_transfer(dist, ve, [t - h, t + h])
            slope = (values[1] - values[0]) / (2 * h)
            rate = entropy_rate(ve, exact_error_table(dist, ve, [t, t + 1.0]))[0]
            assert slope == pytest.approx(-rate, rel=1e-3)

    def test_mc_agrees_with_quadrature(self, ve):
        """Monte-Carlo and quadrature transfer agree within 4 stderr."""
        dist = PointMixture([0.3, 0.7], [-0.5, 0.5])
        grid = [0.3, 1.0]
        values, stderr = information_transfer(dist, ve, grid, M=20000, rng_seed=7)
        exact = exact_information_transfer(dist, ve, grid)
        assert np.all(np.abs(values - exact) < 4 * stderr)

    def test_continuous_rejected(self, ve, unit_gaussian):
        with pytest.raises(UnsupportedDistributionError):
            information_transfer(unit_gaussian, ve, [0.5, 1.0], M=4, rng_seed=0)
