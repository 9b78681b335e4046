"""Tests for the closed-form oracles and the bundled self-check suites."""

import math

import numpy as np
import pytest

from starvol.geometry import (
    MeasureSpec,
    RadialSample,
    SearchOptions,
    VolumeEstimate,
    estimate_local_volume,
    find_radius,
)
from starvol.oracles import (
    Ellipsoid,
    SUITES,
    ellipsoid_log_volume_exact,
    ellipsoid_radius,
    gd_density_loss_comparison,
    gd_flow_covariance,
    gd_flow_ensemble_check,
    harmonic_mean_prediction,
    jensen_gap_report,
    log_estimator_variance_prediction,
    quadratic_form_variance_check,
    run_suite,
    smoothmax_bracket_holds,
)
from starvol.precondition import Preconditioner


class TestEllipsoid:
    def test_validation(self):
        with pytest.raises(ValueError, match="positive"):
            Ellipsoid(np.array([1.0, -1.0]))
        with pytest.raises(ValueError, match="rotation shape"):
            Ellipsoid(np.ones(3), rotation=np.eye(2))
        with pytest.raises(ValueError, match="orthogonal"):
            Ellipsoid(np.ones(2), rotation=np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_eigenvalues_are_inverse_square_radii(self):
        e = Ellipsoid(np.array([2.0, 0.5]))
        np.testing.assert_allclose(e.eigenvalues(), [0.25, 4.0])

    def test_quad_matrix_rotation(self):
        q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((3, 3)))
        e = Ellipsoid(np.array([1.0, 2.0, 4.0]), rotation=q)
        want = q @ np.diag([1.0, 0.25, 0.0625]) @ q.T
        np.testing.assert_allclose(e.quad_matrix(), want, atol=1e-12)

    def test_rotated_cost_matches_axis_cost_in_eigenbasis(self):
        q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((4, 4)))
        radii = np.array([0.5, 1.0, 2.0, 3.0])
        plain = Ellipsoid(radii)
        rotated = Ellipsoid(radii, rotation=q)
        x = np.random.default_rng(2).normal(size=4)
        assert rotated.cost()(q @ x) == pytest.approx(plain.cost()(x), rel=1e-12)

    def test_boundary_cost_equals_cutoff(self):
        e = Ellipsoid(np.array([3.0, 0.2]))
        spec = e.neighborhood()
        assert spec.cutoff == 0.5
        for i, r in enumerate(e.radii):
            point = np.zeros(2)
            point[i] = r
            assert spec.cost(point) == pytest.approx(0.5, rel=1e-12)

    def test_anchor_translation(self):
        e = Ellipsoid(np.array([1.0, 1.0]))
        anchor = np.array([5.0, -3.0])
        spec = e.neighborhood(anchor=anchor)
        assert spec.cost(anchor) == 0.0
        assert spec.cost(anchor + np.array([1.0, 0.0])) == pytest.approx(0.5)


class TestEllipsoidRadius:
    def test_axis_directions(self):
        e = Ellipsoid(np.array([2.0, 0.5, 7.0]))
        for i, r in enumerate(e.radii):
            u = np.zeros(3)
            u[i] = 1.0
            assert ellipsoid_radius(e, u) == pytest.approx(r, rel=1e-14)

    def test_rotated_principal_directions(self):
        q, _ = np.linalg.qr(np.random.default_rng(3).standard_normal((3, 3)))
        e = Ellipsoid(np.array([0.3, 1.0, 5.0]), rotation=q)
        for i, r in enumerate(e.radii):
            assert ellipsoid_radius(e, q[:, i]) == pytest.approx(r, rel=1e-12)

    def test_agrees_with_boundary_search(self):
        q, _ = np.linalg.qr(np.random.default_rng(4).standard_normal((5, 5)))
        e = Ellipsoid(np.geomspace(0.2, 5.0, 5), rotation=q)
        spec = e.neighborhood()
        rng = np.random.default_rng(5)
        for _ in range(10):
            u = rng.standard_normal(5)
            u /= np.linalg.norm(u)
            found, _ = find_radius(spec, u, SearchOptions(rel_tol=1e-9))
            assert found == pytest.approx(ellipsoid_radius(e, u), rel=1e-8)

    def test_zero_direction_is_error(self):
        with pytest.raises(ValueError, match="zero quadratic form"):
            ellipsoid_radius(Ellipsoid(np.ones(2)), np.zeros(2))


class TestExactVolume:
    def test_disk_and_ball(self):
        assert ellipsoid_log_volume_exact(Ellipsoid(np.ones(2))) == pytest.approx(
            math.log(math.pi), rel=1e-14
        )
        assert ellipsoid_log_volume_exact(Ellipsoid(np.ones(3))) == pytest.approx(
            math.log(4.0 * math.pi / 3.0), rel=1e-14
        )

    def test_scaling_law(self):
        radii = np.array([0.2, 1.0, 3.0, 0.7])
        base = ellipsoid_log_volume_exact(Ellipsoid(radii))
        doubled = ellipsoid_log_volume_exact(Ellipsoid(2.0 * radii))
        assert doubled - base == pytest.approx(4.0 * math.log(2.0), rel=1e-12)


class TestVarianceIdentities:
    def test_sphere_has_zero_variance(self):
        chk = quadratic_form_variance_check(
            Ellipsoid(np.full(16, 2.0)), k=1000, rng=np.random.default_rng(0)
        )
        assert chk.predicted == 0.0
        assert chk.empirical < 1e-28

    def test_two_dim_closed_form(self):
        # on the circle q = a cos^2 + b sin^2, so Var q = (a - b)^2 / 8,
        # matching 2 Var(lambda) / (n + 2) at n = 2
        e = Ellipsoid(np.array([1.0, 2.0]))
        a, b = e.eigenvalues()
        chk = quadratic_form_variance_check(e, k=400_000, rng=np.random.default_rng(1))
        assert chk.predicted == pytest.approx((a - b) ** 2 / 8.0, rel=1e-12)
        assert chk.ratio == pytest.approx(1.0, abs=0.05)

    def test_draw_count_validated(self):
        with pytest.raises(ValueError, match="at least 2"):
            quadratic_form_variance_check(Ellipsoid(np.ones(2)), k=1, rng=np.random.default_rng(0))

    def test_log_term_variance_formula(self):
        e = Ellipsoid(np.array([0.5, 1.0, 2.0]))
        lam = e.eigenvalues()
        want = 9.0 / (2.0 * 5.0) * float(np.var(lam)) / float(np.mean(lam)) ** 2
        assert log_estimator_variance_prediction(e) == pytest.approx(want, rel=1e-12)

    def test_log_term_variance_empirical_small_dispersion(self):
        n = 256
        e = Ellipsoid(np.geomspace(0.95, 1.05, n))
        rng = np.random.default_rng(2)
        u = rng.standard_normal((100_000, n))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        q = np.sum(e.eigenvalues() * u * u, axis=1)
        empirical = float(np.var(-0.5 * n * np.log(q)))
        assert empirical == pytest.approx(log_estimator_variance_prediction(e), rel=0.15)


class TestHarmonicMean:
    def test_sphere_gives_log_radius(self):
        assert harmonic_mean_prediction(Ellipsoid(np.full(10, 3.0))) == pytest.approx(
            math.log(3.0), rel=1e-12
        )

    def test_formula(self):
        radii = np.array([0.1, 1.0, 10.0])
        want = 0.5 * math.log(3.0 / float(np.sum(radii**-2.0)))
        assert harmonic_mean_prediction(Ellipsoid(radii)) == pytest.approx(want, rel=1e-12)

    def test_wide_spectrum_sits_below_geometric_mean(self):
        # stiff axes dominate the typical draw, volume follows the geometric mean
        radii = np.logspace(-2.0, 2.0, 64)
        assert harmonic_mean_prediction(Ellipsoid(radii)) < float(np.mean(np.log(radii)))

    def test_median_sampled_radius_matches(self):
        n = 2000
        rng = np.random.default_rng(3)
        e = Ellipsoid(10.0 ** rng.uniform(-2.0, 2.0, n))
        u = rng.standard_normal((2000, n))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        sampled = -0.5 * np.log(np.sum(e.eigenvalues() * u * u, axis=1))
        want = harmonic_mean_prediction(e)
        assert float(np.median(sampled)) == pytest.approx(want, abs=0.02 * abs(want))


class TestJensenGap:
    def test_needs_two_runs(self):
        with pytest.raises(ValueError, match="at least 2"):
            jensen_gap_report(np.array([1.0]), 0.0)

    def test_identical_runs_have_pure_gap(self):
        report = jensen_gap_report(np.full(5, -0.3), true_log_volume=0.0)
        assert report.mean_log_gap == pytest.approx(0.3, rel=1e-12)
        assert report.lognormal_half_variance == 0.0
        assert report.stderr == 0.0
        assert report.runs == 5

    def test_lognormal_gap_matches_half_variance(self):
        # unbiased lognormal: log draws are N(-s^2/2, s^2), so the mean log
        # undershoots the true log mean by exactly s^2/2
        s = 3.0
        rng = np.random.default_rng(4)
        draws = rng.normal(-0.5 * s * s, s, size=20_000)
        report = jensen_gap_report(draws, true_log_volume=0.0)
        assert report.mean_log_gap == pytest.approx(4.5, rel=0.1)
        assert report.lognormal_half_variance == pytest.approx(4.5, rel=0.1)
        assert abs(report.mean_log_gap - report.lognormal_half_variance) < 4.0 * report.stderr


class TestGdFlow:
    def test_zero_time_is_identity(self):
        np.testing.assert_array_equal(
            gd_flow_covariance(np.array([2.0, 1.0]), 0.0), np.ones(2)
        )

    def test_contraction_rate(self):
        got = gd_flow_covariance(np.array([2.0]), 0.5)
        assert got[0] == pytest.approx(math.exp(-2.0), rel=1e-12)

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            gd_flow_covariance(np.ones(2), -0.1)
        with pytest.raises(ValueError, match="non-negative"):
            gd_density_loss_comparison(np.ones(2), -0.1)

    def test_ensemble_matches_closed_form(self):
        empirical, predicted = gd_flow_ensemble_check(
            np.array([2.0, 1.0]), 0.5, k=200_000, rng=np.random.default_rng(5)
        )
        np.testing.assert_allclose(empirical, predicted, rtol=0.02)

    def test_uniform_curvature_is_proportional(self):
        cmp = gd_density_loss_comparison(np.full(4, 1.3), 0.7)
        assert cmp.proportional
        assert cmp.ratio_spread == pytest.approx(1.0, abs=1e-12)

    def test_anisotropic_curvature_is_not(self):
        cmp = gd_density_loss_comparison(np.array([2.0, 1.0]), 0.5)
        want = (math.exp(2.0) / 2.0) / math.exp(1.0)
        assert not cmp.proportional
        assert cmp.ratio_spread == pytest.approx(want, rel=1e-12)
        np.testing.assert_allclose(cmp.density_coeffs, [math.exp(2.0), math.exp(1.0)])
        np.testing.assert_allclose(cmp.loss_coeffs, [2.0, 1.0])

    def test_curvature_must_be_positive(self):
        with pytest.raises(ValueError, match="positive"):
            gd_density_loss_comparison(np.array([1.0, 0.0]), 0.5)


class TestSmoothmaxBracket:
    def test_holds_for_real_estimate(self):
        e = Ellipsoid(np.array([2.0, 1.0, 0.5]))
        est = estimate_local_volume(e.neighborhood(), Preconditioner.identity(3), k=32, seed=0)
        assert smoothmax_bracket_holds(est)

    def test_detects_violation(self):
        sample = RadialSample(np.array([1.0]), 0.0, 1.0, False, 0.0)
        fake = VolumeEstimate(
            log_volume=1.0,
            samples=(sample,),
            k=1,
            n=1,
            preconditioner_id="identity[identity,n=1]",
            measure=MeasureSpec.lebesgue(),
            cutoff=0.5,
            truncated_count=0,
            failed_count=0,
        )
        assert not smoothmax_bracket_holds(fake)


class TestSuites:
    @pytest.mark.parametrize("name", sorted(SUITES))
    def test_suite_passes(self, name):
        results = run_suite(name, seed=0)
        assert results
        for check in results:
            assert check.passed, f"{check.suite}/{check.name}: {check.empirical} vs {check.predicted}"

    def test_all_concatenates_every_suite(self):
        total = run_suite("all", seed=0)
        assert len(total) == sum(len(run_suite(name, seed=0)) for name in SUITES)

    def test_unknown_suite_rejected(self):
        with pytest.raises(ValueError, match="unknown suite"):
            run_suite("nope")
