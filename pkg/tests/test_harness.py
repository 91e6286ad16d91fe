import math

import numpy as np
import numpy.testing as npt
import pytest

from brownian_billiards.billiard import mean_free_path
from brownian_billiards.dynamics import SimParams
from brownian_billiards.errors import ArgumentError, ConfigurationError
from brownian_billiards.harness import (
    CompareThresholds,
    PathJob,
    compare_ensembles,
    early_time_report,
    isotropic_report,
    run_path,
    run_thm1,
    run_thm2,
    run_thm3,
    summarize,
    summarize_limit,
    thm1_limit_report,
)
from brownian_billiards.limit_models import ConstantSigma, LimitParams, simulate_limit

TAU = 0.5 * np.arange(1, 9) / 8


def gaussian_summary(rng, sigma2: float, n: int = 4000, regime: str = "thm3"):
    """Brownian-like checkpoint samples: V(τ) = √(σ²τ)·Z with one Z per path"""
    z = rng.standard_normal((n, 1, 2))
    w = rng.standard_normal((n, 1, 2))
    V = np.sqrt(sigma2 * TAU)[None, :, None] * z
    Q = np.sqrt(sigma2 * TAU**3 / 3)[None, :, None] * w
    frozen = np.zeros((n, len(TAU)), dtype=bool)
    return summarize(regime, "billiard", TAU, V, Q, frozen, frozen[:, -1])


def test_summarize_shapes(rng):
    summary = gaussian_summary(rng, 1.0, n=100)
    assert np.shape(summary.cov_V) == (8, 2, 2)
    assert np.shape(summary.mean_Q_se) == (8, 2)
    assert summary.n_paths == 100
    assert summary.stopped_fraction == 0.0
    assert summary.is_psd_within_noise()
    assert "samples_V" not in summary.model_dump()
    assert summary.to_frame().height == 800


def test_summarize_needs_two_paths():
    one = np.zeros((1, 8, 2))
    with pytest.raises(ArgumentError):
        summarize("thm2", "billiard", TAU, one, one, np.zeros((1, 8), bool), np.zeros(1, bool))


def test_isotropic_report_accepts_matching_ensemble(rng, table):
    sigma0_2 = 8.0 / (3.0 * table.area)
    report = isotropic_report(gaussian_summary(rng, sigma0_2), table)
    assert report.provisional
    assert report.passed, report
    assert [c.quantity for c in report.checks] == ["var_Vx", "var_Vy"]


def test_isotropic_report_rejects_wrong_variance(rng, table):
    sigma0_2 = 8.0 / (3.0 * table.area)
    report = isotropic_report(gaussian_summary(rng, 2.0 * sigma0_2), table)
    assert not report.passed


def test_early_time_report(rng):
    summary = gaussian_summary(rng, 2.0)
    good = early_time_report(summary, 2.0 * np.eye(2))
    assert good.passed
    # c/8 is the only checkpoint in the early window
    assert [c.tau for c in good.checks] == [TAU[0]]
    assert not early_time_report(summary, 4.0 * np.eye(2)).passed


def test_thm1_limit_report(rng):
    params = LimitParams(regime="thm1", c=0.5, sigma_field=ConstantSigma(np.eye(2)))
    report = thm1_limit_report(gaussian_summary(rng, 1.0, regime="thm1"), params)
    assert report.passed, report
    assert report.checks[0].tau == pytest.approx(0.25)


def limit_ensemble(sigma2: float, seed: int = 0):
    params = LimitParams(regime="thm3", c=0.5, sigma_field=ConstantSigma(sigma2 * np.eye(2)), N=500, h=0.005)
    return simulate_limit(params, seed=seed)


def test_compare_identical_ensembles_pass():
    ensemble = limit_ensemble(6.0)
    report = compare_ensembles(ensemble, ensemble)
    assert report.passed
    assert report.mean_max_z == 0.0
    assert report.ks_min_pvalue == pytest.approx(1.0)


def test_compare_detects_scaled_noise():
    report = compare_ensembles(limit_ensemble(6.0, seed=1), limit_ensemble(24.0, seed=2))
    assert not report.cov_passed
    assert not report.passed


def test_compare_relative_tolerance_accepts_small_bias():
    a = summarize_limit(limit_ensemble(6.0, seed=1))
    b = summarize_limit(limit_ensemble(6.0 * 1.02, seed=1))
    report = compare_ensembles(a, b, CompareThresholds(cov_rel_tol=0.05))
    assert report.cov_passed


def test_compare_independent_thm3_ensembles_passes_at_the_nominal_rate():
    """Independently seeded ensembles of the same process pass at the 1% level in at least 95% of pairs"""
    reports = [
        compare_ensembles(limit_ensemble(6.0, seed=2 * k + 1), limit_ensemble(6.0, seed=2 * k + 2))
        for k in range(40)
    ]
    assert reports[0].alpha == 0.01
    assert sum(report.passed for report in reports) >= 38


def test_compare_rejects_mismatched_grids():
    a = limit_ensemble(6.0)
    params = LimitParams(regime="thm3", c=1.0, sigma_field=ConstantSigma(np.eye(2)), N=50, h=0.01)
    with pytest.raises(ArgumentError):
        compare_ensembles(a, simulate_limit(params))


def test_thm2_infinite_mass_disk_stays_put(table):
    summary = run_thm2(math.inf, 1.0, 60, 0.02, table, 0.05)
    npt.assert_array_equal(summary.samples_V, 0.0)
    npt.assert_array_equal(summary.samples_Q, np.broadcast_to([0.5, 0.0], (60, 8, 2)))
    assert summary.n_stopped == 0


def test_thm3_needs_a_disk(table):
    with pytest.raises(ArgumentError):
        run_thm3(1e4, 0.0, 0.5, 60, 0.02, table)


def test_ensembles_need_enough_paths(table):
    with pytest.raises(ArgumentError):
        run_thm2(1e4, 0.1, 10, 0.02, table, 0.05)


def test_thm1_horizon_beyond_straight_line_contact(table):
    """The straight path from (0.5, 0) upward at speed χ touches the small scatterer at τ = 0.54"""
    with pytest.raises(ConfigurationError):
        run_thm1(1e4, 0.5, (0.0, 1.0), 0.6, 50, table, 0.05)


def test_thm1_bad_arguments(table):
    with pytest.raises(ArgumentError):
        run_thm1(math.inf, 0.5, (0.0, 1.0), 0.1, 50, table, 0.05)
    with pytest.raises(ArgumentError):
        run_thm1(1e4, 0.5, (1.0, 1.0), 0.1, 50, table, 0.05)


def test_thm1_rescaling_of_a_resting_disk(table):
    """χ = 0: the drift term vanishes and 𝒬 is M^{1/4} times the displacement"""
    M, c, seed = 1e4, 0.1, 7
    summary = run_thm1(M, 0.0, (0.0, 1.0), c, 50, table, 0.05, seed=seed)
    assert summary.n_dropped == 0
    assert summary.n_paths == 50
    root_M = math.sqrt(M)
    times = tuple(float(t) for t in c * np.arange(1, 9) / 8 * root_M)
    params = SimParams(M=M, r=0.05, mode="free", horizon_time=c * root_M, seed=seed)
    path = run_path(PathJob(table, params, (0.5, 0.0), (0.0, 0.0), times, seed, 0))
    npt.assert_allclose(summary.samples_Q[0], M**0.25 * path.disp, rtol=1e-14)
    npt.assert_allclose(summary.samples_V[0], M**0.75 * path.V, rtol=1e-14)


def test_thm2_collision_rate_matches_mean_free_path(table):
    summary = run_thm2(1e4, 0.1, 50, 0.02, table, 0.05, seed=3)
    assert summary.collision_rate == pytest.approx(1.0 / mean_free_path(table, 0.05), rel=0.1)
    assert summary.n_paths == 50
    assert np.shape(summary.cov_Q) == (8, 2, 2)
    frozen = summary.samples_frozen
    assert np.all(np.diff(frozen.astype(int), axis=1) >= 0)


def test_thm3_ensemble_runs(table):
    summary = run_thm3(1e4, 0.01, 0.05, 50, 0.02, table, seed=4)
    assert summary.regime == "thm3"
    assert summary.source == "billiard"
    assert 0 <= summary.n_stopped <= 50
    assert summary.collision_rate == pytest.approx(1.0 / mean_free_path(table, 0.01), rel=0.15)


def test_increment_tail_stays_bounded_as_M_grows(table):
    """99th percentile of the largest checkpoint increment of 𝒱 does not blow up under refinement"""
    p99 = [run_thm3(M, 0.01, 0.05, 100, 0.02, table, seed=5).increment_p99 for M in (1e4, 1e5, 1e6)]
    assert all(0.0 < p <= 2.0 * p99[0] for p in p99)
