"""
Desk-scale checks. Each one runs for minutes or longer; select them with
`pytest -m slow`.
"""

import math
import os

import numpy as np
import numpy.testing as npt
import pytest

from brownian_billiards.billiard import (
    empirical_mfp,
    lyapunov_exponent,
    lyapunov_separation,
    mean_free_path,
    pushforward_ks,
)
from brownian_billiards.dynamics import ObservationPlan, SimParams, evolve, reverse, sample_initial_state
from brownian_billiards.geometry import torus_distance
from brownian_billiards.harness import (
    compare_ensembles,
    early_time_report,
    isotropic_report,
    run_thm1,
    run_thm2,
    run_thm3,
    sigma_along_path,
    thm1_limit_report,
)
from brownian_billiards.limit_models import ConstantSigma, GridSigma, LimitParams, isotropic_sigma, simulate_limit
from brownian_billiards.stats import covariance_with_se, z_critical
from brownian_billiards.transport import (
    build_sigma_grid,
    correlation_decay,
    green_kubo,
    lag0_closed_form,
    small_r_asymptote,
)

pytestmark = pytest.mark.slow

Q0 = (0.5, 0.0)
R = 0.05
WORKERS = os.cpu_count() or 1


def test_exact_laws_over_a_million_collisions(table, rng):
    params = SimParams(M=1e6, r=R, mode="stopped", max_collisions=1_000_000)
    state = sample_initial_state(table, Q0, (0.0, 0.0), params, rng)
    trajectory = evolve(state, params, table, ObservationPlan(stop_when_frozen=False))
    assert trajectory.final.n_collisions == 1_000_000
    assert trajectory.max_energy_error <= 1e-10
    assert trajectory.max_momentum_error <= 1e-10


def test_time_reversal_over_a_dozen_collisions(table, rng):
    for _ in range(50):
        params = SimParams(M=1e4, r=R, mode="free", max_collisions=13)
        start = sample_initial_state(table, Q0, (0.001, 0.0), params, rng)
        hits = evolve(start, params, table, ObservationPlan(record_collisions=True)).collision_rows[:, 0]
        T = 0.5 * (hits[11] + hits[12])
        params = params.model_copy(update={"horizon_time": T, "max_collisions": None})

        forward = evolve(start, params, table)
        assert forward.final.n_collisions >= 12
        back = evolve(reverse(forward.final), params.model_copy(update={"horizon_time": 2 * T}), table)
        end = reverse(back.final)
        assert torus_distance(end.q, start.q) < 1e-6
        assert torus_distance(end.Q, start.Q) < 1e-6
        npt.assert_allclose(end.v, start.v, atol=1e-6)
        npt.assert_allclose(end.V, start.V, atol=1e-6)


def test_santalo_mean_free_path(table, rng):
    mfp = empirical_mfp(Q0, table, R, 10_000_000, rng)
    assert mfp.expected == pytest.approx(0.35795, abs=2e-5)
    assert abs(mfp.mean - mfp.expected) <= 3 * mfp.stderr


def test_measure_invariance(table, rng):
    assert pushforward_ks(Q0, table, R, 1_000_000, rng).passed


def test_green_kubo_lag0_symmetry_and_decay(table, rng):
    dm = green_kubo(Q0, table, R, 1_000_000, J=8, rng=rng)
    target = lag0_closed_form(table, R)
    assert np.all(np.abs(dm.per_lag[0] - target) <= 3 * dm.per_lag_stderr[0])
    npt.assert_allclose(dm.m, dm.m.T)
    assert dm.is_psd_within_noise()
    assert correlation_decay(dm).significant


def test_small_disk_asymptote(table):
    deviations = []
    for k, r in enumerate((0.04, 0.02, 0.01)):
        dm = green_kubo(Q0, table, r, 4_000_000, J=8, rng=np.random.default_rng(k))
        scale = small_r_asymptote(table, r).m[0, 0]
        ratio = dm.m / mean_free_path(table, r) / scale
        se = dm.stderr / mean_free_path(table, r) / scale
        deviations.append((float(np.abs(ratio - np.eye(2)).max()), float(se.max())))
    for (big, _), (small, se) in zip(deviations, deviations[1:]):
        assert small <= big + 3 * se
    assert deviations[-1][0] <= 0.25


def test_lyapunov_estimators_agree(table):
    cocycle = lyapunov_exponent(Q0, table, R, 1_000_000, np.random.default_rng(1))
    separation = lyapunov_separation(Q0, table, R, 1_000_000, np.random.default_rng(2))
    assert cocycle.chi > 0.0
    assert cocycle.chi >= cocycle.lower_bound
    assert abs(cocycle.chi - separation.chi) <= 0.02 * cocycle.chi


def test_ballistic_regime(table):
    M, chi, u0, c, N = 1e6, 0.5, (0.0, 1.0), 0.4, 500
    summary = run_thm1(M, chi, u0, c, N, table, R, Q0, seed=11, workers=WORKERS)
    sigma = sigma_along_path(table, R, Q0, chi, u0, c, 200_000, seed=11, workers=WORKERS)
    params = LimitParams(regime="thm1", c=c, sigma_field=sigma, Q0=Q0, chi=chi, u0=u0)
    report = thm1_limit_report(summary, params)
    assert report.passed, report


def test_diffusive_regime_against_sigma_grid(table):
    M, c, N, delta0 = 1e6, 1.0, 500, 0.02
    summary = run_thm2(M, c, N, delta0, table, R, Q0, seed=12, workers=WORKERS)
    gk = green_kubo(Q0, table, R, 1_000_000, rng=np.random.default_rng(12))
    assert early_time_report(summary, gk.m / mean_free_path(table, R)).passed

    grid = build_sigma_grid(table, R, 8, 200_000, seed=12, workers=WORKERS)
    params = LimitParams(
        regime="thm2",
        c=c,
        sigma_field=GridSigma.from_grid(grid),
        Q0=Q0,
        stop_clearance=R + delta0,
        table=table,
        N=N,
        seed=13,
    )
    report = compare_ensembles(summary, simulate_limit(params))
    assert report.ks_passed, report
    assert report.stopped_passed, report


def test_small_disk_regime(table):
    M, r, c, N, delta0 = 1e6, 0.01, 0.5, 500, 0.02
    summary = run_thm3(M, r, c, N, delta0, table, Q0, seed=14, workers=WORKERS)
    report = isotropic_report(summary, table)
    assert report.passed, report
    params = LimitParams(
        regime="thm3", c=c, sigma_field=isotropic_sigma(table), Q0=Q0, stop_clearance=delta0, table=table, N=N
    )
    assert compare_ensembles(summary, simulate_limit(params, seed=15)).stopped_passed


def test_integrator_self_test_at_scale():
    unit = ConstantSigma(np.eye(2))
    base = {"regime": "thm2", "c": 1.0, "sigma_field": unit, "Q0": (0.0, 0.0), "N": 10_000}
    coarse = simulate_limit(LimitParams(**base, h=1 / 400, substeps=2))
    fine = simulate_limit(LimitParams(**base, h=1 / 800))
    assert math.isclose(coarse.tau[-1], 1.0)
    # three distinct entries of two matrices
    z = z_critical(0.01, 6)
    cov_V, se_V = covariance_with_se(coarse.V[:, -1])
    cov_Q, se_Q = covariance_with_se(coarse.Q[:, -1])
    assert np.all(np.abs(cov_V - np.eye(2)) <= z * se_V)
    assert np.all(np.abs(cov_Q - np.eye(2) / 3.0) <= z * se_Q)
    for tau_index in range(len(coarse.tau)):
        cov_coarse, se = covariance_with_se(coarse.Q[:, tau_index])
        cov_fine, _ = covariance_with_se(fine.Q[:, tau_index])
        assert np.all(np.abs(cov_coarse - cov_fine) < se)
