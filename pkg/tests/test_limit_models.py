import math

import numpy as np
import numpy.testing as npt
import pytest
from pydantic import ValidationError

from brownian_billiards.errors import ArgumentError, DomainError
from brownian_billiards.geometry import dist_to_boundary_array
from brownian_billiards.limit_models import (
    ConstantSigma,
    GridSigma,
    LimitParams,
    PathSigma,
    analytic_cov_thm1,
    isotropic_sigma,
    pathwise_sensitivity,
    simulate_limit,
)
from brownian_billiards.stats import covariance_with_se, excess_kurtosis, kurtosis_band

UNIT = ConstantSigma(np.eye(2))


def free_params(**kwargs) -> LimitParams:
    "Integrated Brownian motion: no table, no stopping"
    return LimitParams(**({"regime": "thm2", "c": 1.0, "sigma_field": UNIT, "N": 4000, "h": 1 / 200} | kwargs))


def test_step_count_fits_the_checkpoints():
    params = LimitParams(regime="thm3", c=0.5, sigma_field=UNIT)
    assert params.n_steps == 1000
    npt.assert_allclose(params.tau_grid, 0.5 * np.arange(1, 9) / 8)
    assert free_params(h=0.3).n_steps == 8


def test_u0_must_be_a_unit_vector():
    with pytest.raises(ValidationError):
        LimitParams(regime="thm1", c=1.0, sigma_field=UNIT, u0=(1.0, 1.0))


def test_integrated_brownian_motion_moments():
    """Var V(τ) = τ and Var Q(τ) = τ³/3 for unit noise"""
    ensemble = simulate_limit(free_params(Q0=(0.0, 0.0)))
    cov_V, se_V = covariance_with_se(ensemble.V[:, -1])
    cov_Q, se_Q = covariance_with_se(ensemble.Q[:, -1])
    assert np.all(np.abs(cov_V - np.eye(2)) <= 4 * se_V)
    assert np.all(np.abs(cov_Q - np.eye(2) / 3) <= 4 * se_Q)
    assert not ensemble.stopped.any()


def test_halving_the_step_moves_estimates_less_than_one_se():
    """The same Brownian increments drive both runs; only the discretization differs"""
    coarse = simulate_limit(free_params(N=2000, h=1 / 200, substeps=2))
    fine = simulate_limit(free_params(N=2000, h=1 / 400))
    npt.assert_allclose(coarse.V, fine.V, atol=1e-12)
    cov_coarse, se = covariance_with_se(coarse.Q[:, -1])
    cov_fine, _ = covariance_with_se(fine.Q[:, -1])
    assert np.all(np.abs(cov_coarse - cov_fine) < se)


def test_paths_do_not_depend_on_block_layout():
    small = simulate_limit(free_params(N=300), seed=5)
    large = simulate_limit(free_params(N=600), seed=5)
    npt.assert_allclose(small.Q, large.Q[:300], rtol=1e-12, atol=1e-14)
    again = simulate_limit(free_params(N=300), seed=5)
    npt.assert_array_equal(small.Q, again.Q)


def test_stopped_paths_are_absorbed(table):
    clearance = 0.07
    params = LimitParams(
        regime="thm2",
        c=1.0,
        sigma_field=ConstantSigma(25.0 * np.eye(2)),
        stop_clearance=clearance,
        table=table,
        N=500,
    )
    ensemble = simulate_limit(params)
    assert ensemble.stopped.sum() > 100
    stopped = ensemble.stopped
    assert np.all(ensemble.frozen[stopped, -1])
    assert np.all(ensemble.stop_tau[stopped] <= params.c)
    assert np.all(np.isnan(ensemble.stop_tau[~stopped]))
    # once frozen, always frozen, with V = 0 and Q held
    assert np.all(np.diff(ensemble.frozen.astype(int), axis=1) >= 0)
    frozen = ensemble.frozen
    npt.assert_array_equal(ensemble.V[frozen], 0.0)
    final_Q = ensemble.Q[stopped, -1]
    for k in range(params.n_checkpoints):
        held = frozen[stopped, k]
        npt.assert_array_equal(ensemble.Q[stopped, k][held], final_Q[held])
    assert np.all(dist_to_boundary_array(final_Q, table) <= clearance)


def test_thm3_isotropic_sigma(table):
    npt.assert_allclose(isotropic_sigma(table).sigma2, 5.9985 * np.eye(2), atol=1e-3)


def test_analytic_covariance_constant_sigma():
    params = LimitParams(regime="thm1", c=1.0, sigma_field=UNIT, chi=0.6, u0=(0.0, 1.0))
    cov_V, cov_Q = analytic_cov_thm1(params, 0.5)
    factor = 0.64**1.5
    npt.assert_allclose(cov_V, factor * 0.5 * np.eye(2), atol=1e-10)
    npt.assert_allclose(cov_Q, factor * 0.5**3 / 3 * np.eye(2), atol=1e-10)


def test_analytic_covariance_tau_out_of_range():
    params = LimitParams(regime="thm1", c=1.0, sigma_field=UNIT)
    with pytest.raises(ArgumentError):
        analytic_cov_thm1(params, 1.5)


def test_analytic_covariance_path_leaves_admissible_region(table):
    params = LimitParams(
        regime="thm1", c=1.0, sigma_field=UNIT, chi=0.9, u0=(0.0, 1.0), table=table, stop_clearance=0.07
    )
    with pytest.raises(DomainError):
        analytic_cov_thm1(params, 1.0)
    with pytest.raises(DomainError):
        simulate_limit(params)


def test_thm1_simulation_matches_quadrature():
    sigma = ConstantSigma(np.diag([1.0, 2.0]))
    params = LimitParams(regime="thm1", c=1.0, sigma_field=sigma, chi=0.5, u0=(1.0, 0.0), N=4000, h=1 / 200)
    ensemble = simulate_limit(params)
    cov_V, cov_Q = analytic_cov_thm1(params, 1.0)
    est_V, se_V = covariance_with_se(ensemble.V[:, -1])
    est_Q, se_Q = covariance_with_se(ensemble.Q[:, -1])
    assert np.all(np.abs(est_V - cov_V) <= 4 * se_V)
    assert np.all(np.abs(est_Q - cov_Q) <= 4 * se_Q)


@pytest.mark.parametrize("regime", ["thm1", "thm3"])
def test_unstopped_increments_are_independent_and_gaussian(regime):
    sigma = ConstantSigma(np.array([[1.0, 0.3], [0.3, 2.0]]))
    chi = 0.5 if regime == "thm1" else 0.0
    params = LimitParams(regime=regime, c=1.0, sigma_field=sigma, chi=chi, N=4000, h=1 / 200)
    ensemble = simulate_limit(params, seed=11)
    assert not ensemble.stopped.any()
    early = ensemble.V[:, 1] - ensemble.V[:, 0]
    late = ensemble.V[:, 7] - ensemble.V[:, 4]
    # a sample correlation of independent samples has standard error 1/√N
    band = 3.0 / math.sqrt(params.N)
    for a in range(2):
        for b in range(2):
            assert abs(np.corrcoef(early[:, a], late[:, b])[0, 1]) <= band
    assert np.all(np.abs(excess_kurtosis(ensemble.V[:, -1])) <= kurtosis_band(params.N))


def test_grid_sigma_interpolation():
    values = np.zeros((2, 2, 2, 2))
    values[0, 0] = np.eye(2)
    values[1, 0] = 3 * np.eye(2)
    values[0, 1] = np.eye(2)
    values[1, 1] = 3 * np.eye(2)
    field = GridSigma(values)
    points = np.array([[0.0, 0.0], [0.5, 0.0], [0.25, 0.3], [1.25, -0.7], [0.75, 0.0]])
    cov = field.covariance_at(points)
    npt.assert_allclose(cov[0], np.eye(2))
    npt.assert_allclose(cov[1], 3 * np.eye(2))
    npt.assert_allclose(cov[2], 2 * np.eye(2))
    # periodic in both directions
    npt.assert_allclose(cov[3], cov[2])
    npt.assert_allclose(cov[4], 2 * np.eye(2))
    npt.assert_allclose(field.root_at(points[:1])[0], np.eye(2), atol=1e-12)


def test_path_sigma_interpolates_along_the_path():
    values = np.stack([np.eye(2), 3 * np.eye(2)])
    field = PathSigma((0.5, 0.0), (0.0, 0.5), np.array([0.0, 1.0]), values)
    cov = field.covariance_at(np.array([[0.5, 0.25], [0.7, 0.0], [0.5, 2.0]]))
    npt.assert_allclose(cov[0], 2 * np.eye(2))
    npt.assert_allclose(cov[1], np.eye(2))
    npt.assert_allclose(cov[2], 3 * np.eye(2))


def test_pathwise_sensitivity_shrinks_with_eps():
    params = free_params(N=200, Q0=(0.0, 0.0))
    gaps = pathwise_sensitivity(params, [0.1, 0.01, 0.001])
    assert gaps[0.1] > gaps[0.01] > gaps[0.001] > 0.0


def test_ensemble_frame_layout():
    ensemble = simulate_limit(free_params(N=3))
    frame = ensemble.to_frame()
    assert frame.columns == ["path", "tau", "Vx", "Vy", "Qx", "Qy", "frozen"]
    assert frame.height == 3 * 8
    assert frame["path"].to_list()[:9] == [0] * 8 + [1]
