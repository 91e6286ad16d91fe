import numpy as np
import numpy.testing as npt
import pytest

from brownian_billiards.stats import (
    batch_means,
    covariance_with_se,
    exponential_decay_fit,
    kurtosis_band,
    ks_two_sample,
    mean_with_se,
    two_proportion_z,
    z_critical,
)


def test_batch_means_of_constant_series():
    mean, se = batch_means(np.full(640, 2.5))
    assert mean == pytest.approx(2.5)
    assert se == 0.0


def test_batch_means_vector_series(rng):
    x = rng.normal(size=(3200, 2))
    mean, se = batch_means(x)
    assert mean.shape == se.shape == (2,)
    npt.assert_allclose(mean, x.mean(axis=0))


def test_batch_means_needs_a_sample_per_batch():
    with pytest.raises(ValueError):
        batch_means(np.ones(10), 32)


def test_mean_with_se(rng):
    x = rng.normal(size=(4000, 2))
    mean, se = mean_with_se(x)
    npt.assert_allclose(se, x.std(axis=0, ddof=1) / np.sqrt(4000))
    assert np.all(np.abs(mean) < 4 * se)


def test_covariance_matches_numpy(rng):
    x = rng.multivariate_normal([0, 0], [[2.0, 0.5], [0.5, 1.0]], size=5000)
    cov, se = covariance_with_se(x)
    npt.assert_allclose(cov, np.cov(x, rowvar=False))
    assert np.all(np.abs(cov - [[2.0, 0.5], [0.5, 1.0]]) < 4 * se)


def test_kurtosis_band():
    assert kurtosis_band(500) == pytest.approx(0.657, abs=1e-3)


@pytest.mark.parametrize("alpha, n_tests, expected", [(0.05, 1, 1.959964), (0.01, 5, 3.090232)])
def test_z_critical(alpha, n_tests, expected):
    assert z_critical(alpha, n_tests) == pytest.approx(expected, abs=1e-6)


def test_two_proportion_z():
    assert two_proportion_z(10, 100, 20, 200) == 0.0
    assert two_proportion_z(0, 50, 0, 80) == 0.0
    assert two_proportion_z(50, 100, 10, 100) > 5.0


def test_ks_identical_samples(rng):
    x = rng.normal(size=300)
    stat, p = ks_two_sample(x, x)
    assert stat == 0.0
    assert p == pytest.approx(1.0)


def test_exponential_decay_fit():
    norms = np.exp(-0.5 * np.arange(12))
    slope, stderr = exponential_decay_fit(norms)
    assert slope == pytest.approx(-0.5)
    assert stderr == pytest.approx(0.0, abs=1e-10)


def test_exponential_decay_fit_needs_three_lags():
    with pytest.raises(ValueError):
        exponential_decay_fit(np.array([1.0, 0.5, 0.25, 0.0, 0.0]))
