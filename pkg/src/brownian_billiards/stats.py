"""
Monte Carlo statistics shared by the transport estimators and the harness:
batch-means errors for correlated series, moments with standard errors for
i.i.d. ensembles, and the hypothesis tests used to compare ensembles.
"""

import math

import numpy as np
from scipy import stats as sps


def batch_means(x: np.ndarray, n_batches: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """
    Mean of a (possibly correlated) series along axis 0 and its standard error
    from the spread of non-overlapping batch means. Trailing samples that do not
    fill a batch are dropped from both.
    """
    x = np.asarray(x, dtype=float)
    size = len(x) // n_batches
    if size == 0:
        raise ValueError(f"cannot form {n_batches} batches from {len(x)} samples")
    batches = x[: size * n_batches].reshape((n_batches, size) + x.shape[1:]).mean(axis=1)
    mean = batches.mean(axis=0)
    if n_batches < 2:
        return mean, np.full_like(mean, np.nan)
    return mean, batches.std(axis=0, ddof=1) / math.sqrt(n_batches)


def mean_with_se(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    return samples.mean(axis=0), samples.std(axis=0, ddof=1) / math.sqrt(n)


def covariance_with_se(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Sample covariance of (N, 2) data and the standard error of each entry, from
    the variance of the centered products.
    """
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    centered = samples - samples.mean(axis=0)
    products = centered[:, :, None] * centered[:, None, :]
    cov = products.sum(axis=0) / (n - 1)
    se = products.std(axis=0, ddof=1) / math.sqrt(n)
    return cov, se


def excess_kurtosis(samples: np.ndarray) -> np.ndarray:
    return np.asarray(sps.kurtosis(samples, axis=0, fisher=True), dtype=float)


def kurtosis_band(n: int) -> float:
    "Three standard errors of the excess kurtosis of n Gaussian samples"
    return 3.0 * math.sqrt(24.0 / n)


def z_critical(alpha: float, n_tests: int = 1) -> float:
    "Two-sided normal critical value with a Bonferroni correction over n_tests"
    return float(sps.norm.isf(alpha / (2.0 * n_tests)))


def two_proportion_z(k1: int, n1: int, k2: int, n2: int) -> float:
    pooled = (k1 + k2) / (n1 + n2)
    denom = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2))
    if denom == 0.0:
        return 0.0
    return (k1 / n1 - k2 / n2) / denom


def ks_two_sample(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    result = sps.ks_2samp(a, b)
    return float(result.statistic), float(result.pvalue)


def exponential_decay_fit(norms: np.ndarray, j_start: int = 2) -> tuple[float, float]:
    """
    Least-squares slope of ln‖C_j‖ against j for j >= j_start (zero norms
    ignored) and its standard error.
    """
    norms = np.asarray(norms, dtype=float)
    lags = np.arange(len(norms))
    keep = (lags >= j_start) & (norms > 0.0)
    if keep.sum() < 3:
        raise ValueError("need at least three positive lags to fit a decay rate")
    fit = sps.linregress(lags[keep], np.log(norms[keep]))
    return float(fit.slope), float(fit.stderr)
