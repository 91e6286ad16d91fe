"""
Billiard ensembles under the three scalings, their summaries, and the checks that
compare them with the limit processes.

Each regime runs N independent systems (particle start drawn from its own stream
SeedSequence([seed, path])), records the disk at 8 equally spaced rescaled times
τ_k = c·k/8, and converts to the rescaled pair (𝒬, 𝒱):

  thm1  t = τ√M            𝒬 = M^{1/4}(Q − Q₀ − t·V₀)   𝒱 = M^{3/4}(V − V₀)
  thm2  t = τM^{2/3}        𝒬 = Q₀ + (Q − Q₀)            𝒱 = M^{2/3}·V
  thm3  t = τr^{-1/3}M^{2/3} 𝒬 = Q₀ + (Q − Q₀)           𝒱 = r^{-1/3}M^{2/3}·V

Q − Q₀ is the unwrapped displacement.
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
import polars as pl
from pydantic import BaseModel, ConfigDict, Field

from brownian_billiards.billiard import mean_free_path
from brownian_billiards.dynamics import ObservationPlan, SimParams, disk_contact_time, evolve, sample_initial_state
from brownian_billiards.errors import ArgumentError, ConfigurationError
from brownian_billiards.geometry import Point, TorusTable, wrap
from brownian_billiards.limit_models import (
    LimitEnsemble,
    LimitParams,
    PathSigma,
    analytic_cov_thm1,
    ensemble_frame,
)
from brownian_billiards.parallel import run_pool
from brownian_billiards.stats import (
    covariance_with_se,
    excess_kurtosis,
    ks_two_sample,
    kurtosis_band,
    mean_with_se,
    two_proportion_z,
    z_critical,
)
from brownian_billiards.transport import GreenKuboJob, run_green_kubo_job

logger = logging.getLogger(__name__)

N_CHECKPOINTS = 8
MIN_PATHS = 50
WALL_FRACTION_LIMIT = 0.01


class EnsembleSummary(BaseModel):
    """
    Per-checkpoint moments of a rescaled ensemble. The raw checkpoint samples
    ride along for two-sample tests and CSV export but are not serialized.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    regime: Literal["thm1", "thm2", "thm3"]
    source: Literal["billiard", "limit"]
    tau_grid: list[float]
    mean_V: list[list[float]]
    mean_V_se: list[list[float]]
    mean_Q: list[list[float]]
    mean_Q_se: list[list[float]]
    cov_V: list[list[list[float]]]
    cov_V_se: list[list[list[float]]]
    cov_Q: list[list[list[float]]]
    cov_Q_se: list[list[list[float]]]
    kurtosis_V: list[list[float]] = Field(..., description="Excess kurtosis per checkpoint and component")
    kurtosis_Q: list[list[float]]
    n_paths: int = Field(..., ge=1)
    n_stopped: int = Field(..., ge=0)
    increment_p99: float = Field(..., description="99th percentile of the largest checkpoint increment of 𝒱")
    collision_rate: float | None = Field(None, description="Particle collisions per unit physical time")
    n_dropped: int = Field(0, description="Paths discarded after disk-wall contact")

    samples_V: np.ndarray | None = Field(None, exclude=True, repr=False)
    samples_Q: np.ndarray | None = Field(None, exclude=True, repr=False)
    samples_frozen: np.ndarray | None = Field(None, exclude=True, repr=False)

    @property
    def stopped_fraction(self) -> float:
        return self.n_stopped / self.n_paths

    def to_frame(self) -> pl.DataFrame:
        if self.samples_V is None:
            raise ArgumentError("summary carries no checkpoint samples")
        return ensemble_frame(self.tau_grid, self.samples_V, self.samples_Q, self.samples_frozen)

    def is_psd_within_noise(self, n_se: float = 3.0) -> bool:
        for cov, se in ((self.cov_V, self.cov_V_se), (self.cov_Q, self.cov_Q_se)):
            for c, s in zip(np.asarray(cov), np.asarray(se)):
                if np.linalg.eigvalsh(c)[0] < -n_se * s.max():
                    return False
        return True


def summarize(
    regime: str,
    source: str,
    tau: np.ndarray,
    V: np.ndarray,
    Q: np.ndarray,
    frozen: np.ndarray,
    stopped: np.ndarray,
    collision_rate: float | None = None,
    n_dropped: int = 0,
) -> EnsembleSummary:
    "V, Q: (N, K, 2) checkpoint samples; frozen: (N, K); stopped: (N,)"
    n, k = V.shape[:2]
    if n < 2:
        raise ArgumentError(f"an ensemble summary needs at least 2 paths, got {n}")
    mean_V, mean_V_se = mean_with_se(V)
    mean_Q, mean_Q_se = mean_with_se(Q)
    cov_V, cov_V_se = zip(*(covariance_with_se(V[:, j]) for j in range(k)))
    cov_Q, cov_Q_se = zip(*(covariance_with_se(Q[:, j]) for j in range(k)))
    with np.errstate(all="ignore"):
        kurt_V = np.nan_to_num(excess_kurtosis(V), nan=0.0)
        kurt_Q = np.nan_to_num(excess_kurtosis(Q), nan=0.0)
    steps = np.diff(np.concatenate((np.zeros((n, 1, 2)), V), axis=1), axis=1)
    increment_p99 = float(np.percentile(np.linalg.norm(steps, axis=-1).max(axis=1), 99))
    return EnsembleSummary(
        regime=regime,
        source=source,
        tau_grid=[float(t) for t in tau],
        mean_V=mean_V.tolist(),
        mean_V_se=mean_V_se.tolist(),
        mean_Q=mean_Q.tolist(),
        mean_Q_se=mean_Q_se.tolist(),
        cov_V=np.array(cov_V).tolist(),
        cov_V_se=np.array(cov_V_se).tolist(),
        cov_Q=np.array(cov_Q).tolist(),
        cov_Q_se=np.array(cov_Q_se).tolist(),
        kurtosis_V=kurt_V.tolist(),
        kurtosis_Q=kurt_Q.tolist(),
        n_paths=n,
        n_stopped=int(np.count_nonzero(stopped)),
        increment_p99=increment_p99,
        collision_rate=collision_rate,
        n_dropped=n_dropped,
        samples_V=V,
        samples_Q=Q,
        samples_frozen=frozen,
    )


def summarize_limit(ensemble: LimitEnsemble) -> EnsembleSummary:
    return summarize(
        ensemble.regime, "limit", ensemble.tau, ensemble.V, ensemble.Q, ensemble.frozen, ensemble.stopped
    )


# --- billiard ensembles ---


@dataclass(frozen=True)
class PathJob:
    table: TorusTable
    params: SimParams
    Q0: Point
    V0: Point
    times: tuple[float, ...]
    seed: int
    index: int


@dataclass(frozen=True)
class PathResult:
    disp: np.ndarray
    V: np.ndarray
    frozen: np.ndarray
    stop_reason: str
    n_collisions: int
    elapsed: float


def run_path(job: PathJob) -> PathResult:
    rng = np.random.default_rng(np.random.SeedSequence([job.seed, job.index]))
    state = sample_initial_state(job.table, job.Q0, job.V0, job.params, rng)
    trajectory = evolve(state, job.params, job.table, ObservationPlan(times=job.times))
    final = trajectory.final
    return PathResult(
        disp=trajectory.checkpoint_disp,
        V=trajectory.checkpoint_V,
        frozen=trajectory.checkpoint_frozen,
        stop_reason=trajectory.stop_reason,
        n_collisions=final.n_collisions,
        elapsed=final.t - trajectory.initial.t,
    )


def _run_ensemble(
    table: TorusTable,
    params: SimParams,
    Q0: Point,
    V0: Point,
    times: np.ndarray,
    N: int,
    seed: int,
    workers: int,
    label: str,
) -> list[PathResult]:
    if N < MIN_PATHS:
        raise ArgumentError(f"ensembles need at least {MIN_PATHS} paths, got {N}")
    jobs = [PathJob(table, params, Q0, V0, tuple(float(t) for t in times), seed, i) for i in range(N)]
    return run_pool(run_path, jobs, workers, label=label)


def _collision_rate(results: list[PathResult]) -> float | None:
    elapsed = sum(r.elapsed for r in results)
    return sum(r.n_collisions for r in results) / elapsed if elapsed > 0.0 else None


def _tau_grid(c: float, n_checkpoints: int) -> np.ndarray:
    return c * np.arange(1, n_checkpoints + 1) / n_checkpoints


def run_thm1(
    M: float,
    chi: float,
    u0: Point,
    c: float,
    N: int,
    table: TorusTable,
    r_disk: float,
    Q0: Point = (0.5, 0.0),
    seed: int = 0,
    workers: int = 1,
    n_checkpoints: int = N_CHECKPOINTS,
) -> EnsembleSummary:
    if math.isinf(M):
        raise ArgumentError("the thm1 scaling needs a finite mass ratio")
    if not 0.0 <= chi < 1.0:
        raise ArgumentError(f"chi must lie in [0, 1), got {chi}")
    if abs(math.hypot(*u0) - 1.0) > 1e-9:
        raise ArgumentError(f"u0 must be a unit vector, got {u0}")
    root_M = math.sqrt(M)
    V0 = (chi * u0[0] / root_M, chi * u0[1] / root_M)
    c0 = disk_contact_time(table, Q0, V0, r_disk) / root_M
    if c >= c0:
        raise ConfigurationError(f"c = {c} reaches the scatterers: the straight path touches one at τ = {c0:.6g}")

    tau = _tau_grid(c, n_checkpoints)
    params = SimParams(M=M, r=r_disk, mode="free", horizon_time=c * root_M, seed=seed)
    results = _run_ensemble(table, params, Q0, V0, tau * root_M, N, seed, workers, "thm1 path")

    walled = [r for r in results if r.stop_reason == "disk_wall"]
    if len(walled) > WALL_FRACTION_LIMIT * N:
        raise ConfigurationError(
            f"{len(walled)} of {N} paths touched a scatterer before τ = {c}: c is too large"
        )
    kept = [r for r in results if r.stop_reason != "disk_wall"]
    if walled:
        logger.info("Dropped %d paths with disk-wall contact", len(walled))
    disp = np.stack([r.disp for r in kept])
    V = np.stack([r.V for r in kept])
    t = (tau * root_M)[None, :, None]
    Q_scaled = M**0.25 * (disp - t * np.asarray(V0))
    V_scaled = M**0.75 * (V - np.asarray(V0))
    frozen = np.zeros(V.shape[:2], dtype=bool)
    return summarize(
        "thm1",
        "billiard",
        tau,
        V_scaled,
        Q_scaled,
        frozen,
        np.zeros(len(kept), dtype=bool),
        _collision_rate(kept),
        n_dropped=len(walled),
    )


def _stopped_regime(
    regime: str,
    scale: float,
    M: float,
    c: float,
    N: int,
    delta0: float,
    table: TorusTable,
    r_disk: float,
    Q0: Point,
    seed: int,
    workers: int,
    n_checkpoints: int,
) -> EnsembleSummary:
    tau = _tau_grid(c, n_checkpoints)
    params = SimParams(M=M, r=r_disk, delta0=delta0, mode="stopped", horizon_time=c * scale, seed=seed)
    results = _run_ensemble(table, params, Q0, (0.0, 0.0), tau * scale, N, seed, workers, f"{regime} path")
    disp = np.stack([r.disp for r in results])
    V = np.stack([r.V for r in results])
    frozen = np.stack([r.frozen for r in results])
    Q_scaled = np.asarray(Q0) + disp
    V_scaled = scale * V
    stopped = frozen[:, -1]
    return summarize(regime, "billiard", tau, V_scaled, Q_scaled, frozen, stopped, _collision_rate(results))


def run_thm2(
    M: float,
    c: float,
    N: int,
    delta0: float,
    table: TorusTable,
    r_disk: float,
    Q0: Point = (0.5, 0.0),
    seed: int = 0,
    workers: int = 1,
    n_checkpoints: int = N_CHECKPOINTS,
) -> EnsembleSummary:
    tau = _tau_grid(c, n_checkpoints)
    if math.isinf(M):
        # the disk never moves
        zeros = np.zeros((N, n_checkpoints, 2))
        Q = np.broadcast_to(np.asarray(wrap(*Q0)), zeros.shape).copy()
        return summarize("thm2", "billiard", tau, zeros, Q, zeros[..., 0].astype(bool), np.zeros(N, dtype=bool))
    return _stopped_regime(
        "thm2", M ** (2.0 / 3.0), M, c, N, delta0, table, r_disk, Q0, seed, workers, n_checkpoints
    )


def run_thm3(
    M: float,
    r_disk: float,
    c: float,
    N: int,
    delta0: float,
    table: TorusTable,
    Q0: Point = (0.5, 0.0),
    seed: int = 0,
    workers: int = 1,
    n_checkpoints: int = N_CHECKPOINTS,
) -> EnsembleSummary:
    if r_disk <= 0.0:
        raise ArgumentError("r_disk = 0 leaves no interaction between disk and particle")
    if math.isinf(M):
        raise ArgumentError("the thm3 scaling needs a finite mass ratio")
    scale = r_disk ** (-1.0 / 3.0) * M ** (2.0 / 3.0)
    return _stopped_regime("thm3", scale, M, c, N, delta0, table, r_disk, Q0, seed, workers, n_checkpoints)


def sigma_along_path(
    table: TorusTable,
    r_disk: float,
    Q0: Point,
    chi: float,
    u0: Point,
    c: float,
    n_collisions: int,
    J: int | None = None,
    n_nodes: int = 5,
    seed: int = 0,
    workers: int = 1,
) -> PathSigma:
    "σ²_Q = σ̄²_Q / L̄ by Green-Kubo at n_nodes points of the thm1 path Q₀ + s·χ·u₀, s ∈ [0, c]"
    s_nodes = np.linspace(0.0, c, n_nodes) if chi > 0.0 else np.zeros(1)
    velocity = (chi * u0[0], chi * u0[1])
    points = [wrap(Q0[0] + s * velocity[0], Q0[1] + s * velocity[1]) for s in s_nodes]
    jobs = [GreenKuboJob(Q, table, r_disk, n_collisions, J, seed, k) for k, Q in enumerate(points)]
    results = run_pool(run_green_kubo_job, jobs, workers, label="path node")
    mfp = mean_free_path(table, r_disk)
    values = np.stack([dm.m / mfp for dm in results])
    return PathSigma(tuple(Q0), velocity, s_nodes, values)


# --- checks against closed-form targets ---


class TargetCheck(BaseModel):
    quantity: str
    tau: float
    estimate: list[list[float]]
    target: list[list[float]]
    rel_error: float
    tolerance: float
    passed: bool


class LimitReport(BaseModel):
    regime: str
    checks: list[TargetCheck]
    mean_within_3se: bool = Field(..., description="Mean of 𝒱 within 3 SE of zero at every checkpoint")
    kurtosis_within_band: bool
    cross_cov_within_3se: bool | None = None
    provisional: bool = Field(True, description="Tolerances are empirical: no convergence rate in M is known")
    passed: bool


def _rel_error(estimate: np.ndarray, target: np.ndarray) -> float:
    return float(np.linalg.norm(estimate - target) / np.linalg.norm(target))


def _check(quantity: str, tau: float, estimate: np.ndarray, target: np.ndarray, tol: float) -> TargetCheck:
    err = _rel_error(estimate, target)
    return TargetCheck(
        quantity=quantity,
        tau=tau,
        estimate=np.asarray(estimate).tolist(),
        target=np.asarray(target).tolist(),
        rel_error=err,
        tolerance=tol,
        passed=err <= tol,
    )


def _mean_ok(summary: EnsembleSummary) -> bool:
    mean = np.asarray(summary.mean_V)
    se = np.asarray(summary.mean_V_se)
    return bool(np.all(np.abs(mean) <= 3.0 * se + 1e-300))


def _kurtosis_ok(summary: EnsembleSummary) -> bool:
    return bool(np.all(np.abs(np.asarray(summary.kurtosis_V)) <= kurtosis_band(summary.n_paths)))


def _midpoint(summary: EnsembleSummary) -> int:
    tau = np.asarray(summary.tau_grid)
    return int(np.argmin(np.abs(tau - 0.5 * tau[-1])))


def thm1_limit_report(
    summary: EnsembleSummary,
    params: LimitParams,
    tol_V: float = 0.15,
    tol_Q: float = 0.20,
) -> LimitReport:
    "Cov 𝒱 and Cov 𝒬 at τ = c/2 against the quadrature of the Gaussian limit"
    j = _midpoint(summary)
    tau = summary.tau_grid[j]
    cov_V, cov_Q = analytic_cov_thm1(params, tau)
    checks = [
        _check("cov_V", tau, np.asarray(summary.cov_V[j]), cov_V, tol_V),
        _check("cov_Q", tau, np.asarray(summary.cov_Q[j]), cov_Q, tol_Q),
    ]
    mean_ok = _mean_ok(summary)
    kurt_ok = _kurtosis_ok(summary)
    return LimitReport(
        regime="thm1",
        checks=checks,
        mean_within_3se=mean_ok,
        kurtosis_within_band=kurt_ok,
        passed=mean_ok and kurt_ok and all(c.passed for c in checks),
    )


def early_time_report(
    summary: EnsembleSummary,
    sigma2_Q0: np.ndarray,
    early_fraction: float = 0.1,
    tol: float = 0.20,
) -> LimitReport:
    """
    Before Q moves appreciably Cov 𝒱(τ) ≈ σ²_{Q₀}·τ. Checkpoints with τ ≤
    early_fraction·c are checked; the first checkpoint always is.
    """
    tau = np.asarray(summary.tau_grid)
    limit = max(early_fraction * tau[-1], tau[0])
    checks = [
        _check("cov_V", float(t), np.asarray(summary.cov_V[j]), t * np.asarray(sigma2_Q0), tol)
        for j, t in enumerate(tau)
        if t <= limit + 1e-12
    ]
    mean_ok = _mean_ok(summary)
    return LimitReport(
        regime=summary.regime,
        checks=checks,
        mean_within_3se=mean_ok,
        kurtosis_within_band=_kurtosis_ok(summary),
        passed=mean_ok and all(c.passed for c in checks),
    )


def isotropic_report(summary: EnsembleSummary, table: TorusTable, tol: float = 0.20) -> LimitReport:
    "Var 𝒱_i(c/2) against σ₀²·τ with σ₀² = 8 / (3·Area), and zero cross-covariance"
    j = _midpoint(summary)
    tau = summary.tau_grid[j]
    sigma0_2 = 8.0 / (3.0 * table.area)
    cov = np.asarray(summary.cov_V[j])
    se = np.asarray(summary.cov_V_se[j])
    checks = [
        _check(f"var_V{axis}", tau, cov[i : i + 1, i : i + 1], np.array([[sigma0_2 * tau]]), tol)
        for i, axis in enumerate("xy")
    ]
    cross_ok = bool(abs(cov[0, 1]) <= 3.0 * se[0, 1])
    mean_ok = _mean_ok(summary)
    kurt_ok = _kurtosis_ok(summary)
    return LimitReport(
        regime="thm3",
        checks=checks,
        mean_within_3se=mean_ok,
        kurtosis_within_band=kurt_ok,
        cross_cov_within_3se=cross_ok,
        passed=mean_ok and kurt_ok and cross_ok and all(c.passed for c in checks),
    )


# --- two-ensemble comparison ---


class CompareThresholds(BaseModel):
    alpha: float = Field(0.01, gt=0.0, lt=1.0, description="Family-wise level of each test family")
    cov_rel_tol: float | None = Field(
        None, gt=0.0, description="Also accept a covariance entry within this relative error"
    )


class ComparisonReport(BaseModel):
    alpha: float
    n_checkpoints: int
    mean_max_z: float
    mean_critical: float
    means_passed: bool
    cov_max_z: float
    cov_max_rel_error: float
    cov_critical: float
    cov_passed: bool
    ks_min_pvalue: float
    ks_threshold: float
    ks_passed: bool
    kurtosis_outside_band: int = Field(..., description="Informational: entries beyond 3·√(24/N)")
    stopped_z: float
    stopped_passed: bool
    passed: bool


def _z(diff: np.ndarray, se_a: np.ndarray, se_b: np.ndarray) -> np.ndarray:
    se = np.hypot(se_a, se_b)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(diff) / se
    # zero spread on both sides: equal values pass, different values fail
    return np.where(se > 0.0, z, np.where(diff == 0.0, 0.0, np.inf))


def compare_ensembles(
    a: EnsembleSummary | LimitEnsemble,
    b: EnsembleSummary | LimitEnsemble,
    thresholds: CompareThresholds = CompareThresholds(),
) -> ComparisonReport:
    """
    Componentwise mean z-tests, covariance-entry z-tests, two-sample KS tests of
    every marginal and a two-proportion test of the stopped fractions. Each family
    is Bonferroni-corrected over its checkpoints and components.
    """
    if isinstance(a, LimitEnsemble):
        a = summarize_limit(a)
    if isinstance(b, LimitEnsemble):
        b = summarize_limit(b)
    tau_a, tau_b = np.asarray(a.tau_grid), np.asarray(b.tau_grid)
    if tau_a.shape != tau_b.shape or not np.allclose(tau_a, tau_b, rtol=1e-12, atol=0.0):
        raise ArgumentError(f"checkpoint grids differ: {a.tau_grid} vs {b.tau_grid}")
    k = len(tau_a)
    alpha = thresholds.alpha

    mean_z = np.concatenate(
        [
            _z(
                np.subtract(getattr(a, f), getattr(b, f)),
                np.asarray(getattr(a, f + "_se")),
                np.asarray(getattr(b, f + "_se")),
            ).ravel()
            for f in ("mean_V", "mean_Q")
        ]
    )
    mean_crit = z_critical(alpha, mean_z.size)

    upper = np.triu_indices(2)
    cov_z, cov_rel = [], []
    for f in ("cov_V", "cov_Q"):
        ca, cb = np.asarray(getattr(a, f)), np.asarray(getattr(b, f))
        sa, sb = np.asarray(getattr(a, f + "_se")), np.asarray(getattr(b, f + "_se"))
        z = _z(ca - cb, sa, sb)
        cov_z.append(z[:, upper[0], upper[1]].ravel())
        scale = np.maximum(np.abs(cb), np.abs(ca))
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(scale > 0.0, np.abs(ca - cb) / scale, 0.0)
        cov_rel.append(rel[:, upper[0], upper[1]].ravel())
    cov_z = np.concatenate(cov_z)
    cov_rel = np.concatenate(cov_rel)
    cov_crit = z_critical(alpha, cov_z.size)
    entry_ok = cov_z <= cov_crit
    if thresholds.cov_rel_tol is not None:
        entry_ok |= cov_rel <= thresholds.cov_rel_tol

    pvalues = []
    if a.samples_V is not None and b.samples_V is not None:
        for sa, sb in ((a.samples_V, b.samples_V), (a.samples_Q, b.samples_Q)):
            for j in range(k):
                for i in range(2):
                    pvalues.append(ks_two_sample(sa[:, j, i], sb[:, j, i])[1])
    ks_threshold = alpha / max(len(pvalues), 1)
    ks_min = min(pvalues) if pvalues else 1.0

    band_a, band_b = kurtosis_band(a.n_paths), kurtosis_band(b.n_paths)
    outside = int(
        np.count_nonzero(np.abs(np.asarray(a.kurtosis_V)) > band_a)
        + np.count_nonzero(np.abs(np.asarray(b.kurtosis_V)) > band_b)
    )

    stopped_z = two_proportion_z(a.n_stopped, a.n_paths, b.n_stopped, b.n_paths)
    stopped_ok = abs(stopped_z) <= z_critical(alpha)

    means_ok = bool(np.all(mean_z <= mean_crit))
    cov_ok = bool(np.all(entry_ok))
    ks_ok = ks_min >= ks_threshold
    report = ComparisonReport(
        alpha=alpha,
        n_checkpoints=k,
        mean_max_z=float(mean_z.max()),
        mean_critical=mean_crit,
        means_passed=means_ok,
        cov_max_z=float(cov_z.max()),
        cov_max_rel_error=float(cov_rel.max()),
        cov_critical=cov_crit,
        cov_passed=cov_ok,
        ks_min_pvalue=ks_min,
        ks_threshold=ks_threshold,
        ks_passed=ks_ok,
        kurtosis_outside_band=outside,
        stopped_z=stopped_z,
        stopped_passed=stopped_ok,
        passed=means_ok and cov_ok and ks_ok and stopped_ok,
    )
    logger.info(
        "Comparison %s: max mean z %.3g, max cov z %.3g, min KS p %.3g",
        "passed" if report.passed else "failed",
        report.mean_max_z,
        report.cov_max_z,
        ks_min,
    )
    return report
