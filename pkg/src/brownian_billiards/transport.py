"""
Green-Kubo diffusion matrix of the momentum-transfer observable on the frozen
billiard, the quantities derived from it, the nonsingularity criterion and the
regularity scan over disk positions.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field

from brownian_billiards.billiard import FrozenBilliard, mean_free_path
from brownian_billiards.errors import ArgumentError, DomainError
from brownian_billiards.geometry import TorusTable, dist_to_boundary, first_hit, torus_distance
from brownian_billiards.parallel import run_pool
from brownian_billiards.stats import exponential_decay_fit

logger = logging.getLogger(__name__)

MAX_LAG = 64
LAG_CUTOFF_FRACTION = 0.01
SYMMETRY_TOLERANCE = 1e-14
EIGEN_TOLERANCE = 1e-12
COLLINEAR_TOLERANCE = 1e-9


@dataclass(frozen=True)
class DiffusionMatrix:
    m: np.ndarray
    stderr: np.ndarray
    lags_used: int = 0
    per_lag: np.ndarray = field(default_factory=lambda: np.zeros((0, 2, 2)))
    per_lag_stderr: np.ndarray = field(default_factory=lambda: np.zeros((0, 2, 2)))

    def __post_init__(self) -> None:
        m = np.asarray(self.m, dtype=float)
        if m.shape != (2, 2):
            raise DomainError(f"diffusion matrix must be 2×2, got shape {m.shape}")
        if abs(m[0, 1] - m[1, 0]) > SYMMETRY_TOLERANCE * max(1.0, np.abs(m).max()):
            raise DomainError(f"diffusion matrix is not symmetric: {m.tolist()}")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "stderr", np.asarray(self.stderr, dtype=float))

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.m)[0])

    def is_psd_within_noise(self, n_se: float = 3.0) -> bool:
        return self.min_eigenvalue >= -n_se * float(np.max(self.stderr))

    def scaled(self, factor: float) -> "DiffusionMatrix":
        return DiffusionMatrix(
            self.m * factor,
            self.stderr * abs(factor),
            self.lags_used,
            self.per_lag * factor,
            self.per_lag_stderr * abs(factor),
        )

    def to_dict(self) -> dict:
        return {
            "matrix": self.m.tolist(),
            "stderr": self.stderr.tolist(),
            "J": self.lags_used,
            "per_lag": self.per_lag.tolist(),
            "per_lag_stderr": self.per_lag_stderr.tolist(),
        }


def choose_lag_cutoff(norms: np.ndarray, cap: int = MAX_LAG) -> int:
    "Smallest lag whose correlation norm falls below 1% of the lag-0 norm, capped"
    for j in range(1, min(len(norms), cap + 1)):
        if norms[j] < LAG_CUTOFF_FRACTION * norms[0]:
            return j
    return min(cap, len(norms) - 1)


def _gk_sum(per_lag: np.ndarray, J: int) -> np.ndarray:
    "C₀ + Σ_{j=1..J} (C_j + C_jᵀ) over the last two axes"
    total = per_lag[..., 0, :, :].copy()
    for j in range(1, J + 1):
        c = per_lag[..., j, :, :]
        total += c + np.swapaxes(c, -1, -2)
    return total


def _orbit_estimate(
    billiard: FrozenBilliard, n: int, cap: int, n_batches: int, rng: np.random.Generator
) -> np.ndarray:
    "Batch-wise lag correlations from one long orbit: arrays (n_batches, cap + 1, 2, 2)"
    A = billiard.trace(billiard.sample(rng), n + cap).observable
    size = n // n_batches
    used = size * n_batches
    batches = np.empty((n_batches, cap + 1, 2, 2))
    for j in range(cap + 1):
        products = A[:used, :, None] * A[j : j + used, None, :]
        batches[:, j] = products.reshape(n_batches, size, 2, 2).mean(axis=1)
    return batches


def _restart_estimate(
    billiard: FrozenBilliard, n: int, cap: int, rng: np.random.Generator
) -> np.ndarray:
    "Per-restart products A₀·A_jᵀ from independent μ_Q starts: array (n_restarts, cap + 1, 2, 2)"
    n_restarts = n // (cap + 1)
    out = np.empty((n_restarts, cap + 1, 2, 2))
    for i in range(n_restarts):
        A = billiard.trace(billiard.sample(rng), cap).observable
        out[i] = A[0][None, :, None] * A[:, None, :]
    return out


def green_kubo(
    Q: tuple[float, float],
    table: TorusTable,
    r_disk: float,
    n_collisions: int,
    J: int | None = None,
    rng: np.random.Generator | None = None,
    n_batches: int = 32,
    method: Literal["orbit", "restarts"] = "orbit",
) -> DiffusionMatrix:
    """
    Green-Kubo matrix σ̄² = C₀ + Σ_{j=1..J}(C_j + C_jᵀ) of the observable 𝒜.

    method="orbit" averages along one μ_Q-stationary orbit with batch-means
    errors; method="restarts" averages A₀·A_jᵀ over independent μ_Q starts
    (n_collisions // (J + 1) of them). With J=None the cutoff is the smallest lag
    whose correlation norm drops below 1% of the lag-0 norm, at most 64.
    """
    cap = MAX_LAG if J is None else J
    if cap < 0:
        raise ArgumentError(f"lag cutoff must be non-negative, got {J}")
    if n_collisions < 10 * max(cap, 1):
        raise ArgumentError(
            f"n_collisions = {n_collisions} is too small for lag cutoff {cap}: need at least {10 * max(cap, 1)}"
        )
    if n_batches < 32 and method == "orbit":
        raise ArgumentError(f"batch-means errors need at least 32 batches, got {n_batches}")
    rng = np.random.default_rng() if rng is None else rng
    billiard = FrozenBilliard(table, Q, r_disk)

    if method == "orbit":
        groups = _orbit_estimate(billiard, n_collisions, cap, n_batches, rng)
    elif method == "restarts":
        groups = _restart_estimate(billiard, n_collisions, cap, rng)
    else:
        raise ArgumentError(f"unknown Green-Kubo method {method!r}")

    count = groups.shape[0]
    per_lag = groups.mean(axis=0)
    per_lag_stderr = groups.std(axis=0, ddof=1) / math.sqrt(count)
    norms = np.linalg.norm(per_lag, axis=(1, 2))
    lags = choose_lag_cutoff(norms, cap) if J is None else cap
    totals = _gk_sum(groups[:, : lags + 1], lags)
    m = totals.mean(axis=0)
    m = 0.5 * (m + m.T)
    stderr = totals.std(axis=0, ddof=1) / math.sqrt(count)
    logger.debug("Green-Kubo at Q=%s: J=%d, diag=%s", Q, lags, np.diag(m))
    return DiffusionMatrix(m, stderr, lags, per_lag[: lags + 1], per_lag_stderr[: lags + 1])


def lag0_closed_form(table: TorusTable, r_disk: float) -> np.ndarray:
    "E[𝒜𝒜ᵀ] under μ_Q: (8π r / (3 (length ∂𝒟 + 2π r)))·I"
    total = table.boundary_length + 2.0 * math.pi * r_disk
    return 8.0 * math.pi * r_disk / (3.0 * total) * np.eye(2)


class DecayFit(BaseModel):
    rate: float = Field(..., description="Fitted slope of ln‖C_j‖ against j")
    stderr: float
    significant: bool = Field(..., description="Rate negative at the one-sided 95% level")


def correlation_decay(dm: DiffusionMatrix, j_start: int = 2) -> DecayFit:
    norms = np.linalg.norm(dm.per_lag, axis=(1, 2))
    rate, stderr = exponential_decay_fit(norms, j_start)
    return DecayFit(rate=rate, stderr=stderr, significant=rate + 1.645 * stderr < 0.0)


@dataclass(frozen=True)
class SigmaPieces:
    sigma2: DiffusionMatrix
    sigma2_V: DiffusionMatrix


def sigma_pieces(
    sigma_bar: DiffusionMatrix,
    table: TorusTable,
    r_disk: float,
    V: tuple[float, float],
    M: float,
) -> SigmaPieces:
    "σ² = σ̄²/L̄ (per unit time) and σ²_V = (1 − M‖V‖²)·σ̄² (particle speed below 1)"
    kinetic = 0.0 if V[0] == 0.0 and V[1] == 0.0 else M * (V[0] ** 2 + V[1] ** 2)
    if kinetic > 1.0 + 1e-12:
        raise DomainError(f"M‖V‖² = {kinetic} exceeds the total energy")
    return SigmaPieces(
        sigma2=sigma_bar.scaled(1.0 / mean_free_path(table, r_disk)),
        sigma2_V=sigma_bar.scaled(max(0.0, 1.0 - kinetic)),
    )


def small_r_asymptote(table: TorusTable, r_disk: float) -> DiffusionMatrix:
    "Leading order of σ² as r → 0: (8r / (3·Area))·I"
    if r_disk < 0.0:
        raise DomainError(f"r_disk must be non-negative, got {r_disk}")
    return DiffusionMatrix(8.0 * r_disk / (3.0 * table.area) * np.eye(2), np.zeros((2, 2)))


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """
    Symmetric PSD square root of a 2×2 matrix from its closed-form
    eigendecomposition. Eigenvalues down to -1e-12 (relative) are clipped to 0.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (2, 2):
        raise DomainError(f"expected a 2×2 matrix, got shape {m.shape}")
    a, c = m[0, 0], m[1, 1]
    scale = max(1.0, float(np.abs(m).max()))
    if abs(m[0, 1] - m[1, 0]) > EIGEN_TOLERANCE * scale:
        raise DomainError(f"matrix is not symmetric: {m.tolist()}")
    b = 0.5 * (m[0, 1] + m[1, 0])
    mid = 0.5 * (a + c)
    rad = math.hypot(0.5 * (a - c), b)
    lo, hi = mid - rad, mid + rad
    if lo < -EIGEN_TOLERANCE * scale:
        raise DomainError(f"matrix is indefinite: smallest eigenvalue {lo:.3e}")
    lo, hi = max(lo, 0.0), max(hi, 0.0)
    if rad == 0.0:
        return math.sqrt(hi) * np.eye(2)
    # unit eigenvector of the larger eigenvalue, from the better-conditioned row
    e1 = np.array([b, hi - a])
    e2 = np.array([hi - c, b])
    e = e1 if np.hypot(*e1) >= np.hypot(*e2) else e2
    e = e / np.hypot(*e)
    P = np.outer(e, e)
    return math.sqrt(hi) * P + math.sqrt(lo) * (np.eye(2) - P)


class DiameterOrbit(BaseModel):
    scatterer: int
    image: tuple[int, int] = Field(..., description="Lattice offset of the scatterer image")
    direction: tuple[float, float] = Field(..., description="Unit vector from Q to the image center")
    length: float = Field(..., description="Free path between the disk and the scatterer")
    witness: tuple[float, float] = Field(..., description="Sum of 𝒜 over the period-2 orbit")


class NonsingularityReport(BaseModel):
    verdict: Literal["nonsingular", "inconclusive"]
    witnesses: list[DiameterOrbit]


def nonsingularity_check(Q: tuple[float, float], table: TorusTable, r_disk: float) -> NonsingularityReport:
    """
    Period-2 orbits bouncing along the line between the disk center and a
    scatterer center contribute -2·n̂ to the sum of 𝒜 over the period. Two
    noncollinear such vectors make σ̄² nonsingular. Failure to find them says
    nothing either way, hence "inconclusive".
    """
    billiard = FrozenBilliard(table, Q, r_disk)
    Qx, Qy = billiard.Q
    witnesses: list[DiameterOrbit] = []
    for index, (cx, cy, rho) in enumerate(table.circles):
        reach = table.l_max + r_disk + rho
        for i in range(math.ceil(Qx - reach - cx), math.floor(Qx + reach - cx) + 1):
            for j in range(math.ceil(Qy - reach - cy), math.floor(Qy + reach - cy) + 1):
                dx, dy = cx + i - Qx, cy + j - Qy
                distance = math.hypot(dx, dy)
                length = distance - r_disk - rho
                if length <= 0.0 or length > table.l_max:
                    continue
                nx, ny = dx / distance, dy / distance
                start = (Qx + r_disk * nx, Qy + r_disk * ny)
                hit = first_hit(start, (nx, ny), billiard.circle_array, length * (1.0 + 1e-9) + 1e-12)
                if hit is None or hit.index != index or hit.image != (i, j):
                    continue
                witnesses.append(
                    DiameterOrbit(
                        scatterer=index,
                        image=(i, j),
                        direction=(nx, ny),
                        length=length,
                        witness=(-2.0 * nx, -2.0 * ny),
                    )
                )
    verdict = "inconclusive"
    for k, a in enumerate(witnesses):
        if any(
            abs(a.witness[0] * b.witness[1] - a.witness[1] * b.witness[0]) > COLLINEAR_TOLERANCE
            for b in witnesses[k + 1 :]
        ):
            verdict = "nonsingular"
            break
    return NonsingularityReport(verdict=verdict, witnesses=witnesses)


@dataclass(frozen=True)
class GreenKuboJob:
    Q: tuple[float, float]
    table: TorusTable
    r_disk: float
    n_collisions: int
    J: int | None
    seed: int
    index: int
    n_batches: int = 32
    method: Literal["orbit", "restarts"] = "orbit"


def run_green_kubo_job(job: GreenKuboJob) -> DiffusionMatrix:
    rng = np.random.default_rng(np.random.SeedSequence([job.seed, job.index]))
    return green_kubo(
        job.Q, job.table, job.r_disk, job.n_collisions, job.J, rng, job.n_batches, job.method
    )


def pair_ratio(
    sigma_a: np.ndarray,
    sigma_b: np.ndarray,
    se_a: np.ndarray,
    se_b: np.ndarray,
    h: float,
) -> tuple[float, bool]:
    """
    ‖σ_a − σ_b‖ / (h·|ln h|) for two grid neighbors at distance h. The pair is
    inconclusive when the difference of the underlying σ² estimates is below three
    combined standard errors; se_a, se_b are the σ² standard errors.
    """
    ratio = float(np.linalg.norm(sigma_a - sigma_b) / (h * abs(math.log(h))))
    noise = 3.0 * math.hypot(float(np.linalg.norm(se_a)), float(np.linalg.norm(se_b)))
    diff = float(np.linalg.norm(sigma_a @ sigma_a - sigma_b @ sigma_b))
    return ratio, diff < noise


class ScanPoint(BaseModel):
    Q: tuple[float, float]
    sigma2: list[list[float]]
    sigma2_stderr: list[list[float]]
    sigma: list[list[float]]


class ScanPair(BaseModel):
    a: tuple[float, float]
    b: tuple[float, float]
    h: float
    ratio: float
    inconclusive: bool


class ScanReport(BaseModel):
    points: list[ScanPoint]
    pairs: list[ScanPair]
    max_ratio: float | None = Field(..., description="Largest ratio over conclusive pairs")
    n_inconclusive: int


def scan_sigma(
    origin: tuple[float, float],
    h: float,
    nx: int,
    ny: int,
    table: TorusTable,
    r_disk: float,
    n_collisions: int,
    J: int | None = None,
    delta0: float = 0.0,
    seed: int = 0,
    workers: int = 1,
) -> ScanReport:
    """
    σ_Q = psd_sqrt(σ̄²_Q / L̄) on an nx × ny grid of spacing h, and the
    log-Lipschitz ratio of every pair of horizontal or vertical neighbors.
    """
    if not 0.0 < h < 1.0:
        raise ArgumentError(f"grid spacing must lie in (0, 1), got {h}")
    grid = [(origin[0] + i * h, origin[1] + j * h) for j in range(ny) for i in range(nx)]
    for Q in grid:
        if dist_to_boundary(Q, table) <= r_disk + delta0:
            raise ArgumentError(f"grid point {Q} is within r + δ₀ = {r_disk + delta0} of a scatterer")
    jobs = [GreenKuboJob(Q, table, r_disk, n_collisions, J, seed, k) for k, Q in enumerate(grid)]
    results = run_pool(run_green_kubo_job, jobs, workers, label="grid point")
    mfp = mean_free_path(table, r_disk)
    sigma2 = [dm.scaled(1.0 / mfp) for dm in results]
    roots = [psd_sqrt(s.m) for s in sigma2]

    points = [
        ScanPoint(Q=Q, sigma2=s.m.tolist(), sigma2_stderr=s.stderr.tolist(), sigma=root.tolist())
        for Q, s, root in zip(grid, sigma2, roots)
    ]
    pairs: list[ScanPair] = []
    for j in range(ny):
        for i in range(nx):
            k = j * nx + i
            for other in ([k + 1] if i + 1 < nx else []) + ([k + nx] if j + 1 < ny else []):
                ratio, inconclusive = pair_ratio(
                    roots[k], roots[other], sigma2[k].stderr, sigma2[other].stderr, h
                )
                pairs.append(ScanPair(a=grid[k], b=grid[other], h=h, ratio=ratio, inconclusive=inconclusive))
    conclusive = [p.ratio for p in pairs if not p.inconclusive]
    n_inconclusive = len(pairs) - len(conclusive)
    if n_inconclusive:
        logger.info("%d of %d neighbor pairs below Monte Carlo resolution", n_inconclusive, len(pairs))
    return ScanReport(
        points=points,
        pairs=pairs,
        max_ratio=max(conclusive) if conclusive else None,
        n_inconclusive=n_inconclusive,
    )


@dataclass(frozen=True)
class SigmaGrid:
    """
    σ²_Q at the nodes (i/n, j/n) of a periodic n × n grid over the unit cell.
    Nodes too close to a scatterer for the disk to sit there carry the value of
    the nearest admissible node.
    """

    values: np.ndarray
    admissible: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]


def build_sigma_grid(
    table: TorusTable,
    r_disk: float,
    n: int,
    n_collisions: int,
    J: int | None = None,
    seed: int = 0,
    workers: int = 1,
    margin: float = 1e-3,
) -> SigmaGrid:
    if n < 2:
        raise ArgumentError(f"sigma grid needs at least 2 nodes per side, got {n}")
    nodes = [(i / n, j / n) for i in range(n) for j in range(n)]
    admissible = np.array([dist_to_boundary(Q, table) > r_disk + margin for Q in nodes])
    if not admissible.any():
        raise ArgumentError("no admissible node in the sigma grid")
    jobs = [
        GreenKuboJob(Q, table, r_disk, n_collisions, J, seed, k)
        for k, Q in enumerate(nodes)
        if admissible[k]
    ]
    results = iter(run_pool(run_green_kubo_job, jobs, workers, label="sigma node"))
    mfp = mean_free_path(table, r_disk)
    values = np.empty((n * n, 2, 2))
    for k in range(n * n):
        if admissible[k]:
            values[k] = next(results).m / mfp
    good = np.flatnonzero(admissible)
    for k in np.flatnonzero(~admissible):
        nearest = min(good, key=lambda g: torus_distance(nodes[k], nodes[g]))
        values[k] = values[nearest]
    return SigmaGrid(values.reshape(n, n, 2, 2), admissible.reshape(n, n))
