"""
The three limit processes the rescaled disk motion converges to, simulated on a
τ-grid and, for the Gaussian regime, evaluated in closed form by quadrature.

thm1: Gaussian process with V increments (1−χ²)^{3/4}·σ along the straight
      path Q†(s) = Q₀ + s·χ·u₀; Q is the integral of V (deviation from Q†).
thm2: dQ = V dτ, dV = σ_Q dw, absorbed (V = 0, Q held) once Q comes within
      stop_clearance of a scatterer.
thm3: V = σ₀·w with σ₀² = 8/(3·Area), absorbed the same way at clearance δ₀.

Every path draws its noise from its own stream, SeedSequence([seed, path]), so
an ensemble does not depend on how it is split into blocks or workers.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Literal, Protocol

import numpy as np
import polars as pl
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import integrate

from brownian_billiards.errors import ArgumentError, DomainError
from brownian_billiards.geometry import TorusTable, dist_to_boundary, dist_to_boundary_array
from brownian_billiards.transport import SigmaGrid, psd_sqrt

logger = logging.getLogger(__name__)

BLOCK_SIZE = 256
QUAD_TOLERANCE = 1e-8


class SigmaField(Protocol):
    def covariance_at(self, points: np.ndarray) -> np.ndarray: ...

    def root_at(self, points: np.ndarray) -> np.ndarray: ...

    def perturbed(self, eps: float) -> "SigmaField": ...


def _psd_roots(mats: np.ndarray) -> np.ndarray:
    "Square roots of a stack of symmetric 2×2 matrices after clipping negative eigenvalues"
    sym = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    w, U = np.linalg.eigh(sym)
    w = np.sqrt(np.clip(w, 0.0, None))
    return np.einsum("...ik,...k,...jk->...ij", U, w, U)


@dataclass(frozen=True)
class ConstantSigma:
    sigma2: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "sigma2", np.asarray(self.sigma2, dtype=float))

    @property
    def root(self) -> np.ndarray:
        return psd_sqrt(self.sigma2)

    def covariance_at(self, points: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.sigma2, np.shape(points)[:-1] + (2, 2))

    def root_at(self, points: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.root, np.shape(points)[:-1] + (2, 2))

    def perturbed(self, eps: float) -> "ConstantSigma":
        return ConstantSigma(self.sigma2 + eps * np.eye(2))


def isotropic_sigma(table: TorusTable) -> ConstantSigma:
    "σ₀²·I with σ₀² = 8 / (3·Area): the small-disk limit without the disk in the area"
    return ConstantSigma(8.0 / (3.0 * table.area) * np.eye(2))


@dataclass(frozen=True)
class GridSigma:
    """
    σ²_Q on a periodic n × n grid over the unit cell, values[i, j] at (i/n, j/n).
    Queries interpolate σ² bilinearly and project back onto the PSD cone before
    taking the square root.
    """

    values: np.ndarray

    @classmethod
    def from_grid(cls, grid: SigmaGrid) -> "GridSigma":
        return cls(np.asarray(grid.values, dtype=float))

    def covariance_at(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        n = self.values.shape[0]
        u = np.mod(points, 1.0) * n
        base = np.floor(u)
        f = u - base
        i0 = base.astype(np.int64) % n
        i1 = (i0 + 1) % n
        fx = f[..., 0, None, None]
        fy = f[..., 1, None, None]
        v = self.values
        return (
            (1.0 - fx) * (1.0 - fy) * v[i0[..., 0], i0[..., 1]]
            + fx * (1.0 - fy) * v[i1[..., 0], i0[..., 1]]
            + (1.0 - fx) * fy * v[i0[..., 0], i1[..., 1]]
            + fx * fy * v[i1[..., 0], i1[..., 1]]
        )

    def root_at(self, points: np.ndarray) -> np.ndarray:
        return _psd_roots(self.covariance_at(points))

    def perturbed(self, eps: float) -> "GridSigma":
        return GridSigma(self.values + eps * np.eye(2))


@dataclass(frozen=True)
class PathSigma:
    """
    σ² known at nodes s_k of the straight path Q₀ + s·χ·u₀ (unwrapped), linear
    in s between nodes and constant beyond them. Points are mapped to s by
    projection onto the path direction.
    """

    Q0: tuple[float, float]
    velocity: tuple[float, float]
    s_nodes: np.ndarray
    values: np.ndarray

    def _arclength(self, points: np.ndarray) -> np.ndarray:
        w = np.asarray(self.velocity, dtype=float)
        speed2 = float(w @ w)
        if speed2 == 0.0:
            return np.zeros(np.shape(points)[:-1])
        return (np.asarray(points, dtype=float) - np.asarray(self.Q0)) @ w / speed2

    def covariance_at(self, points: np.ndarray) -> np.ndarray:
        s = self._arclength(points)
        out = np.empty(s.shape + (2, 2))
        for a in range(2):
            for b in range(2):
                out[..., a, b] = np.interp(s, self.s_nodes, self.values[:, a, b])
        return out

    def root_at(self, points: np.ndarray) -> np.ndarray:
        return _psd_roots(self.covariance_at(points))

    def perturbed(self, eps: float) -> "PathSigma":
        return PathSigma(self.Q0, self.velocity, self.s_nodes, self.values + eps * np.eye(2))


class LimitParams(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    regime: Literal["thm1", "thm2", "thm3"]
    c: float = Field(..., gt=0.0, description="Horizon in rescaled time τ")
    sigma_field: Any = Field(..., description="ConstantSigma, GridSigma or any SigmaField")
    Q0: tuple[float, float] = (0.5, 0.0)
    chi: float = Field(0.0, ge=0.0, lt=1.0, description="Initial disk speed ratio (thm1)")
    u0: tuple[float, float] = Field((1.0, 0.0), description="Initial disk direction (thm1)")
    stop_clearance: float | None = Field(None, gt=0.0, description="Absorb paths this close to a scatterer")
    table: TorusTable | None = None
    h: float | None = Field(None, gt=0.0, description="Step; default 1e-3·c")
    N: int = Field(1000, ge=1)
    n_checkpoints: int = Field(8, ge=1)
    substeps: int = Field(1, ge=1, description="Noise drawn on a grid this many times finer, then summed")
    seed: int = Field(0, ge=0)

    @field_validator("u0")
    @classmethod
    def unit_direction(cls, u0: tuple[float, float]) -> tuple[float, float]:
        if abs(math.hypot(*u0) - 1.0) > 1e-9:
            raise ValueError(f"u0 must be a unit vector, got {u0}")
        return u0

    @property
    def n_steps(self) -> int:
        h = 1e-3 * self.c if self.h is None else self.h
        per_checkpoint = max(1, math.ceil(self.c / (h * self.n_checkpoints) - 1e-9))
        return per_checkpoint * self.n_checkpoints

    @property
    def tau_grid(self) -> np.ndarray:
        return self.c * np.arange(1, self.n_checkpoints + 1) / self.n_checkpoints

    def path(self, s: float | np.ndarray) -> np.ndarray:
        "Deterministic thm1 path Q†(s)"
        s = np.asarray(s, dtype=float)[..., None]
        return np.asarray(self.Q0) + s * self.chi * np.asarray(self.u0)


def analytic_cov_thm1(params: LimitParams, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """
    CovV = (1−χ²)^{3/2}·∫₀^τ σ²(Q†(s)) ds and CovQ = (1−χ²)^{3/2}·∫₀^τ (τ−s)²·σ²(Q†(s)) ds,
    entry by entry with adaptive quadrature.
    """
    if not 0.0 <= tau <= params.c:
        raise ArgumentError(f"tau = {tau} outside [0, {params.c}]")
    if params.table is not None and params.stop_clearance is not None:
        for s in np.linspace(0.0, tau, 65):
            Q = params.path(s)
            if dist_to_boundary(Q, params.table) <= params.stop_clearance:
                raise DomainError(f"Q†({s:.4g}) = {tuple(Q)} leaves the admissible region")
    prefactor = (1.0 - params.chi**2) ** 1.5
    field = params.sigma_field

    def entry(a: int, b: int, weight) -> float:
        value, _ = integrate.quad(
            lambda s: weight(s) * field.covariance_at(params.path(s)[None, :])[0][a, b],
            0.0,
            tau,
            epsabs=QUAD_TOLERANCE,
            epsrel=QUAD_TOLERANCE,
        )
        return value

    cov_V = np.empty((2, 2))
    cov_Q = np.empty((2, 2))
    for a, b in ((0, 0), (0, 1), (1, 1)):
        cov_V[a, b] = cov_V[b, a] = entry(a, b, lambda s: 1.0)
        cov_Q[a, b] = cov_Q[b, a] = entry(a, b, lambda s: (tau - s) ** 2)
    return prefactor * cov_V, prefactor * cov_Q


@dataclass(frozen=True)
class LimitEnsemble:
    """
    Checkpoint samples of N paths: V and Q have shape (N, n_checkpoints, 2).
    For thm1, Q is the deviation from Q†; otherwise it is the absolute position.
    """

    regime: str
    tau: np.ndarray
    V: np.ndarray
    Q: np.ndarray
    frozen: np.ndarray
    stopped: np.ndarray
    stop_tau: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.V.shape[0]

    def to_frame(self) -> pl.DataFrame:
        return ensemble_frame(self.tau, self.V, self.Q, self.frozen)


def ensemble_frame(tau: np.ndarray, V: np.ndarray, Q: np.ndarray, frozen: np.ndarray) -> pl.DataFrame:
    "Rows (path, tau, Vx, Vy, Qx, Qy, frozen), path-major"
    n, k = V.shape[:2]
    return pl.DataFrame(
        {
            "path": np.repeat(np.arange(n), k),
            "tau": np.tile(np.asarray(tau, dtype=float), n),
            "Vx": V[:, :, 0].ravel(),
            "Vy": V[:, :, 1].ravel(),
            "Qx": Q[:, :, 0].ravel(),
            "Qy": Q[:, :, 1].ravel(),
            "frozen": np.asarray(frozen, dtype=bool).ravel(),
        }
    )


def _path_noise(seed: int, paths: range, n_steps: int, substeps: int = 1) -> np.ndarray:
    "Standard normal increments (paths, n_steps, 2); fine draws are summed in groups of substeps"
    fine = np.stack(
        [
            np.random.default_rng(np.random.SeedSequence([seed, p])).standard_normal((n_steps * substeps, 2))
            for p in paths
        ]
    )
    if substeps == 1:
        return fine
    return fine.reshape(len(paths), n_steps, substeps, 2).sum(axis=2) / math.sqrt(substeps)


def _simulate_block(params: LimitParams, paths: range) -> tuple[np.ndarray, ...]:
    K = params.n_steps
    h = params.c / K
    sqrt_h = math.sqrt(h)
    every = K // params.n_checkpoints
    noise = _path_noise(params.seed, paths, K, params.substeps)
    B = len(paths)
    field = params.sigma_field

    V = np.zeros((B, 2))
    Q = np.zeros((B, 2)) if params.regime == "thm1" else np.tile(np.asarray(params.Q0, float), (B, 1))
    stopped = np.zeros(B, dtype=bool)
    stop_tau = np.full(B, np.nan)
    if params.regime != "thm1" and params.table is not None and params.stop_clearance is not None:
        stopped = dist_to_boundary_array(Q, params.table) <= params.stop_clearance
        stop_tau[stopped] = 0.0

    out_V = np.empty((B, params.n_checkpoints, 2))
    out_Q = np.empty((B, params.n_checkpoints, 2))
    out_frozen = np.empty((B, params.n_checkpoints), dtype=bool)

    if params.regime == "thm1":
        scale = (1.0 - params.chi**2) ** 0.75
        roots = field.root_at(params.path(h * np.arange(K)))
    for k in range(K):
        xi = noise[:, k]
        if params.regime == "thm1":
            V_next = V + scale * sqrt_h * (xi @ roots[k].T)
            Q = Q + 0.5 * h * (V + V_next)
            V = V_next
        else:
            roots_k = field.root_at(Q)
            dV = sqrt_h * np.einsum("bij,bj->bi", roots_k, xi)
            Q = Q + h * V
            V = V + dV
            V[stopped] = 0.0
            if params.table is not None and params.stop_clearance is not None:
                hit = ~stopped & (dist_to_boundary_array(Q, params.table) <= params.stop_clearance)
                stopped = stopped | hit
                stop_tau[hit] = (k + 1) * h
                V[hit] = 0.0
        if (k + 1) % every == 0:
            idx = (k + 1) // every - 1
            out_V[:, idx] = V
            out_Q[:, idx] = Q
            out_frozen[:, idx] = stopped
    return out_V, out_Q, out_frozen, stopped, stop_tau


def simulate_limit(params: LimitParams, seed: int | None = None) -> LimitEnsemble:
    """
    Euler-Maruyama ensemble of the regime's limit process. `seed` overrides
    params.seed as the master seed of the per-path streams.
    """
    if seed is not None:
        params = params.model_copy(update={"seed": seed})
    if params.regime == "thm1" and params.table is not None and params.stop_clearance is not None:
        analytic_cov_thm1(params, params.c)
    blocks = [range(p, min(p + BLOCK_SIZE, params.N)) for p in range(0, params.N, BLOCK_SIZE)]
    parts = [_simulate_block(params, block) for block in blocks]
    V, Q, frozen, stopped, stop_tau = (np.concatenate(x) for x in zip(*parts))
    logger.info(
        "%s limit: %d paths, %d steps, %d stopped", params.regime, params.N, params.n_steps, stopped.sum()
    )
    return LimitEnsemble(params.regime, params.tau_grid, V, Q, frozen, stopped, stop_tau)


def pathwise_sensitivity(params: LimitParams, eps_values: list[float]) -> dict[float, float]:
    """
    Uniqueness diagnostic: drive the process with the same noise under σ² and
    σ² + ε·I and report the mean over paths of the largest checkpoint distance
    between the two Q paths. It should shrink with ε.
    """
    base = simulate_limit(params)
    out: dict[float, float] = {}
    for eps in eps_values:
        shifted = simulate_limit(params.model_copy(update={"sigma_field": params.sigma_field.perturbed(eps)}))
        gap = np.linalg.norm(shifted.Q - base.Q, axis=-1).max(axis=1)
        out[eps] = float(gap.mean())
    return out
