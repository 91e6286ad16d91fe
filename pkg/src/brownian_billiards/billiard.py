"""
The frozen-disk billiard map: a unit-speed particle among the scatterers and a
disk held fixed at Q. Collision coordinates, invariant-measure sampling, the
momentum-transfer observable, the wavefront-curvature cocycle and the
statistics built on them (Lyapunov exponent, free paths, measure invariance).

Collision coordinates on a circle of radius ρ centered at c: the contact point is
c + ρ(cos θ, sin θ) with arclength r = ρθ, θ ∈ [0, 2π) counted counterclockwise
from angle 0. φ is the signed angle from the normal n = (cos θ, sin θ), which
points into the free region, to the outgoing velocity.

Orbits are iterated by numba kernels; the scalar methods of `FrozenBilliard` go
through the same compiled step, so a single map and a long trace agree bit for bit.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import polars as pl
from numba import njit
from pydantic import BaseModel, Field
from scipy import stats as sps

from brownian_billiards.errors import ArgumentError, DomainError, FiniteHorizonViolation, GrazingStepError
from brownian_billiards.geometry import (
    NO_HIT,
    Hit,
    Point,
    TorusTable,
    as_circle_array,
    dist_to_boundary,
    hit_geometry,
    min_gap,
    reflect,
    rescale,
    scan,
    unit_interval,
    wrap,
)
from brownian_billiards.stats import batch_means

logger = logging.getLogger(__name__)

DISK = -1
GRAZING_COS = 1e-9
TWO_PI = 2.0 * math.pi
MIN_LYAPUNOV_COLLISIONS = 1_000


@dataclass(frozen=True, slots=True)
class CollisionCoord:
    component: int
    r: float
    phi: float
    radius: float  # of the component, so the coordinate can be turned back into a point


@dataclass(frozen=True, slots=True)
class Wavefront:
    B: float = 0.0
    log_dq: float = 0.0


def mean_free_path(table: TorusTable, r_disk: float) -> float:
    "Santaló: π·(free area) / (boundary length), with the disk counted in both"
    free_area = table.area - math.pi * r_disk**2
    return math.pi * free_area / (table.boundary_length + TWO_PI * r_disk)


def phi_from_uniform(u: float) -> float:
    "Inverse transform for the density cos(φ)/2 on [-π/2, π/2]"
    return math.asin(2.0 * u - 1.0)


def observable_A(coord: CollisionCoord) -> tuple[float, float]:
    "Momentum transfer to the disk at a collision: -2cos(φ)·n on the disk, zero elsewhere"
    if coord.component != DISK:
        return 0.0, 0.0
    theta = coord.r / coord.radius
    c = -2.0 * math.cos(coord.phi)
    return c * math.cos(theta), c * math.sin(theta)


# --- compiled kernels ---


@njit(cache=True)
def _phase(cx, cy, rho, r, phi):
    "Contact point in the fundamental cell and outgoing unit velocity of a collision coordinate"
    theta = r / rho
    nx, ny = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(phi), math.sin(phi)
    return unit_interval(cx + rho * nx), unit_interval(cy + rho * ny), nx * cp - ny * sp, nx * sp + ny * cp


@njit(cache=True)
def _coord(nx, ny, dx, dy, rho):
    theta = math.atan2(ny, nx) % TWO_PI
    r = rho * theta
    if r >= TWO_PI * rho:
        r = 0.0
    phi = math.atan2(nx * dy - ny * dx, nx * dx + ny * dy)
    phi = min(max(phi, -0.5 * math.pi), 0.5 * math.pi)
    return r, phi


@njit(cache=True)
def _step(circles, l_max, x, y, dx, dy):
    """
    Fly to the next collision and reflect. Returns (t, index, px, py, nx, ny, ox,
    oy, i, j): flight time, circle index (NO_HIT when nothing lies within l_max),
    contact point, normal, outgoing unit velocity and lattice image.
    """
    t, index, i, j = scan(x, y, dx, dy, circles, l_max / math.hypot(dx, dy), NO_HIT, 0, 0)
    if index == NO_HIT:
        return t, index, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, i, j
    px, py, nx, ny = hit_geometry(x, y, dx, dy, t, circles, index, i, j)
    ox, oy = reflect(dx, dy, nx, ny)
    ox, oy, _ = rescale(ox, oy, 1.0)
    return t, index, px, py, nx, ny, ox, oy, i, j


@njit(cache=True)
def _trace(circles, l_max, x, y, dx, dy, n):
    "n steps from a phase point; the last value is the number of steps completed"
    index = np.empty(n, dtype=np.int64)
    s = np.empty(n)
    normal_x = np.empty(n)
    normal_y = np.empty(n)
    r = np.empty(n)
    phi = np.empty(n)
    for k in range(n):
        t, idx, px, py, nx, ny, ox, oy, i, j = _step(circles, l_max, x, y, dx, dy)
        if idx == NO_HIT:
            return index, s, normal_x, normal_y, r, phi, k
        x, y = unit_interval(px), unit_interval(py)
        dx, dy = ox, oy
        index[k] = idx
        s[k] = t
        normal_x[k] = nx
        normal_y[k] = ny
        r[k], phi[k] = _coord(nx, ny, ox, oy, circles[idx, 2])
    return index, s, normal_x, normal_y, r, phi, n


@njit(cache=True)
def _map_batch(circles, l_max, index, r, phi):
    "One map step for each coordinate; the last value is the number of steps completed"
    n = index.shape[0]
    out_index = np.empty(n, dtype=np.int64)
    out_r = np.empty(n)
    out_phi = np.empty(n)
    for k in range(n):
        c = index[k]
        x, y, dx, dy = _phase(circles[c, 0], circles[c, 1], circles[c, 2], r[k], phi[k])
        t, idx, px, py, nx, ny, ox, oy, i, j = _step(circles, l_max, x, y, dx, dy)
        if idx == NO_HIT:
            return out_index, out_r, out_phi, k
        out_index[k] = idx
        out_r[k], out_phi[k] = _coord(nx, ny, ox, oy, circles[idx, 2])
    return out_index, out_r, out_phi, n


@njit(cache=True)
def _cocycle_update(B, K, phi, s_next):
    "Precollisional curvature after the flight and the log expansion; NaN expansion when grazing"
    cos_phi = math.cos(phi)
    if cos_phi < GRAZING_COS:
        return B, math.nan
    b_plus = B + 2.0 * K / cos_phi
    growth = 1.0 + s_next * b_plus
    return b_plus / growth, math.log(growth)


@njit(cache=True)
def _cocycle_logs(curvature, phi, s):
    n = curvature.shape[0] - 1
    logs = np.full(n, np.nan)
    B = 0.0
    skipped = 0
    for k in range(n):
        B_next, log_growth = _cocycle_update(B, curvature[k], phi[k], s[k + 1])
        if math.isnan(log_growth):
            # flat front after a skipped step
            skipped += 1
            B = 0.0
            continue
        logs[k] = log_growth
        B = B_next
    return logs, skipped


@njit(cache=True)
def _separation_logs(circles, l_max, x, y, dx, dy, offset, n):
    """
    Per-step log growth of a shadow orbit pulled back to `offset` after every
    collision; NaN at singular steps. Returns (logs, shortest flight, steps completed).
    """
    logs = np.full(n, np.nan)
    sx, sy = x - offset * dy, y + offset * dx
    sdx, sdy = dx, dy
    min_s = math.inf
    for k in range(n):
        t, index, px, py, nx, ny, ox, oy, i, j = _step(circles, l_max, x, y, dx, dy)
        if index == NO_HIT:
            return logs, min_s, k
        min_s = min(min_s, t)
        st, s_index, spx, spy, snx, sny, sox, soy, si, sj = _step(circles, l_max, sx, sy, sdx, sdy)
        singular = s_index != index or si != i or sj != j
        width = 0.0
        qx, qy = 0.0, 0.0
        if not singular:
            lam = ((px - spx) * ox + (py - spy) * oy) / (sox * ox + soy * oy)
            qx = spx + lam * sox - px
            qy = spy + lam * soy - py
            width = math.hypot(qx, qy)
            singular = width == 0.0
        x, y = unit_interval(px), unit_interval(py)
        if singular:
            sx, sy = x - offset * oy, y + offset * ox
            sdx, sdy = ox, oy
        else:
            logs[k] = math.log(width / offset)
            scale = offset / width
            sx, sy = x + qx * scale, y + qy * scale
            sdx, sdy, _ = rescale(ox + (sox - ox) * scale, oy + (soy - oy) * scale, 1.0)
        dx, dy = ox, oy
    return logs, min_s, n


def cocycle_step(w: Wavefront, K: float, phi: float, s_next: float) -> Wavefront:
    """
    Curvature jump at a collision followed by free dispersal over s_next.
    |dq| is continuous through the collision and grows by 1 + s·B⁺ in flight.
    """
    B, log_growth = _cocycle_update(float(w.B), float(K), float(phi), float(s_next))
    if math.isnan(log_growth):
        raise GrazingStepError(f"cos(phi) = {math.cos(phi):.3e} below {GRAZING_COS:g}")
    return Wavefront(B=B, log_dq=w.log_dq + log_growth)


@dataclass(frozen=True)
class OrbitTrace:
    """
    A billiard orbit of n + 1 collisions; index 0 is the start. s[k] is the flight
    that ends at collision k (s[0] = 0). normal is the unit normal at the contact.
    """

    component: np.ndarray
    r: np.ndarray
    phi: np.ndarray
    s: np.ndarray
    normal: np.ndarray
    curvature: np.ndarray

    def __len__(self) -> int:
        return len(self.component)

    @property
    def observable(self) -> np.ndarray:
        on_disk = self.component == DISK
        out = np.zeros((len(self), 2))
        out[on_disk] = -2.0 * np.cos(self.phi[on_disk])[:, None] * self.normal[on_disk]
        return out


class FrozenBilliard:
    """
    Billiard map on the table with a disk of radius r_disk frozen at Q. The disk
    is the last circle of `circles`; r_disk = 0 removes it.
    """

    def __init__(self, table: TorusTable, Q: tuple[float, float], r_disk: float):
        if r_disk < 0.0:
            raise DomainError(f"r_disk must be non-negative, got {r_disk}")
        if r_disk > 0.0 and dist_to_boundary(Q, table) <= r_disk:
            raise DomainError(f"Q = {tuple(Q)} is not admissible for r_disk = {r_disk}")
        self.table = table
        self.l_max = float(table.l_max)
        self.Q = wrap(Q[0], Q[1])
        self.r_disk = r_disk
        circles = list(table.circles)
        if r_disk > 0.0:
            circles.append((self.Q[0], self.Q[1], r_disk))
        self.circles = tuple(circles)
        self.circle_array = as_circle_array(self.circles)
        self.n_scatterers = len(table.scatterers)
        self.perimeters = TWO_PI * self.circle_array[:, 2]
        self.offsets = np.concatenate(([0.0], np.cumsum(self.perimeters)[:-1]))
        self.total_perimeter = float(self.perimeters.sum())

    def component(self, index: int) -> int:
        return DISK if index == self.n_scatterers else index

    def index(self, component: int) -> int:
        return self.n_scatterers if component == DISK else component

    def _escaped(self, point: Point, direction: Point) -> FiniteHorizonViolation:
        return FiniteHorizonViolation(
            f"no collision within l_max = {self.l_max} from {tuple(point)} along {tuple(direction)}"
        )

    def to_phase(self, coord: CollisionCoord) -> tuple[Point, Point]:
        "Contact point (in the fundamental cell) and outgoing unit velocity"
        cx, cy, rho = self.circles[self.index(coord.component)]
        x, y, dx, dy = _phase(cx, cy, rho, float(coord.r), float(coord.phi))
        return (x, y), (dx, dy)

    def to_coord(self, index: int, normal: Point, direction: Point) -> CollisionCoord:
        rho = self.circles[index][2]
        r, phi = _coord(float(normal[0]), float(normal[1]), float(direction[0]), float(direction[1]), rho)
        return CollisionCoord(self.component(index), r, phi, rho)

    def step(self, point: Point, direction: Point) -> tuple[Hit, Point]:
        "Fly to the next collision and reflect; returns the hit and the outgoing velocity"
        t, index, px, py, nx, ny, ox, oy, i, j = _step(
            self.circle_array, self.l_max, float(point[0]), float(point[1]), float(direction[0]), float(direction[1])
        )
        if index == NO_HIT:
            raise self._escaped(point, direction)
        return Hit(t, int(index), (int(i), int(j)), (px, py), (nx, ny)), (ox, oy)

    def map(self, coord: CollisionCoord) -> tuple[CollisionCoord, float]:
        point, direction = self.to_phase(coord)
        hit, out = self.step(point, direction)
        return self.to_coord(hit.index, hit.normal, out), hit.t

    def map_many(
        self, index: np.ndarray, r: np.ndarray, phi: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        "One map step for arrays of (circle index, arclength, φ)"
        out_index, out_r, out_phi, done = _map_batch(
            self.circle_array,
            self.l_max,
            np.ascontiguousarray(index, dtype=np.int64),
            np.ascontiguousarray(r, dtype=np.float64),
            np.ascontiguousarray(phi, dtype=np.float64),
        )
        if done < len(out_index):
            raise FiniteHorizonViolation(f"sample {done} has no collision within l_max = {self.l_max}")
        return out_index, out_r, out_phi

    def sample(self, rng: np.random.Generator) -> CollisionCoord:
        position = rng.random() * self.total_perimeter
        index = int(np.searchsorted(self.offsets, position, side="right")) - 1
        r = min(position - self.offsets[index], self.perimeters[index] * (1.0 - 1e-16))
        rho = self.circles[index][2]
        return CollisionCoord(self.component(index), float(r), phi_from_uniform(rng.random()), rho)

    def sample_many(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        "n draws from μ_Q as arrays (circle index, arclength, φ)"
        position = rng.random(n) * self.total_perimeter
        index = np.searchsorted(self.offsets, position, side="right") - 1
        r = position - self.offsets[index]
        phi = np.arcsin(2.0 * rng.random(n) - 1.0)
        return index, r, phi

    def trace(self, start: CollisionCoord, n: int) -> OrbitTrace:
        point, direction = self.to_phase(start)
        index, s, normal_x, normal_y, r, phi, done = _trace(
            self.circle_array, self.l_max, point[0], point[1], direction[0], direction[1], n
        )
        if done < n:
            raise self._escaped(point, direction)
        theta = start.r / start.radius
        component = np.where(index == self.n_scatterers, DISK, index)
        return OrbitTrace(
            component=np.concatenate(([start.component], component)).astype(np.int64),
            r=np.concatenate(([start.r], r)),
            phi=np.concatenate(([start.phi], phi)),
            s=np.concatenate(([0.0], s)),
            normal=np.column_stack(
                (np.concatenate(([math.cos(theta)], normal_x)), np.concatenate(([math.sin(theta)], normal_y)))
            ),
            curvature=np.concatenate(([1.0 / start.radius], 1.0 / self.circle_array[index, 2])),
        )


def billiard_map(
    Q: tuple[float, float], coord: CollisionCoord, table: TorusTable, r_disk: float
) -> tuple[CollisionCoord, float]:
    return FrozenBilliard(table, Q, r_disk).map(coord)


def sample_mu_Q(
    table: TorusTable, Q: tuple[float, float], r_disk: float, rng: np.random.Generator
) -> CollisionCoord:
    return FrozenBilliard(table, Q, r_disk).sample(rng)


class LyapunovEstimate(BaseModel):
    chi: float = Field(..., description="Lyapunov exponent per collision")
    stderr: float
    n_steps: int
    n_skipped: int = Field(..., description="Grazing or singular steps left out of the average")
    lower_bound: float = Field(..., description="ln(1 + L_min·K_min) from the table geometry")
    min_free_path: float = Field(..., description="Shortest flight seen along the orbit")


def _hyperbolicity_bound(billiard: FrozenBilliard) -> float:
    curvature = min(1.0 / rho for _, _, rho in billiard.circles)
    return math.log1p(min_gap(billiard.circles) * curvature)


def _check_orbit_length(n: int) -> None:
    if n < MIN_LYAPUNOV_COLLISIONS:
        raise DomainError(f"a Lyapunov estimate needs at least {MIN_LYAPUNOV_COLLISIONS} collisions, got {n}")


def cocycle_logs(trace: OrbitTrace) -> np.ndarray:
    "Per-collision log expansion ln(1 + s·B⁺), NaN where a grazing step was skipped"
    logs, skipped = _cocycle_logs(trace.curvature, trace.phi, trace.s)
    if skipped:
        logger.debug("Skipped %d grazing cocycle steps out of %d", skipped, len(logs))
    return logs


def lyapunov_exponent(
    Q: tuple[float, float],
    table: TorusTable,
    r_disk: float,
    n: int,
    rng: np.random.Generator,
    n_batches: int = 32,
) -> LyapunovEstimate:
    _check_orbit_length(n)
    billiard = FrozenBilliard(table, Q, r_disk)
    trace = billiard.trace(billiard.sample(rng), n)
    logs = cocycle_logs(trace)
    valid = logs[~np.isnan(logs)]
    chi, stderr = batch_means(valid, n_batches)
    return LyapunovEstimate(
        chi=float(chi),
        stderr=float(stderr),
        n_steps=n,
        n_skipped=n - len(valid),
        lower_bound=_hyperbolicity_bound(billiard),
        min_free_path=float(trace.s[1:].min()),
    )


def lyapunov_separation(
    Q: tuple[float, float],
    table: TorusTable,
    r_disk: float,
    n: int,
    rng: np.random.Generator,
    offset: float = 1e-10,
    n_batches: int = 32,
) -> LyapunovEstimate:
    """
    Lyapunov exponent from the growth of a shadow orbit started `offset` away from
    the reference orbit and pulled back to that distance after every collision.
    The transverse separation is measured in the cross-section orthogonal to the
    reference velocity. Steps where the shadow hits a different boundary piece are
    singular: they are skipped and the shadow restarts as a flat front.
    """
    _check_orbit_length(n)
    billiard = FrozenBilliard(table, Q, r_disk)
    point, direction = billiard.to_phase(billiard.sample(rng))
    logs, min_s, done = _separation_logs(
        billiard.circle_array, billiard.l_max, point[0], point[1], direction[0], direction[1], float(offset), n
    )
    if done < n:
        raise FiniteHorizonViolation(f"reference orbit escaped l_max = {billiard.l_max} at step {done}")
    valid = logs[~np.isnan(logs)]
    if len(valid) < n:
        logger.debug("Shadow orbit singular at %d of %d steps", n - len(valid), n)
    chi, stderr = batch_means(valid, n_batches)
    return LyapunovEstimate(
        chi=float(chi),
        stderr=float(stderr),
        n_steps=n,
        n_skipped=n - len(valid),
        lower_bound=_hyperbolicity_bound(billiard),
        min_free_path=float(min_s),
    )


class MeanFreePath(BaseModel):
    mean: float
    stderr: float
    expected: float = Field(..., description="Closed-form value π·Area/perimeter")
    n: int


def empirical_mfp(
    Q: tuple[float, float],
    table: TorusTable,
    r_disk: float,
    n: int,
    rng: np.random.Generator,
    n_batches: int = 32,
) -> MeanFreePath:
    if n <= 0:
        raise ArgumentError(f"collision count must be positive, got {n}")
    billiard = FrozenBilliard(table, Q, r_disk)
    flights = billiard.trace(billiard.sample(rng), n).s[1:]
    mean, stderr = batch_means(flights, min(n_batches, n))
    return MeanFreePath(
        mean=float(mean), stderr=float(stderr), expected=mean_free_path(table, r_disk), n=n
    )


class InvarianceReport(BaseModel):
    n: int
    ks_arclength: float
    ks_phi: float
    critical: float = Field(..., description="Two-sample KS critical value at the 1% level")
    passed: bool


def pushforward_ks(
    Q: tuple[float, float], table: TorusTable, r_disk: float, n: int, rng: np.random.Generator
) -> InvarianceReport:
    """
    Push n μ_Q samples through one step of the map and compare the marginals of
    global arclength and φ before and after.
    """
    billiard = FrozenBilliard(table, Q, r_disk)
    index, r, phi = billiard.sample_many(n, rng)
    image_index, image_r, image_phi = billiard.map_many(index, r, phi)
    ks_pos = sps.ks_2samp(billiard.offsets[index] + r, billiard.offsets[image_index] + image_r).statistic
    ks_phi = sps.ks_2samp(phi, image_phi).statistic
    critical = math.sqrt(-0.5 * math.log(0.005)) * math.sqrt(2.0 / n)
    return InvarianceReport(
        n=n,
        ks_arclength=float(ks_pos),
        ks_phi=float(ks_phi),
        critical=critical,
        passed=bool(ks_pos < critical and ks_phi < critical),
    )


def orbit_frame(
    Q: tuple[float, float], table: TorusTable, r_disk: float, n: int, rng: np.random.Generator
) -> pl.DataFrame:
    "Diagnostic dump of an orbit: one row per collision with its log expansion"
    billiard = FrozenBilliard(table, Q, r_disk)
    trace = billiard.trace(billiard.sample(rng), n)
    logs = np.append(cocycle_logs(trace), np.nan)
    return pl.DataFrame(
        {
            "step": np.arange(n + 1),
            "component": trace.component,
            "r": trace.r,
            "phi": trace.phi,
            "s": trace.s,
            "logJ": logs,
        }
    )
