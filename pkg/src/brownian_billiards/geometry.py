"""
Periodic geometry of the billiard table: circular scatterers on the unit torus,
minimal-image arithmetic, ray-circle intersection and the finite-horizon sweep.

The kernels work on plain floats. Points passed to them may carry any lattice
offset: lattice images are enumerated around the ray segment itself, so a ray
started at (3.2, -1.7) sees exactly the same table as one started at (0.2, 0.3).
The ray scan and the distance query are compiled with numba and take the
circles as an (n, 3) float array of (cx, cy, radius) rows.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit
from pydantic import BaseModel, Field

from brownian_billiards.errors import ArgumentError, DomainError

logger = logging.getLogger(__name__)

GRAZING_TOLERANCE = 1e-12
# Rays are scanned for lattice images piece by piece, this long in path length
CHUNK_LENGTH = 0.5
SQRT2 = math.sqrt(2.0)
NO_HIT = -1

Point = tuple[float, float]
Circle = tuple[float, float, float]


@njit(cache=True)
def unit_interval(x):
    y = x - math.floor(x)
    # x = -1e-18 rounds to 1.0
    return 0.0 if y >= 1.0 else y


def wrap(x: float, y: float) -> Point:
    "Reduce a point to the fundamental cell [0,1)²"
    return unit_interval(float(x)), unit_interval(float(y))


@njit(cache=True)
def half_open(d):
    return d - math.ceil(d - 0.5)


def torus_displacement(a: Sequence[float], b: Sequence[float]) -> Point:
    """
    Minimal-image displacement from a to b, each component in (-0.5, 0.5].
    A separation of exactly half a cell resolves to +0.5.
    """
    return half_open(float(b[0] - a[0])), half_open(float(b[1] - a[1]))


def torus_distance(a: Sequence[float], b: Sequence[float]) -> float:
    dx, dy = torus_displacement(a, b)
    return math.hypot(dx, dy)


@njit(cache=True)
def reflect(ux, uy, nx, ny):
    "Specular reflection of (ux, uy) off a wall with unit normal n"
    dot = ux * nx + uy * ny
    return ux - 2.0 * dot * nx, uy - 2.0 * dot * ny


@njit(cache=True)
def rescale(ux, uy, speed2):
    factor = math.sqrt(speed2 / (ux * ux + uy * uy))
    return ux * factor, uy * factor, factor


def rescale_to(ux: float, uy: float, speed2: float) -> tuple[float, float, float]:
    "Rescale a vector to squared length speed2; returns the new vector and the factor used"
    if ux == 0.0 and uy == 0.0:
        raise DomainError("cannot rescale a zero vector")
    return rescale(float(ux), float(uy), float(speed2))


def as_circle_array(circles: Sequence[Circle] | np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(circles, dtype=np.float64).reshape(-1, 3))


@dataclass(frozen=True)
class Scatterer:
    center: Point
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0.0:
            raise DomainError(f"scatterer radius must be positive, got {self.radius}")
        if self.radius >= 0.5:
            raise DomainError(
                f"scatterer radius {self.radius} overlaps its own lattice image (disjointness)"
            )
        object.__setattr__(self, "center", wrap(float(self.center[0]), float(self.center[1])))

    @property
    def curvature(self) -> float:
        return 1.0 / self.radius

    @property
    def perimeter(self) -> float:
        return 2.0 * math.pi * self.radius


@dataclass(frozen=True)
class TorusTable:
    """
    Unit torus minus a finite set of disjoint circular scatterers.

    Construction checks disjointness across all lattice images and positivity of
    the free area. The finite-horizon property is not checked here since the
    sweep is expensive; see `check_finite_horizon`.
    """

    scatterers: tuple[Scatterer, ...]
    l_max: float = 2.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "scatterers", tuple(self.scatterers))
        if not self.l_max > 0.0:
            raise DomainError(f"l_max must be positive, got {self.l_max}")
        for i, a in enumerate(self.scatterers):
            for j in range(i + 1, len(self.scatterers)):
                b = self.scatterers[j]
                gap = torus_distance(a.center, b.center)
                if gap <= a.radius + b.radius:
                    raise DomainError(
                        f"scatterers {i} and {j} overlap (disjointness): center distance "
                        f"{gap:.6g} <= radii sum {a.radius + b.radius:.6g}"
                    )
        if self.area <= 0.0:
            raise DomainError(f"free area must be positive, got {self.area}")

    @cached_property
    def circles(self) -> tuple[Circle, ...]:
        return tuple((s.center[0], s.center[1], s.radius) for s in self.scatterers)

    @cached_property
    def circle_array(self) -> np.ndarray:
        return as_circle_array(self.circles)

    @cached_property
    def boundary_length(self) -> float:
        return sum(s.perimeter for s in self.scatterers)

    @cached_property
    def area(self) -> float:
        return 1.0 - sum(math.pi * s.radius**2 for s in self.scatterers)

    @cached_property
    def min_curvature(self) -> float:
        return min((s.curvature for s in self.scatterers), default=0.0)


def default_table() -> TorusTable:
    "Radius 0.38 at the cell corner and radius 0.18 at the cell center"
    return TorusTable(
        scatterers=(Scatterer((0.0, 0.0), 0.38), Scatterer((0.5, 0.5), 0.18)),
        l_max=2.0,
    )


class Hit(NamedTuple):
    t: float
    index: int
    image: tuple[int, int]
    point: Point
    normal: Point


@njit(cache=True)
def circle_entry_time(fx, fy, ux, uy, radius):
    """
    Smallest positive t with ‖f + t·u‖ = radius for a trajectory entering the circle,
    where f is the start point relative to the center. Returns inf on a miss, on a
    departing or grazing trajectory, or when the start lies inside the circle.
    """
    b = fx * ux + fy * uy
    if b >= 0.0:
        return math.inf
    c = fx * fx + fy * fy - radius * radius
    if c < 0.0:
        return math.inf
    a = ux * ux + uy * uy
    disc = b * b - a * c
    if disc <= GRAZING_TOLERANCE * a * a:
        return math.inf
    # larger root without cancellation; the entry root is c / q
    q = -b + math.sqrt(disc)
    t = c / q
    return t if t > 0.0 else math.inf


@njit(cache=True)
def scan(ox, oy, ux, uy, circles, t_max, ex_index, ex_i, ex_j):
    """
    Earliest entry of the ray o + t·u into a lattice image of a circle, 0 < t <= t_max.
    Returns (t, index, i, j) with index = NO_HIT on a miss; image (ex_i, ex_j) of
    circle ex_index is skipped.
    """
    speed = math.hypot(ux, uy)
    if speed == 0.0 or not t_max > 0.0:
        return math.inf, NO_HIT, 0, 0
    chunk = CHUNK_LENGTH / speed
    t0 = 0.0
    while t0 < t_max:
        t1 = min(t_max, t0 + chunk)
        xa, xb = ox + t0 * ux, ox + t1 * ux
        ya, yb = oy + t0 * uy, oy + t1 * uy
        x_lo, x_hi = min(xa, xb), max(xa, xb)
        y_lo, y_hi = min(ya, yb), max(ya, yb)
        best = math.inf
        found, fi, fj = NO_HIT, 0, 0
        for index in range(circles.shape[0]):
            cx, cy, rho = circles[index, 0], circles[index, 1], circles[index, 2]
            for i in range(math.ceil(x_lo - rho - cx), math.floor(x_hi + rho - cx) + 1):
                for j in range(math.ceil(y_lo - rho - cy), math.floor(y_hi + rho - cy) + 1):
                    if index == ex_index and i == ex_i and j == ex_j:
                        continue
                    t = circle_entry_time(ox - (cx + i), oy - (cy + j), ux, uy, rho)
                    if t < best:
                        best = t
                        found, fi, fj = index, i, j
        if found != NO_HIT and best <= t1:
            return best, found, fi, fj
        t0 = t1
    return math.inf, NO_HIT, 0, 0


@njit(cache=True)
def hit_geometry(ox, oy, ux, uy, t, circles, index, i, j):
    "Contact point in the ray's frame and the unit normal pointing into the free region"
    cx, cy, rho = circles[index, 0], circles[index, 1], circles[index, 2]
    px, py = ox + t * ux, oy + t * uy
    return px, py, (px - (cx + i)) / rho, (py - (cy + j)) / rho


def first_hit(
    origin: Sequence[float],
    velocity: Sequence[float],
    circles: Sequence[Circle] | np.ndarray,
    t_max: float,
    exclude: tuple[int, tuple[int, int]] | None = None,
) -> Hit | None:
    """
    Earliest entry of the ray origin + t·velocity into any lattice image of the
    given circles with 0 < t <= t_max. The returned point is in the origin's frame
    (unwrapped) and the normal points out of the circle, into the free region.
    """
    arr = as_circle_array(circles)
    ox, oy = float(origin[0]), float(origin[1])
    ux, uy = float(velocity[0]), float(velocity[1])
    ex_index, (ex_i, ex_j) = exclude if exclude is not None else (NO_HIT, (0, 0))
    t, index, i, j = scan(ox, oy, ux, uy, arr, float(t_max), ex_index, ex_i, ex_j)
    if index == NO_HIT:
        return None
    px, py, nx, ny = hit_geometry(ox, oy, ux, uy, t, arr, index, i, j)
    return Hit(t, int(index), (int(i), int(j)), (px, py), (nx, ny))


@njit(cache=True)
def boundary_distance(x, y, circles):
    best = math.inf
    for k in range(circles.shape[0]):
        dx = half_open(circles[k, 0] - x)
        dy = half_open(circles[k, 1] - y)
        best = min(best, math.hypot(dx, dy) - circles[k, 2])
    return best


def dist_to_boundary(Q: Sequence[float], table: TorusTable) -> float:
    "Signed distance from Q to the nearest scatterer boundary (negative inside a scatterer)"
    return boundary_distance(float(Q[0]), float(Q[1]), table.circle_array)


def dist_to_boundary_array(points: np.ndarray, table: TorusTable) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    out = np.full(points.shape[0], np.inf)
    for s in table.scatterers:
        d = points - np.asarray(s.center)
        d -= np.ceil(d - 0.5)
        out = np.minimum(out, np.hypot(d[:, 0], d[:, 1]) - s.radius)
    return out


def first_hit_static(
    origin: Sequence[float],
    direction: Sequence[float],
    table: TorusTable,
    t_max: float,
    exclude: tuple[int, tuple[int, int]] | None = None,
) -> Hit | None:
    "Free flight of a point particle among the fixed scatterers"
    if dist_to_boundary(origin, table) < -GRAZING_TOLERANCE:
        raise DomainError(f"ray origin {tuple(origin)} lies inside a scatterer")
    return first_hit(origin, direction, table.circle_array, t_max, exclude)


def min_gap(circles: Sequence[Circle]) -> float:
    """
    Smallest distance between two distinct boundary components, counting lattice
    images of the same circle as distinct. No free path can be shorter.
    """
    best = math.inf
    for i, (xi, yi, ri) in enumerate(circles):
        best = min(best, 1.0 - 2.0 * ri)
        for xj, yj, rj in circles[i + 1 :]:
            best = min(best, torus_distance((xi, yi), (xj, yj)) - ri - rj)
    return best


class HorizonReport(BaseModel):
    passed: bool = Field(..., description="True iff every swept ray hit a scatterer within l_max")
    l_max: float
    worst_free_path: float = Field(
        ..., description="Longest free path observed; inf when some ray escaped"
    )
    n_rays: int = Field(..., description="Number of rays traced")
    offending_origin: tuple[float, float] | None = None
    offending_direction: tuple[float, float] | None = None


def check_finite_horizon(
    table: TorusTable,
    l_max: float | None = None,
    n_directions: int = 720,
    n_offsets: int = 256,
) -> HorizonReport:
    """
    Heuristic finite-horizon validator. Sweeps directions over [0, 2π) and, for
    each, a family of parallel rays whose transverse offsets cover a cell diagonal.
    A pass is evidence, not a proof: a corridor thinner than the offset spacing can
    be missed. The sweep stops at the first escaping ray.
    """
    if n_directions < 1 or n_offsets < 1:
        raise ArgumentError("n_directions and n_offsets must be at least 1")
    l_max = float(table.l_max if l_max is None else l_max)
    circles = table.circle_array
    worst = 0.0
    n_rays = 0
    for k in range(n_directions):
        theta = 2.0 * math.pi * k / n_directions
        dx, dy = math.cos(theta), math.sin(theta)
        for m in range(n_offsets):
            s = ((m + 0.5) / n_offsets - 0.5) * SQRT2
            origin = wrap(0.5 - s * dy, 0.5 + s * dx)
            if boundary_distance(origin[0], origin[1], circles) < 0.0:
                continue
            n_rays += 1
            t, index, _, _ = scan(origin[0], origin[1], dx, dy, circles, l_max, NO_HIT, 0, 0)
            if index == NO_HIT:
                logger.info("Escaping ray from %s along (%.6f, %.6f)", origin, dx, dy)
                return HorizonReport(
                    passed=False,
                    l_max=l_max,
                    worst_free_path=math.inf,
                    n_rays=n_rays,
                    offending_origin=origin,
                    offending_direction=(dx, dy),
                )
            worst = max(worst, t)
    return HorizonReport(passed=True, l_max=l_max, worst_free_path=worst, n_rays=n_rays)
