"""
Event-driven simulation of the coupled system: a heavy disk of mass M and radius
r and a light particle of unit mass, moving on the billiard table and colliding
elastically. Between events both move linearly, so the simulation jumps from one
event to the next.

The total kinetic energy ‖v‖² + M‖V‖² is held on its shell by rescaling v after
every collision. In stopped mode the disk is frozen for good once its clearance
from the scatterers drops to r + δ₀; its kinetic energy leaves the system and the
shell constant becomes ‖v‖².

The event loop runs in numba kernels on a packed state vector. Kernels report
failures as status codes; the Python entry points turn them into exceptions.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Literal

import numpy as np
import polars as pl
from numba import njit
from pydantic import BaseModel, ConfigDict, Field

from brownian_billiards.errors import BilliardError, ContractViolation, DomainError, NumericalDriftError
from brownian_billiards.geometry import (
    NO_HIT,
    Point,
    TorusTable,
    boundary_distance,
    dist_to_boundary,
    first_hit,
    half_open,
    hit_geometry,
    reflect,
    rescale,
    scan,
    torus_distance,
    unit_interval,
    wrap,
)

logger = logging.getLogger(__name__)

TIE_WINDOW = 1e-13
DRIFT_LIMIT = 1e-6
STATE_TOLERANCE = 1e-9
BOUND_SLACK = 1e-12
# collision rows and momentum transfers are drained from the kernel this many at a time
ROW_BUFFER = 65_536


class EventKind(StrEnum):
    PARTICLE_SCATTERER = "particle_scatterer"
    PARTICLE_DISK = "particle_disk"
    DISK_STOP = "disk_stop"
    DISK_WALL = "disk_wall"
    HORIZON = "horizon"


# Kernel codes; a lower code wins a tie
CODES = {kind: code for code, kind in enumerate(EventKind)}
KINDS = tuple(EventKind)
SCATTERER_HIT, DISK_HIT, DISK_STOP, DISK_WALL, HORIZON = range(len(KINDS))
NO_EVENT = -1

# Packed state: float slots and integer slots
QX, QY, VX, VY, PX, PY, UX, UY, T, DX, DY, ENERGY = range(12)
N_COLLISIONS, FROZEN, WALL_CONTACT = range(3)

# Kernel status codes
(
    OK,
    MOVING_INFINITE_DISK,
    OFF_SHELL,
    DISK_OVERLAP,
    PARTICLE_IN_DISK,
    PARTICLE_IN_SCATTERER,
    NO_EVENT_AHEAD,
    EVENT_IN_PAST,
    BOUNDS_BROKEN,
    BAD_STOP,
    BAD_WALL,
    AT_REST,
    NO_ENERGY_LEFT,
    DRIFT,
) = range(14)

_FAILURES: dict[int, tuple[type[BilliardError], str]] = {
    MOVING_INFINITE_DISK: (DomainError, "the disk cannot move in infinite-mass mode"),
    OFF_SHELL: (DomainError, "state is off the energy shell by {detail:.3e}"),
    DISK_OVERLAP: (DomainError, "disk at {state.Q} overlaps a scatterer"),
    PARTICLE_IN_DISK: (DomainError, "particle at {state.q} is inside the disk"),
    PARTICLE_IN_SCATTERER: (DomainError, "particle at {state.q} is inside a scatterer"),
    NO_EVENT_AHEAD: (ContractViolation, "no event within l_max from t = {state.t} and no finite horizon before it"),
    EVENT_IN_PAST: (ContractViolation, "event lies {detail:.3e} before the state at t = {state.t}"),
    BOUNDS_BROKEN: (ContractViolation, "per-collision bounds on |Δ‖v‖| and ‖ΔV‖ broken by {detail:.3e}"),
    BAD_STOP: (ContractViolation, "disk_stop event on a disk that cannot be stopped"),
    BAD_WALL: (ContractViolation, "disk_wall event in stopped mode"),
    AT_REST: (DomainError, "cannot renormalize a particle at rest"),
    NO_ENERGY_LEFT: (NumericalDriftError, "disk carries all the energy (remaining {detail:.3e})"),
    DRIFT: (NumericalDriftError, f"energy rescale factor {{detail:.12g}} deviates by more than {DRIFT_LIMIT}"),
}

# Why a kernel run returned
STOP_REASONS = ("horizon", "max_collisions", "disk_wall", "frozen")
STOP_HORIZON, STOP_MAX_COLLISIONS, STOP_DISK_WALL, STOP_FROZEN = range(4)
PAUSED, FAILED = 4, 5


class SimParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    M: float = Field(..., ge=1.0, description="Mass ratio of disk to particle; inf holds the disk still")
    r: float = Field(..., gt=0.0, description="Disk radius")
    delta0: float = Field(0.02, gt=0.0, description="Extra clearance at which the disk is stopped")
    mode: Literal["free", "stopped"] = Field(
        "free", description="free: run until disk-wall contact or horizon; stopped: freeze the disk"
    )
    horizon_time: float | None = Field(None, gt=0.0, description="Absolute physical end time")
    max_collisions: int | None = Field(None, ge=1, description="Particle collisions before stopping")
    seed: int = Field(0, ge=0)

    @property
    def infinite_mass(self) -> bool:
        return math.isinf(self.M)


@dataclass(frozen=True, slots=True)
class SystemState:
    Q: Point
    V: Point
    q: Point
    v: Point
    t: float = 0.0
    n_collisions: int = 0
    frozen: bool = False
    energy: float = 1.0
    # unwrapped displacement of the disk since the start of the run
    disp: Point = (0.0, 0.0)
    wall_contact: bool = False


@dataclass(frozen=True, slots=True)
class CollisionEvent:
    time: float
    kind: EventKind
    index: int | None = None
    image: tuple[int, int] | None = None
    point: Point | None = None
    normal: Point | None = None
    ties: int = 0


def _pack(state: SystemState) -> tuple[np.ndarray, np.ndarray]:
    floats = np.array(
        [*state.Q, *state.V, *state.q, *state.v, state.t, *state.disp, state.energy], dtype=np.float64
    )
    ints = np.array([state.n_collisions, int(state.frozen), int(state.wall_contact)], dtype=np.int64)
    return floats, ints


def _unpack(S: np.ndarray, F: np.ndarray) -> SystemState:
    return SystemState(
        Q=(float(S[QX]), float(S[QY])),
        V=(float(S[VX]), float(S[VY])),
        q=(float(S[PX]), float(S[PY])),
        v=(float(S[UX]), float(S[UY])),
        t=float(S[T]),
        n_collisions=int(F[N_COLLISIONS]),
        frozen=bool(F[FROZEN]),
        energy=float(S[ENERGY]),
        disp=(float(S[DX]), float(S[DY])),
        wall_contact=bool(F[WALL_CONTACT]),
    )


def _failure(status: int, detail: float, state: SystemState) -> BilliardError:
    cls, message = _FAILURES[status]
    return cls(message.format(detail=detail, state=state))


@dataclass(frozen=True)
class Obstacles:
    """
    Circle arrays the event kernels scan: the scatterers, the scatterers plus a
    resting disk (its center is written in before each scan), the disk alone in
    its own frame, and the scatterers inflated by the clearance that ends the
    disk's flight.
    """

    circles: np.ndarray
    with_disk: np.ndarray
    disk: np.ndarray
    inflated: np.ndarray

    @classmethod
    def build(cls, table: TorusTable, params: SimParams) -> "Obstacles":
        circles = table.circle_array
        disk = np.array([[0.0, 0.0, params.r]])
        pad = params.r + params.delta0 if params.mode == "stopped" else params.r
        inflated = circles.copy()
        inflated[:, 2] += pad
        return cls(circles, np.vstack((circles, disk)), disk, inflated)


@njit(cache=True)
def _disk_energy(Vx, Vy, M):
    if Vx == 0.0 and Vy == 0.0:
        return 0.0
    return M * (Vx * Vx + Vy * Vy)


@njit(cache=True)
def _state_status(S, circles, r, M):
    if math.isinf(M) and (S[VX] != 0.0 or S[VY] != 0.0):
        return MOVING_INFINITE_DISK, 0.0
    shell = S[UX] * S[UX] + S[UY] * S[UY] + _disk_energy(S[VX], S[VY], M)
    if abs(shell - S[ENERGY]) > 1e-8:
        return OFF_SHELL, shell - S[ENERGY]
    if boundary_distance(S[QX], S[QY], circles) < r - STATE_TOLERANCE:
        return DISK_OVERLAP, 0.0
    if math.hypot(half_open(S[QX] - S[PX]), half_open(S[QY] - S[PY])) < r - STATE_TOLERANCE:
        return PARTICLE_IN_DISK, 0.0
    if boundary_distance(S[PX], S[PY], circles) < -STATE_TOLERANCE:
        return PARTICLE_IN_SCATTERER, 0.0
    return OK, 0.0


@njit(cache=True)
def _put(cand, n, t, kind, index, i, j, px, py, nx, ny):
    row = cand[n]
    row[0], row[1], row[2], row[3], row[4] = t, kind, index, i, j
    row[5], row[6], row[7], row[8] = px, py, nx, ny


@njit(cache=True)
def _next_event(S, F, circles, with_disk, disk, inflated, l_max, stopped, t_end):
    """
    Earliest event after S[T] as (kind, time, index, i, j, px, py, nx, ny, ties),
    kind = NO_EVENT when nothing happens within l_max and the horizon is further.
    """
    qx, qy, vx, vy = S[PX], S[PY], S[UX], S[UY]
    Qx, Qy, Vx, Vy = S[QX], S[QY], S[VX], S[VY]
    remaining = t_end - S[T]
    t_scan = min(l_max / math.hypot(vx, vy), remaining)
    n_scatterers = circles.shape[0]
    static_disk = Vx == 0.0 and Vy == 0.0

    # rows: dt, kind, index, i, j, px, py, nx, ny
    cand = np.empty((3, 9))
    n = 0
    table = circles
    if static_disk:
        with_disk[n_scatterers, 0] = Qx
        with_disk[n_scatterers, 1] = Qy
        table = with_disk
    t, index, i, j = scan(qx, qy, vx, vy, table, t_scan, NO_HIT, 0, 0)
    t_best = t_scan
    if index != NO_HIT:
        px, py, nx, ny = hit_geometry(qx, qy, vx, vy, t, table, index, i, j)
        disk_hit = index == n_scatterers
        kind = DISK_HIT if disk_hit else SCATTERER_HIT
        _put(cand, n, t, kind, NO_HIT if disk_hit else index, i, j, px, py, nx, ny)
        n += 1
        t_best = t

    if not static_disk:
        relx, rely = half_open(qx - Qx), half_open(qy - Qy)
        wx, wy = vx - Vx, vy - Vy
        t, index, i, j = scan(relx, rely, wx, wy, disk, t_best, NO_HIT, 0, 0)
        if index != NO_HIT:
            _, _, nx, ny = hit_geometry(relx, rely, wx, wy, t, disk, index, i, j)
            _put(cand, n, t, DISK_HIT, NO_HIT, i, j, qx + t * vx, qy + t * vy, nx, ny)
            n += 1
            t_best = min(t_best, t)
        if F[FROZEN] == 0:
            t, index, i, j = scan(Qx, Qy, Vx, Vy, inflated, t_best, NO_HIT, 0, 0)
            if index != NO_HIT:
                _, _, nx, ny = hit_geometry(Qx, Qy, Vx, Vy, t, inflated, index, i, j)
                kind = DISK_STOP if stopped else DISK_WALL
                _put(cand, n, t, kind, index, i, j, math.nan, math.nan, nx, ny)
                n += 1

    if n == 0:
        if remaining <= t_scan and remaining < math.inf:
            return HORIZON, t_end, NO_HIT, 0, 0, math.nan, math.nan, math.nan, math.nan, 0
        return NO_EVENT, S[T], NO_HIT, 0, 0, math.nan, math.nan, math.nan, math.nan, 0

    first = cand[0, 0]
    for k in range(1, n):
        first = min(first, cand[k, 0])
    best, ties = -1, -1
    for k in range(n):
        if cand[k, 0] <= first + TIE_WINDOW:
            ties += 1
            if best < 0:
                best = k
            elif cand[k, 1] < cand[best, 1] or (cand[k, 1] == cand[best, 1] and cand[k, 0] < cand[best, 0]):
                best = k
    c = cand[best]
    return (
        int(c[1]), S[T] + c[0], int(c[2]), int(c[3]), int(c[4]), c[5], c[6], c[7], c[8], ties
    )


@njit(cache=True)
def _renormalize(S, M):
    target = S[ENERGY] - _disk_energy(S[VX], S[VY], M)
    if S[UX] == 0.0 and S[UY] == 0.0:
        return AT_REST, 0.0
    if target <= 0.0:
        return NO_ENERGY_LEFT, target
    vx, vy, factor = rescale(S[UX], S[UY], target)
    if abs(factor - 1.0) > DRIFT_LIMIT:
        return DRIFT, factor
    S[UX], S[UY] = vx, vy
    return OK, 0.0


@njit(cache=True)
def _advance(S, dt):
    S[PX] = unit_interval(S[PX] + S[UX] * dt)
    S[PY] = unit_interval(S[PY] + S[UY] * dt)
    S[QX] = unit_interval(S[QX] + S[VX] * dt)
    S[QY] = unit_interval(S[QY] + S[VY] * dt)
    S[DX] += S[VX] * dt
    S[DY] += S[VY] * dt
    S[T] += dt


@njit(cache=True)
def _apply(S, F, kind, time, px, py, nx, ny, M, stopped):
    dt = time - S[T]
    if dt < 0.0:
        return EVENT_IN_PAST, -dt
    _advance(S, dt)

    if kind == SCATTERER_HIT:
        S[UX], S[UY] = reflect(S[UX], S[UY], nx, ny)
        S[PX], S[PY] = unit_interval(px), unit_interval(py)
        F[N_COLLISIONS] += 1
        return _renormalize(S, M)

    if kind == DISK_HIT:
        vx, vy, Vx, Vy = S[UX], S[UY], S[VX], S[VY]
        if math.isinf(M) or F[FROZEN] != 0:
            wx, wy = reflect(vx - Vx, vy - Vy, nx, ny)
            new_vx, new_vy, new_Vx, new_Vy = Vx + wx, Vy + wy, Vx, Vy
        else:
            v_n = vx * nx + vy * ny
            V_n = Vx * nx + Vy * ny
            ratio = (M - 1.0) / (M + 1.0)
            dv = -ratio * v_n + (2.0 * M / (M + 1.0)) * V_n - v_n
            dV = ratio * V_n + (2.0 / (M + 1.0)) * v_n - V_n
            new_vx, new_vy = vx + dv * nx, vy + dv * ny
            new_Vx, new_Vy = Vx + dV * nx, Vy + dV * ny
            speed_change = abs(math.hypot(new_vx, new_vy) - math.hypot(vx, vy))
            kick = math.hypot(new_Vx - Vx, new_Vy - Vy)
            excess = max(speed_change - 2.0 / math.sqrt(M), kick - 2.0 / M)
            if excess > BOUND_SLACK:
                return BOUNDS_BROKEN, excess
        S[UX], S[UY], S[VX], S[VY] = new_vx, new_vy, new_Vx, new_Vy
        S[PX], S[PY] = unit_interval(px), unit_interval(py)
        F[N_COLLISIONS] += 1
        return _renormalize(S, M)

    if kind == DISK_STOP:
        if not stopped or F[FROZEN] != 0:
            return BAD_STOP, 0.0
        S[VX], S[VY] = 0.0, 0.0
        S[ENERGY] = S[UX] * S[UX] + S[UY] * S[UY]
        F[FROZEN] = 1
        return OK, 0.0

    if kind == DISK_WALL:
        if stopped:
            return BAD_WALL, 0.0
        F[WALL_CONTACT] = 1
    return OK, 0.0


@njit(cache=True)
def _record(S, F, at, k, ck_t, ck_disp, ck_V, ck_n, ck_frozen):
    dt = at - S[T]
    ck_t[k] = at
    ck_disp[k, 0] = S[DX] + S[VX] * dt
    ck_disp[k, 1] = S[DY] + S[VY] * dt
    ck_V[k, 0] = S[VX]
    ck_V[k, 1] = S[VY]
    ck_n[k] = F[N_COLLISIONS]
    ck_frozen[k] = F[FROZEN] != 0


@njit(cache=True)
def _run_events(
    S, F, circles, with_disk, disk, inflated, l_max, r, M, stopped, t_end, max_collisions,
    times, ck_pos, ck_t, ck_disp, ck_V, ck_n, ck_frozen,
    record_rows, rows, transfers, fill, counts, errors, stop_when_frozen,
):
    """
    Event loop from the packed state until a stop condition, a failure, or a full
    output buffer. Returns (reason, status, detail); S and F hold the state reached.
    """
    infinite = math.isinf(M)
    n_ck = times.shape[0]
    while True:
        if (record_rows and fill[0] >= rows.shape[0]) or fill[1] >= transfers.shape[0]:
            return PAUSED, OK, 0.0
        if max_collisions >= 0 and F[N_COLLISIONS] >= max_collisions:
            return STOP_MAX_COLLISIONS, OK, 0.0
        status, detail = _state_status(S, circles, r, M)
        if status != OK:
            return FAILED, status, detail
        kind, time, index, i, j, px, py, nx, ny, ties = _next_event(
            S, F, circles, with_disk, disk, inflated, l_max, stopped, t_end
        )
        if kind == NO_EVENT:
            return FAILED, NO_EVENT_AHEAD, 0.0
        k = ck_pos[0]
        while k < n_ck and times[k] <= time:
            _record(S, F, times[k], k, ck_t, ck_disp, ck_V, ck_n, ck_frozen)
            k += 1
        ck_pos[0] = k

        vx0, vy0, Vx0, Vy0 = S[UX], S[UY], S[VX], S[VY]
        was_frozen = F[FROZEN] != 0
        status, detail = _apply(S, F, kind, time, px, py, nx, ny, M, stopped)
        if status != OK:
            return FAILED, status, detail
        counts[kind] += 1
        counts[HORIZON + 1] += ties

        if kind == SCATTERER_HIT or kind == DISK_HIT:
            shell = S[UX] * S[UX] + S[UY] * S[UY] + _disk_energy(S[VX], S[VY], M)
            errors[0] = max(errors[0], abs(shell - S[ENERGY]))
            if record_rows:
                row = fill[0]
                rows[row, 0] = S[T]
                rows[row, 1] = F[N_COLLISIONS]
                rows[row, 2], rows[row, 3] = S[QX], S[QY]
                rows[row, 4], rows[row, 5] = S[VX], S[VY]
                fill[0] += 1
        if kind == DISK_HIT and not (infinite or was_frozen):
            p_before = vx0 * nx + vy0 * ny + M * (Vx0 * nx + Vy0 * ny)
            p_after = S[UX] * nx + S[UY] * ny + M * (S[VX] * nx + S[VY] * ny)
            errors[1] = max(errors[1], abs(p_after - p_before))
            row = fill[1]
            transfers[row, 0] = S[T]
            transfers[row, 1] = S[VX] - Vx0
            transfers[row, 2] = S[VY] - Vy0
            fill[1] += 1

        if kind == HORIZON:
            return STOP_HORIZON, OK, 0.0
        if kind == DISK_WALL:
            return STOP_DISK_WALL, OK, 0.0
        if F[FROZEN] != 0 and stop_when_frozen:
            k = ck_pos[0]
            while k < n_ck and times[k] <= t_end:
                _record(S, F, times[k], k, ck_t, ck_disp, ck_V, ck_n, ck_frozen)
                k += 1
            ck_pos[0] = k
            return STOP_FROZEN, OK, 0.0


def next_event(
    state: SystemState,
    params: SimParams,
    table: TorusTable,
    t_end: float | None = None,
) -> CollisionEvent:
    """
    Earliest event after state.t: particle-scatterer, particle-disk, and for a
    moving disk either disk_stop (stopped mode) or disk_wall (free mode). A horizon
    event is returned at t_end (default params.horizon_time) if nothing comes first.
    Events closer than 1e-13 in time are resolved by kind priority.
    """
    S, F = _pack(state)
    obstacles = Obstacles.build(table, params)
    status, detail = _state_status(S, obstacles.circles, params.r, params.M)
    if status != OK:
        raise _failure(status, detail, state)
    t_end = params.horizon_time if t_end is None else t_end
    kind, time, index, i, j, px, py, nx, ny, ties = _next_event(
        S,
        F,
        obstacles.circles,
        obstacles.with_disk,
        obstacles.disk,
        obstacles.inflated,
        table.l_max,
        params.mode == "stopped",
        math.inf if t_end is None else float(t_end),
    )
    if kind == NO_EVENT:
        raise _failure(NO_EVENT_AHEAD, 0.0, state)
    event_kind = KINDS[kind]
    if ties:
        logger.debug("Event tie at t = %.17g resolved to %s", time, event_kind)
    if event_kind is EventKind.HORIZON:
        return CollisionEvent(time, event_kind)
    return CollisionEvent(
        time,
        event_kind,
        None if index == NO_HIT else int(index),
        (int(i), int(j)),
        None if math.isnan(px) else (px, py),
        (nx, ny),
        int(ties),
    )


def renormalize_energy(state: SystemState, M: float) -> SystemState:
    "Rescale v alone so that ‖v‖² + M‖V‖² equals the shell constant"
    S, F = _pack(state)
    status, detail = _renormalize(S, float(M))
    if status != OK:
        raise _failure(status, detail, state)
    return _unpack(S, F)


def advance(state: SystemState, dt: float) -> SystemState:
    "Free motion of both bodies for dt; the caller guarantees no event in between"
    S, F = _pack(state)
    _advance(S, float(dt))
    return _unpack(S, F)


def reverse(state: SystemState) -> SystemState:
    (vx, vy), (Vx, Vy) = state.v, state.V
    return replace(state, v=(-vx, -vy), V=(-Vx, -Vy))


def apply_collision(state: SystemState, event: CollisionEvent, params: SimParams) -> SystemState:
    S, F = _pack(state)
    px, py = event.point if event.point is not None else (math.nan, math.nan)
    nx, ny = event.normal if event.normal is not None else (math.nan, math.nan)
    status, detail = _apply(
        S, F, CODES[event.kind], float(event.time), px, py, nx, ny, params.M, params.mode == "stopped"
    )
    if status != OK:
        raise _failure(status, detail, state)
    return _unpack(S, F)


def disk_contact_time(table: TorusTable, Q0: Point, V0: Point, r: float) -> float:
    "Time at which a disk moving linearly from Q0 at V0 first touches a scatterer"
    speed = math.hypot(*V0)
    if speed == 0.0:
        return math.inf
    inflated = table.circle_array.copy()
    inflated[:, 2] += r
    hit = first_hit(Q0, V0, inflated, table.l_max / speed)
    return math.inf if hit is None else hit.t


def default_free_horizon(
    table: TorusTable, Q0: Point, V0: Point, r: float, safety: float = 0.9
) -> float:
    return safety * disk_contact_time(table, Q0, V0, r)


def sample_initial_state(
    table: TorusTable,
    Q0: Point,
    V0: Point,
    params: SimParams,
    rng: np.random.Generator,
    max_tries: int = 100_000,
) -> SystemState:
    """
    Particle position uniform on the free region outside the disk (by rejection),
    velocity uniform in direction with the speed that puts the pair on the shell.
    """
    disk_energy = _disk_energy(float(V0[0]), float(V0[1]), params.M)
    if params.infinite_mass and disk_energy != 0.0:
        raise DomainError("the disk cannot move in infinite-mass mode")
    if disk_energy >= 1.0:
        raise DomainError(f"M‖V0‖² = {disk_energy} leaves no energy for the particle")
    clearance = params.r + (params.delta0 if params.mode == "stopped" else 0.0)
    if dist_to_boundary(Q0, table) <= clearance:
        raise DomainError(f"Q0 = {tuple(Q0)} does not clear the scatterers by {clearance}")
    Q = wrap(*Q0)
    for _ in range(max_tries):
        q = (float(rng.random()), float(rng.random()))
        if dist_to_boundary(q, table) > 0.0 and torus_distance(q, Q) > params.r:
            break
    else:
        raise DomainError("rejection sampling of the particle position did not terminate")
    speed = math.sqrt(1.0 - disk_energy)
    angle = 2.0 * math.pi * rng.random()
    return SystemState(Q=Q, V=(float(V0[0]), float(V0[1])), q=q, v=(speed * math.cos(angle), speed * math.sin(angle)))


@dataclass(frozen=True)
class ObservationPlan:
    times: tuple[float, ...] = ()
    record_collisions: bool = False
    # once frozen the disk observables are constant, so the run may end early
    stop_when_frozen: bool = True


@dataclass
class Trajectory:
    """
    Record of one run. Checkpoint rows hold the disk displacement since the start
    (unwrapped) and velocity at the planned times, interpolated exactly between
    events; rows the run did not reach are NaN.
    """

    initial: SystemState
    final: SystemState
    stop_reason: str
    checkpoint_t: np.ndarray
    checkpoint_disp: np.ndarray
    checkpoint_V: np.ndarray
    checkpoint_n: np.ndarray
    checkpoint_frozen: np.ndarray
    collision_rows: np.ndarray
    transfers: np.ndarray
    counts: dict[str, int] = field(default_factory=dict)
    n_ties: int = 0
    max_energy_error: float = 0.0
    max_momentum_error: float = 0.0

    def to_frame(self) -> pl.DataFrame:
        "Rows (t, n_collisions, Qx, Qy, Vx, Vy) from collisions and checkpoints, by time"
        Q0 = np.asarray(self.initial.Q)
        reached = ~np.isnan(self.checkpoint_t)
        Q = np.mod(Q0 + self.checkpoint_disp[reached], 1.0)
        checkpoints = np.column_stack(
            (self.checkpoint_t[reached], self.checkpoint_n[reached], Q, self.checkpoint_V[reached])
        )
        rows = np.vstack((self.collision_rows.reshape(-1, 6), checkpoints))
        rows = rows[np.argsort(rows[:, 0], kind="stable")]
        frame = pl.DataFrame(rows, schema=["t", "n_collisions", "Qx", "Qy", "Vx", "Vy"], orient="row")
        return frame.with_columns(pl.col("n_collisions").cast(pl.Int64))


def _resolve_end(state: SystemState, params: SimParams, table: TorusTable) -> float | None:
    if params.horizon_time is not None or params.max_collisions is not None:
        return params.horizon_time
    if params.mode == "free" and not params.infinite_mass and state.V != (0.0, 0.0):
        return state.t + default_free_horizon(table, state.Q, state.V, params.r)
    raise ContractViolation("no finite horizon configured: set horizon_time or max_collisions")


def evolve(
    state: SystemState,
    params: SimParams,
    table: TorusTable,
    plan: ObservationPlan = ObservationPlan(),
) -> Trajectory:
    t_end = _resolve_end(state, params, table)
    obstacles = Obstacles.build(table, params)
    times = np.sort(np.asarray(plan.times, dtype=np.float64))
    n_ck = times.shape[0]
    ck_t = np.full(n_ck, np.nan)
    ck_disp = np.full((n_ck, 2), np.nan)
    ck_V = np.full((n_ck, 2), np.nan)
    ck_n = np.zeros(n_ck, dtype=np.int64)
    ck_frozen = np.zeros(n_ck, dtype=np.bool_)
    ck_pos = np.zeros(1, dtype=np.int64)

    rows = np.empty((ROW_BUFFER if plan.record_collisions else 0, 6))
    transfers = np.empty((ROW_BUFFER, 3))
    fill = np.zeros(2, dtype=np.int64)
    counts = np.zeros(len(KINDS) + 1, dtype=np.int64)
    errors = np.zeros(2)
    row_chunks: list[np.ndarray] = []
    transfer_chunks: list[np.ndarray] = []

    S, F = _pack(state)
    while True:
        reason, status, detail = _run_events(
            S,
            F,
            obstacles.circles,
            obstacles.with_disk,
            obstacles.disk,
            obstacles.inflated,
            table.l_max,
            params.r,
            params.M,
            params.mode == "stopped",
            math.inf if t_end is None else float(t_end),
            -1 if params.max_collisions is None else params.max_collisions,
            times,
            ck_pos,
            ck_t,
            ck_disp,
            ck_V,
            ck_n,
            ck_frozen,
            plan.record_collisions,
            rows,
            transfers,
            fill,
            counts,
            errors,
            plan.stop_when_frozen,
        )
        row_chunks.append(rows[: fill[0]].copy())
        transfer_chunks.append(transfers[: fill[1]].copy())
        fill[:] = 0
        if reason == FAILED:
            raise _failure(status, detail, _unpack(S, F))
        if reason != PAUSED:
            break

    n_ties = int(counts[-1])
    if n_ties:
        logger.debug("Resolved %d event ties by kind priority", n_ties)
    return Trajectory(
        initial=state,
        final=_unpack(S, F),
        stop_reason=STOP_REASONS[reason],
        checkpoint_t=ck_t,
        checkpoint_disp=ck_disp,
        checkpoint_V=ck_V,
        checkpoint_n=ck_n,
        checkpoint_frozen=ck_frozen,
        collision_rows=np.concatenate(row_chunks).reshape(-1, 6),
        transfers=np.concatenate(transfer_chunks).reshape(-1, 3),
        counts={kind.value: int(counts[code]) for kind, code in CODES.items()},
        n_ties=n_ties,
        max_energy_error=float(errors[0]),
        max_momentum_error=float(errors[1]),
    )
