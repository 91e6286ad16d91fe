"""
Run configuration: a JSON document validated into a pydantic model tree, with
overrides from the environment (.env via python-dotenv) and the command line.
Precedence is command line, then environment, then document.
"""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Literal

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from brownian_billiards.errors import ConfigParseError, ConfigValidationError, DomainError
from brownian_billiards.geometry import Scatterer, TorusTable, check_finite_horizon, dist_to_boundary

logger = logging.getLogger(__name__)

# Coarse sweep on load; check-horizon runs the full 720 × 256 one
LOAD_HORIZON_DIRECTIONS = 90
LOAD_HORIZON_OFFSETS = 32


class ScattererConfig(BaseModel):
    center: tuple[float, float]
    radius: float = Field(..., gt=0.0)


class TableConfig(BaseModel):
    scatterers: list[ScattererConfig] = Field(
        default_factory=lambda: [
            ScattererConfig(center=(0.0, 0.0), radius=0.38),
            ScattererConfig(center=(0.5, 0.5), radius=0.18),
        ],
        min_length=1,
    )
    l_max: float = Field(2.0, gt=0.0, description="Declared bound on free flights")

    def build(self) -> TorusTable:
        return TorusTable(tuple(Scatterer(s.center, s.radius) for s in self.scatterers), self.l_max)


class SimConfig(BaseModel):
    # M may be Infinity; keep it a JSON constant so dumps re-parse
    model_config = ConfigDict(ser_json_inf_nan="constants")

    M: float = Field(..., ge=1.0, description="Mass ratio; Infinity freezes the disk")
    r: float = Field(0.05, gt=0.0, description="Disk radius")
    delta0: float = Field(0.02, gt=0.0)
    mode: Literal["free", "stopped"] = "stopped"
    horizon_time: float | None = Field(None, gt=0.0)
    max_collisions: int | None = Field(None, ge=1)
    Q0: tuple[float, float] = (0.5, 0.0)
    V0: tuple[float, float] = (0.0, 0.0)


class Thm1Config(BaseModel):
    c: float = Field(0.4, gt=0.0)
    chi: float = Field(0.5, ge=0.0, lt=1.0)
    u0: tuple[float, float] = (0.0, 1.0)
    sigma_nodes: int = Field(5, ge=2, description="Green-Kubo nodes along the straight path")


class Thm2Config(BaseModel):
    c: float = Field(1.0, gt=0.0)


class Thm3Config(BaseModel):
    c: float = Field(0.5, gt=0.0)
    r_disk: float = Field(0.01, ge=0.0)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    regime: Literal["thm1", "thm2", "thm3"] = "thm3"
    M: float | None = Field(None, ge=1.0, description="Mass ratio of the ensembles; defaults to sim.M")
    N: int = Field(500, ge=1)
    n_checkpoints: int = Field(8, ge=1)
    thm1: Thm1Config = Thm1Config()
    thm2: Thm2Config = Thm2Config()
    thm3: Thm3Config = Thm3Config()


class GreenKuboConfig(BaseModel):
    n_collisions: int = Field(1_000_000, ge=1)
    J: int | None = Field(None, ge=0, description="Lag cutoff; None picks it from the data")
    n_batches: int = Field(32, ge=32, description="Batch-means groups of the orbit estimator")
    method: Literal["orbit", "restarts"] = "orbit"


class LyapunovConfig(BaseModel):
    n: int = Field(1_000_000, ge=1_000, description="Collisions in the orbit")
    offset: float = Field(1e-10, gt=0.0)
    orbit_dump: int = Field(0, ge=0, description="Collisions written to orbit.csv")


class SdeConfig(BaseModel):
    h: float | None = Field(None, gt=0.0, description="Step in τ; None means 1e-3·c")
    N: int = Field(500, ge=1)
    grid: int = Field(8, ge=2, description="Nodes per side of the σ² grid")
    n_collisions: int = Field(200_000, ge=1, description="Green-Kubo collisions per grid node")


class ScanConfig(BaseModel):
    origin: tuple[float, float] = (0.4625, -0.0375)
    h: float = Field(0.015, gt=0.0, lt=1.0)
    nx: int = Field(6, ge=1)
    ny: int = Field(6, ge=1)
    n_collisions: int = Field(200_000, ge=1)


class OutputConfig(BaseModel):
    out_dir: str = "results"


class RunConfig(BaseModel):
    table: TableConfig = TableConfig()
    sim: SimConfig
    experiment: ExperimentConfig = ExperimentConfig()
    greenkubo: GreenKuboConfig = GreenKuboConfig()
    lyapunov: LyapunovConfig = LyapunovConfig()
    sde: SdeConfig = SdeConfig()
    scan: ScanConfig = ScanConfig()
    output: OutputConfig = OutputConfig()
    seed: int = Field(0, ge=0, lt=2**64)
    workers: int = Field(1, ge=1)

    @property
    def ensemble_M(self) -> float:
        return self.sim.M if self.experiment.M is None else self.experiment.M


def _field_names(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def validate_geometry(config: RunConfig) -> TorusTable:
    "Checks disjointness, finite horizon and the admissibility of Q0; returns the table"
    try:
        table = config.table.build()
    except DomainError as exc:
        raise ConfigValidationError(f"table: {exc}") from exc
    report = check_finite_horizon(table, n_directions=LOAD_HORIZON_DIRECTIONS, n_offsets=LOAD_HORIZON_OFFSETS)
    if not report.passed:
        raise ConfigValidationError(
            f"finite horizon: a ray from {report.offending_origin} along {report.offending_direction} "
            f"flies farther than l_max = {table.l_max}"
        )
    clearance = config.sim.r + config.sim.delta0
    gap = dist_to_boundary(config.sim.Q0, table)
    if gap <= clearance:
        raise ConfigValidationError(
            f"admissible Q0: Q0 = {config.sim.Q0} clears the scatterers by {gap:.6g}, "
            f"need more than r + delta0 = {clearance:.6g}"
        )
    logger.debug("Table area %.5f, boundary length %.5f", table.area, table.boundary_length)
    return table


def parse_config(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"malformed JSON: {exc}") from exc
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigParseError(_field_names(exc)) from exc
    validate_geometry(config)
    return config


def load_config(
    path: str | Path,
    seed: int | None = None,
    out_dir: str | None = None,
    workers: int | None = None,
) -> RunConfig:
    load_dotenv()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigParseError(f"cannot read config {path}: {exc}") from exc
    config = parse_config(text)

    updates: dict = {}
    env_workers = os.environ.get("BBM_WORKERS")
    if workers is None and env_workers:
        try:
            workers = int(env_workers)
        except ValueError as exc:
            raise ConfigParseError(f"BBM_WORKERS: not an integer: {env_workers!r}") from exc
    if workers is not None:
        if workers < 1:
            raise ConfigParseError(f"workers: must be at least 1, got {workers}")
        updates["workers"] = workers
    out_dir = out_dir or os.environ.get("BBM_OUT_DIR")
    if out_dir:
        updates["output"] = config.output.model_copy(update={"out_dir": out_dir})
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigParseError(f"seed: must be an unsigned 64-bit integer, got {seed}")
        updates["seed"] = seed
    return config.model_copy(update=updates) if updates else config


# Execution settings that do not change any result
RESULT_NEUTRAL = {"workers", "output"}


def effective_config(config: RunConfig) -> dict:
    return config.model_dump(mode="json", exclude=RESULT_NEUTRAL)


def canonical_json(config: RunConfig) -> str:
    return json.dumps(effective_config(config), sort_keys=True, separators=(",", ":"))


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()
