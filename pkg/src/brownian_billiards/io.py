"""
Artifacts: JSON reports and CSV sample files. Every artifact carries the schema
version, the seed and the config hash; CSV files carry them in a
`<name>.meta.json` sidecar next to the data.

CSV float columns are written with 17 significant digits, JSON floats with
Python's shortest round-trip repr. Non-finite floats become null in JSON.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any

import numpy as np
import polars as pl
from pydantic import BaseModel

from brownian_billiards.config import RunConfig, config_hash, effective_config
from brownian_billiards.errors import ArgumentError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

ENSEMBLE_COLUMNS = ["path", "tau", "Vx", "Vy", "Qx", "Qy", "frozen"]


def _plain(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return _plain(obj.model_dump(mode="python"))
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return _plain(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _header(kind: str, config: RunConfig) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "config_hash": config_hash(config),
        "seed": config.seed,
    }


def write_report(name: str, kind: str, result: Any, config: RunConfig) -> Path:
    "Write <out_dir>/<name>.json holding the result, the effective config and its hash"
    out_dir = Path(config.output.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.json"
    doc = _header(kind, config) | {"config": _plain(effective_config(config)), "result": _plain(result)}
    path.write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n")
    logger.info("Wrote %s", path)
    return path


def _format_floats(frame: pl.DataFrame) -> pl.DataFrame:
    "Float columns as 17-significant-digit strings; nulls stay null"
    floats = [name for name, dtype in frame.schema.items() if dtype.is_float()]
    return frame.with_columns(
        pl.when(pl.col(name).is_not_null())
        .then(pl.lit(pl.Series(name, np.char.mod("%.17g", frame[name].to_numpy()).astype(str))))
        .alias(name)
        for name in floats
    )


def sidecar_path(path: Path) -> Path:
    return path.with_name(f"{path.stem}.meta.json")


def write_frame(
    name: str,
    kind: str,
    frame: pl.DataFrame,
    config: RunConfig,
    params: dict[str, Any] | None = None,
) -> Path:
    "Write <out_dir>/<name>.csv and its <name>.meta.json sidecar"
    out_dir = Path(config.output.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.csv"
    _format_floats(frame).write_csv(path)
    meta = _header(kind, config) | {
        "columns": frame.columns,
        "n_rows": frame.height,
        "params": _plain(params or {}),
        "config": _plain(effective_config(config)),
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2, allow_nan=False) + "\n")
    logger.info("Wrote %s (%d rows)", path, frame.height)
    return path


def read_meta(path: str | Path) -> dict[str, Any]:
    meta = sidecar_path(Path(path))
    try:
        return json.loads(meta.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ArgumentError(f"cannot read metadata {meta}: {exc}") from exc


def read_ensemble(path: str | Path) -> tuple[str, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Load an ensemble CSV back into checkpoint arrays: (regime, tau (K,),
    V (N, K, 2), Q (N, K, 2), frozen (N, K)).
    """
    meta = read_meta(path)
    regime = meta.get("params", {}).get("regime")
    if regime not in ("thm1", "thm2", "thm3"):
        raise ArgumentError(f"{path} does not name its regime in the sidecar")
    try:
        frame = pl.read_csv(
            path,
            schema_overrides={
                "path": pl.Int64,
                "tau": pl.Float64,
                "Vx": pl.Float64,
                "Vy": pl.Float64,
                "Qx": pl.Float64,
                "Qy": pl.Float64,
                "frozen": pl.Boolean,
            },
        )
    except (OSError, pl.exceptions.PolarsError) as exc:
        raise ArgumentError(f"cannot read ensemble {path}: {exc}") from exc
    if frame.columns != ENSEMBLE_COLUMNS:
        raise ArgumentError(f"{path}: expected columns {ENSEMBLE_COLUMNS}, got {frame.columns}")
    frame = frame.sort(["path", "tau"])
    n = frame["path"].n_unique()
    if n == 0 or frame.height % n:
        raise ArgumentError(f"{path}: paths have unequal numbers of checkpoints")
    k = frame.height // n
    tau = frame["tau"].to_numpy()[:k]
    V = frame.select("Vx", "Vy").to_numpy().reshape(n, k, 2)
    Q = frame.select("Qx", "Qy").to_numpy().reshape(n, k, 2)
    frozen = frame["frozen"].to_numpy().reshape(n, k)
    return regime, tau, V, Q, frozen
