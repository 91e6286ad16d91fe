import json
from pathlib import Path

import numpy as np
import pytest

from brownian_billiards.geometry import Scatterer, TorusTable, default_table

REPO_ROOT = Path(__file__).resolve().parents[1]
DEFAULT_CONFIG = REPO_ROOT / "configs" / "default.json"


@pytest.fixture
def table() -> TorusTable:
    return default_table()


@pytest.fixture
def second_table() -> TorusTable:
    "Corner radius 0.37, center radius 0.21: a longer boundary, horizon still finite"
    return TorusTable((Scatterer((0.0, 0.0), 0.37), Scatterer((0.5, 0.5), 0.21)))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240517)


@pytest.fixture
def default_doc() -> dict:
    return json.loads(DEFAULT_CONFIG.read_text())


@pytest.fixture
def small_config(tmp_path, default_doc):
    """Config small enough for a test run: M = 1e4, 50 paths, short horizons"""
    doc = default_doc
    doc["sim"]["M"] = 1e4
    doc["experiment"].update({"N": 50, "thm3": {"c": 0.05, "r_disk": 0.01}})
    doc["greenkubo"]["n_collisions"] = 20_000
    doc["sde"].update({"N": 60, "h": 0.005})
    doc["lyapunov"]["n"] = 2_000

    def write(**overrides) -> Path:
        for section, values in overrides.items():
            if isinstance(values, dict):
                doc[section].update(values)
            else:
                doc[section] = values
        path = tmp_path / "config.json"
        path.write_text(json.dumps(doc))
        return path

    return write


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("BBM_WORKERS", "BBM_OUT_DIR", "BBM_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)
