import json
import math

import numpy as np
import numpy.testing as npt
import polars as pl
import pytest

from brownian_billiards.config import config_hash, parse_config
from brownian_billiards.errors import ArgumentError
from brownian_billiards.io import (
    SCHEMA_VERSION,
    read_ensemble,
    read_meta,
    write_frame,
    write_report,
)
from brownian_billiards.limit_models import ensemble_frame


@pytest.fixture
def config(tmp_path):
    base = parse_config('{"sim": {"M": 10000}, "seed": 42}')
    return base.model_copy(update={"output": base.output.model_copy(update={"out_dir": str(tmp_path)})})


def test_report_header_and_non_finite_values(config):
    path = write_report("demo", "demo", {"x": 1.5, "bad": math.nan, "far": math.inf, "m": np.eye(2)}, config)
    doc = json.loads(path.read_text())
    assert doc["schema_version"] == SCHEMA_VERSION
    assert doc["kind"] == "demo"
    assert doc["seed"] == 42
    assert doc["config_hash"] == config_hash(config)
    assert doc["result"] == {"x": 1.5, "bad": None, "far": None, "m": [[1.0, 0.0], [0.0, 1.0]]}
    assert "output" not in doc["config"]
    assert "workers" not in doc["config"]


def test_ensemble_csv_round_trip(config, rng):
    tau = np.array([0.1, 0.2, 0.30000000000000004])
    V = rng.normal(size=(4, 3, 2))
    Q = rng.normal(size=(4, 3, 2)) / 3.0
    frozen = np.zeros((4, 3), dtype=bool)
    frozen[2, 1:] = True
    path = write_frame("ens", "limit_ensemble", ensemble_frame(tau, V, Q, frozen), config, {"regime": "thm2"})

    regime, tau_back, V_back, Q_back, frozen_back = read_ensemble(path)
    assert regime == "thm2"
    npt.assert_array_equal(tau_back, tau)
    npt.assert_array_equal(V_back, V)
    npt.assert_array_equal(Q_back, Q)
    npt.assert_array_equal(frozen_back, frozen)

    meta = read_meta(path)
    assert meta["n_rows"] == 12
    assert meta["columns"] == ["path", "tau", "Vx", "Vy", "Qx", "Qy", "frozen"]
    assert meta["seed"] == 42


def test_csv_floats_carry_seventeen_digits(config):
    frame = pl.DataFrame({"x": [0.1, 1.0 / 3.0]})
    path = write_frame("digits", "demo", frame, config)
    lines = path.read_text().splitlines()
    assert lines == ["x", "0.10000000000000001", "0.33333333333333331"]


def test_csv_float_formatting_keeps_nulls_and_nan(config):
    frame = pl.DataFrame({"k": [1, 2, 3], "x": [0.5, None, math.nan]})
    lines = write_frame("gaps", "demo", frame, config).read_text().splitlines()
    assert lines == ["k,x", "1,0.5", "2,", "3,nan"]


def test_read_ensemble_requires_regime(config, rng):
    V = rng.normal(size=(2, 2, 2))
    path = write_frame("ens", "limit_ensemble", ensemble_frame([0.5, 1.0], V, V, np.zeros((2, 2), bool)), config)
    with pytest.raises(ArgumentError, match="regime"):
        read_ensemble(path)


def test_read_ensemble_rejects_other_tables(config):
    path = write_frame("other", "demo", pl.DataFrame({"a": [1.0]}), config, {"regime": "thm3"})
    with pytest.raises(ArgumentError):
        read_ensemble(path)


def test_read_ensemble_without_sidecar(tmp_path):
    with pytest.raises(ArgumentError, match="metadata"):
        read_ensemble(tmp_path / "missing.csv")
