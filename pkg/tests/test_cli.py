import json
import os

import numpy as np
import pytest

from tenseg.cli import main
from tenseg.inekf import ContactVector, ImuSample
from tenseg.liegroup import so3_exp
from tenseg.logio import (
    ConfigError,
    LogFormatError,
    config_get,
    read_config,
    read_sensor_log,
    read_trajectory,
    write_sensor_log,
    write_trajectory,
)
from tenseg.shape import CableMeasurements

RNG = np.random.default_rng(13)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# sensor log format


def sample_streams():
    imu = [ImuSample(0.005 * k, RNG.normal(size=3), RNG.normal(size=3))
           for k in range(1, 5)]
    cables = [CableMeasurements.from_vector(0.01 * k, 1.0 + 0.1 * RNG.random(9))
              for k in range(3)]
    contacts = [ContactVector(0.01 * k, tuple(RNG.random(6) < 0.5))
                for k in range(3)]
    return imu, cables, contacts


def test_sensor_log_round_trip_exact(tmp_path):
    imu, cables, contacts = sample_streams()
    path = tmp_path / "sensors.jsonl"
    write_sensor_log(path, imu, cables, contacts, seed=7,
                     config={"maneuver": "forward"})
    header, events = read_sensor_log(path)
    assert header["seed"] == 7
    assert header["config"] == {"maneuver": "forward"}
    got_imu = [e for e in events if isinstance(e, ImuSample)]
    got_cab = [e for e in events if isinstance(e, CableMeasurements)]
    got_con = [e for e in events if isinstance(e, ContactVector)]
    for a, b in zip(imu, got_imu):
        assert a.timestamp == b.timestamp
        np.testing.assert_array_equal(a.accel, b.accel)
        np.testing.assert_array_equal(a.gyro, b.gyro)
    for a, b in zip(cables, got_cab):
        np.testing.assert_array_equal(a.as_vector(), b.as_vector())
    for a, b in zip(contacts, got_con):
        assert a.flags == b.flags


def test_sensor_log_is_time_ordered(tmp_path):
    imu, cables, contacts = sample_streams()
    path = tmp_path / "sensors.jsonl"
    write_sensor_log(path, imu, cables, contacts, seed=0)
    _, events = read_sensor_log(path)
    times = [e.timestamp for e in events]
    assert times == sorted(times)


def test_sensor_log_bad_json_reports_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    write_lines(path, ['{"type": "header", "version": "0", "seed": 0, '
                       '"config": {}}', "{not json"])
    with pytest.raises(LogFormatError, match="bad.jsonl:2"):
        read_sensor_log(path)


def test_sensor_log_missing_header(tmp_path):
    path = tmp_path / "nohdr.jsonl"
    write_lines(path, ['{"t": 0.1, "type": "imu", "a": [0,0,0], "w": [0,0,0]}'])
    with pytest.raises(LogFormatError, match="missing header"):
        read_sensor_log(path)


def test_sensor_log_backwards_time_rejected(tmp_path):
    path = tmp_path / "rev.jsonl"
    write_lines(path, [
        '{"type": "header", "version": "0", "seed": 0, "config": {}}',
        '{"t": 0.2, "type": "imu", "a": [0,0,0], "w": [0,0,0]}',
        '{"t": 0.1, "type": "imu", "a": [0,0,0], "w": [0,0,0]}',
    ])
    with pytest.raises(LogFormatError, match="rev.jsonl:3.*backwards"):
        read_sensor_log(path)


def test_sensor_log_unknown_type_rejected(tmp_path):
    path = tmp_path / "odd.jsonl"
    write_lines(path, [
        '{"type": "header", "version": "0", "seed": 0, "config": {}}',
        '{"t": 0.1, "type": "lidar", "x": 1}',
    ])
    with pytest.raises(LogFormatError, match="unknown record type"):
        read_sensor_log(path)


# ---------------------------------------------------------------------------
# trajectory format


def test_trajectory_round_trip(tmp_path):
    n = 20
    ts = np.arange(n) * 0.1
    ps = RNG.normal(size=(n, 3))
    Rs = np.array([so3_exp(RNG.normal(size=3)) for _ in range(n)])
    path = tmp_path / "traj.tum"
    write_trajectory(path, ts, ps, Rs)
    t2, p2, R2 = read_trajectory(path)
    np.testing.assert_array_equal(t2, ts)
    np.testing.assert_array_equal(p2, ps)
    np.testing.assert_allclose(R2, Rs, atol=1e-12)


def test_trajectory_bad_field_count(tmp_path):
    path = tmp_path / "short.tum"
    write_lines(path, ["0.0 1 2 3", "0.1 1 2 3 0 0 0 1"])
    with pytest.raises(LogFormatError, match="short.tum:1"):
        read_trajectory(path)


# ---------------------------------------------------------------------------
# config format


def test_config_parse(tmp_path):
    path = tmp_path / "run.cfg"
    write_lines(path, [
        "# run settings",
        "maneuver = forward",
        "target_length = 2.5   # short run",
        "chatter = 0.01",
    ])
    cfg = read_config(path)
    assert cfg == {"maneuver": "forward", "target_length": "2.5",
                   "chatter": "0.01"}
    assert config_get(cfg, "target_length", None, float) == 2.5
    assert config_get(cfg, "missing", 7, int) == 7


def test_config_rejects_duplicates_and_garbage(tmp_path):
    path = tmp_path / "dup.cfg"
    write_lines(path, ["a = 1", "a = 2"])
    with pytest.raises(ConfigError, match="duplicate"):
        read_config(path)
    write_lines(path, ["just some words"])
    with pytest.raises(ConfigError, match="key = value"):
        read_config(path)


def test_config_get_bad_cast():
    with pytest.raises(ConfigError):
        config_get({"x": "maybe"}, "x", False, bool)


# ---------------------------------------------------------------------------
# CLI verbs


def short_config(tmp_path):
    path = tmp_path / "short.cfg"
    write_lines(path, ["target_length = 2.0", "cable_noise = 0.002"])
    return str(path)


def test_pipeline_end_to_end(tmp_path):
    out = str(tmp_path / "run")
    code = main(["pipeline", "--out-dir", out, "--seed", "3",
                 "--config", short_config(tmp_path), "--log-level", "ERROR"])
    assert code == 0
    for name in ("sensors.jsonl", "ground_truth.tum", "sim_info.json",
                 "estimate.tum", "estimate_info.json", "metrics.json",
                 "errors.csv"):
        assert os.path.exists(os.path.join(out, name)), name
    metrics = json.load(open(os.path.join(out, "metrics.json")))
    assert metrics["drift_pct"] < 8.0
    assert metrics["path_length_m"] > 1.5
    with open(os.path.join(out, "errors.csv")) as f:
        assert f.readline().strip() == "t,ex,ey,ez"
        assert len(f.readlines()) > 100


def test_simulate_deterministic_per_seed(tmp_path):
    cfg = short_config(tmp_path)
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    for out in (a, b):
        assert main(["simulate", "--out-dir", out, "--seed", "5",
                     "--config", cfg, "--log-level", "ERROR"]) == 0
    for name in ("sensors.jsonl", "ground_truth.tum"):
        with open(os.path.join(a, name), "rb") as fa, \
             open(os.path.join(b, name), "rb") as fb:
            assert fa.read() == fb.read(), name


def test_estimate_deterministic(tmp_path):
    cfg = short_config(tmp_path)
    out = str(tmp_path / "run")
    assert main(["simulate", "--out-dir", out, "--seed", "2",
                 "--config", cfg, "--log-level", "ERROR"]) == 0
    assert main(["estimate", "--out-dir", out, "--log-level", "ERROR"]) == 0
    first = open(os.path.join(out, "estimate.tum"), "rb").read()
    assert main(["estimate", "--out-dir", out, "--log-level", "ERROR"]) == 0
    assert open(os.path.join(out, "estimate.tum"), "rb").read() == first


def test_unknown_config_key_is_config_error(tmp_path):
    path = tmp_path / "bad.cfg"
    write_lines(path, ["warp_speed = 9"])
    code = main(["simulate", "--out-dir", str(tmp_path / "x"),
                 "--config", str(path), "--log-level", "ERROR"])
    assert code == 2


def test_missing_input_file_is_input_error(tmp_path):
    code = main(["estimate", "--out-dir", str(tmp_path),
                 "--log-level", "ERROR"])
    assert code == 2


def test_corrupt_trajectory_is_input_error(tmp_path):
    out = str(tmp_path)
    write_lines(tmp_path / "estimate.tum", ["0 1 2 3"])
    write_lines(tmp_path / "ground_truth.tum", ["0 1 2 3"])
    assert main(["evaluate", "--out-dir", out, "--log-level", "ERROR"]) == 2


def test_usage_error_exits_1():
    with pytest.raises(SystemExit) as err:
        main(["simulate"])  # --out-dir is required
    assert err.value.code == 1


def test_runtime_failure_exits_3(tmp_path):
    path = tmp_path / "far.cfg"
    write_lines(path, ["target_length = 500.0"])
    code = main(["simulate", "--out-dir", str(tmp_path / "x"),
                 "--config", str(path), "--log-level", "ERROR"])
    assert code == 3
