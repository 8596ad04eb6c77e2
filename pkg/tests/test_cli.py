import json
import sys
from pathlib import Path

import numpy as np
import pytest

from trojscan import _png
from trojscan.calibrate import CalibrationRecord
from trojscan.cli import main
from trojscan.core import load_tensor_file
from trojscan.evaluation import EvalReport
from trojscan.oracle import EchoOracle

ECHO_WORKER = str(Path(__file__).parent / "echo_worker.py")


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data -> poisoned train -> calibrate -> evaluate, shared by tests."""
    root = tmp_path_factory.mktemp("pipeline")
    assert run("gen-data", "--out", root / "data", "--train", "60", "--test", "30",
               "--seed", "11") == 0
    data = root / "data"
    assert run("train", "--data", data / "train.tdk", "--out", root / "model.json",
               "--poison", "--trigger", data / "trigger_patch.json", "--target", "0",
               "--epochs", "12", "--seed", "11") == 0
    assert run("calibrate", "--oracle", root / "model.json", "--data", data / "train.tdk",
               "--out", root / "record.json", "--m", "10", "--frr", "0.05",
               "--scale", "0.6", "--seed", "11") == 0
    return root


def test_gen_data_artifacts(pipeline):
    data = pipeline / "data"
    assert (data / "train.tdk").exists()
    assert (data / "test.tdk").exists()
    assert (data / "trigger_patch.json").exists()
    assert (data / "trigger_blue_star.json").exists()
    manifest = json.loads((data / "run.manifest.json").read_text())
    assert manifest["subcommand"] == "gen-data"
    assert manifest["config"]["seed"] == 11
    train = load_tensor_file(data / "train.tdk")
    assert len(train) == 60
    assert train.class_count == 10


def test_calibrate_record_loadable(pipeline):
    record = CalibrationRecord.load(pipeline / "record.json")
    assert record.m == 10
    assert len(record.l_values) == 60
    manifest = json.loads((pipeline / "record.json.manifest.json").read_text())
    assert str(pipeline / "record.json") in manifest["artifacts"]


def test_refuses_to_overwrite(pipeline, capsys):
    code = run("calibrate", "--oracle", pipeline / "model.json",
               "--data", pipeline / "data" / "train.tdk",
               "--out", pipeline / "record.json", "--m", "5", "--seed", "11")
    assert code == 2
    assert "refusing to overwrite" in capsys.readouterr().err


def test_evaluate_and_sweep(pipeline, tmp_path):
    data = pipeline / "data"
    out = tmp_path / "report.json"
    csv_out = tmp_path / "report.csv"
    assert run("evaluate", "--oracle", pipeline / "model.json", "--record", pipeline / "record.json",
               "--benign", data / "test.tdk", "--trigger", data / "trigger_patch.json",
               "--target", "0", "--out", out, "--csv", csv_out, "--seed", "11") == 0
    report = EvalReport.load(out)
    assert 0.0 <= report.far <= 1.0
    assert csv_out.exists()

    sweep_csv = tmp_path / "sweep.csv"
    sweep_svg = tmp_path / "sweep.svg"
    assert run("sweep", "--oracle", pipeline / "model.json", "--record", pipeline / "record.json",
               "--benign", data / "test.tdk", "--trigger", data / "trigger_patch.json",
               "--target", "0", "--frr-list", "0.02,0.05,0.1", "--out", sweep_csv,
               "--svg", sweep_svg, "--seed", "11") == 0
    lines = sweep_csv.read_text().strip().splitlines()
    assert len(lines) == 4
    assert sweep_svg.read_text().startswith("<svg")


def test_detect_jsonl_output(pipeline, capsys):
    data = pipeline / "data"
    code = run("detect", "--oracle", pipeline / "model.json", "--record", pipeline / "record.json",
               "--data", data / "test.tdk", "--seed", "11")
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 30
    docs = [json.loads(line) for line in lines]
    assert all(set(d) == {"input", "decision", "L", "sigma", "p1", "p2", "label"} for d in docs)


def test_detect_calibration_item_reproduces_recorded_l(pipeline, capsys):
    # same session seed as calibrate => verdict L equals the recorded L
    record = CalibrationRecord.load(pipeline / "record.json")
    index = 4
    code = run("detect", "--oracle", pipeline / "model.json", "--record", pipeline / "record.json",
               "--data", pipeline / "data" / "train.tdk", "--index", index, "--seed", "11")
    out = capsys.readouterr().out.strip()
    doc = json.loads(out)
    assert doc["L"] == record.l_values[index]
    assert code == (3 if doc["decision"] == "trojan" else 0)


def test_strip_pipeline(pipeline, tmp_path):
    data = pipeline / "data"
    strip_out = tmp_path / "strip.json"
    assert run("strip-calibrate", "--oracle", pipeline / "model.json",
               "--data", data / "train.tdk", "--out", strip_out,
               "--holdout", "8", "--frr", "0.05", "--seed", "11") == 0
    report_out = tmp_path / "strip_report.json"
    assert run("strip-evaluate", "--oracle", pipeline / "model.json",
               "--strip-record", strip_out, "--strip-data", data / "train.tdk",
               "--benign", data / "test.tdk", "--trigger", data / "trigger_patch.json",
               "--target", "0", "--out", report_out, "--seed", "11") == 0
    doc = json.loads(report_out.read_text())
    assert 0.0 <= doc["far"] <= 1.0

    # both detectors in one sweep, at identical FRR settings
    sweep_out = tmp_path / "both.csv"
    assert run("sweep", "--oracle", pipeline / "model.json", "--record", pipeline / "record.json",
               "--benign", data / "test.tdk", "--trigger", data / "trigger_patch.json",
               "--target", "0", "--frr-list", "0.02,0.05", "--out", sweep_out,
               "--strip-record", strip_out, "--strip-data", data / "train.tdk",
               "--seed", "11") == 0
    rows = sweep_out.read_text().strip().splitlines()
    assert rows[0] == "frr_target,far_detector,far_strip"
    assert all(len(row.split(",")) == 3 and row.split(",")[2] != "" for row in rows[1:])


def test_sweep_strip_record_requires_strip_data(pipeline, tmp_path, capsys):
    data = pipeline / "data"
    strip_out = tmp_path / "strip.json"
    assert run("strip-calibrate", "--oracle", pipeline / "model.json",
               "--data", data / "train.tdk", "--out", strip_out, "--seed", "11") == 0
    code = run("sweep", "--oracle", pipeline / "model.json", "--record", pipeline / "record.json",
               "--benign", data / "test.tdk", "--trigger", data / "trigger_patch.json",
               "--target", "0", "--frr-list", "0.02,0.05", "--out", tmp_path / "s.csv",
               "--strip-record", strip_out, "--seed", "11")
    assert code == 1
    assert "strip-data" in capsys.readouterr().err


def test_pipeline_reruns_byte_identical(tmp_path):
    results = []
    for name in ("a", "b"):
        base = tmp_path / name
        assert run("gen-data", "--out", base / "data", "--train", "30", "--test", "10",
                   "--seed", "3") == 0
        assert run("train", "--data", base / "data" / "train.tdk", "--out", base / "model.json",
                   "--epochs", "4", "--seed", "3") == 0
        assert run("calibrate", "--oracle", base / "model.json",
                   "--data", base / "data" / "train.tdk", "--out", base / "record.json",
                   "--m", "6", "--frr", "0.1", "--seed", "3") == 0
        results.append((
            (base / "data" / "train.tdk").read_bytes(),
            (base / "model.json").read_bytes(),
            (base / "record.json").read_bytes(),
        ))
    assert results[0] == results[1]


def test_exec_oracle_matches_builtin_echo(tmp_path):
    # same data + same seed through the wire protocol must give the identical record
    assert run("gen-data", "--out", tmp_path / "data", "--train", "20", "--test", "5",
               "--seed", "5") == 0
    data = tmp_path / "data" / "train.tdk"
    assert run("calibrate", "--oracle", "echo", "--data", data,
               "--out", tmp_path / "builtin.json", "--m", "8", "--frr", "0.1",
               "--seed", "5") == 0
    command = f"exec:{sys.executable} {ECHO_WORKER} 10 16 16 3"
    assert run("calibrate", "--oracle", command, "--data", data,
               "--out", tmp_path / "wire.json", "--m", "8", "--frr", "0.1",
               "--seed", "5") == 0
    assert (tmp_path / "builtin.json").read_bytes() == (tmp_path / "wire.json").read_bytes()


def test_parallel_equals_serial(tmp_path):
    # a serial worker answered one-at-a-time vs a concurrent worker answered
    # four-in-flight out of order must produce the identical record
    assert run("gen-data", "--out", tmp_path / "data", "--train", "20", "--test", "5",
               "--seed", "6") == 0
    data = tmp_path / "data" / "train.tdk"
    cases = (
        (1, "serial.json", "serial"),
        (4, "parallel.json", "reverse"),
    )
    for jobs, name, mode in cases:
        command = f"exec:{sys.executable} {ECHO_WORKER} 10 16 16 3 {mode}"
        assert run("calibrate", "--oracle", command, "--data", data,
                   "--out", tmp_path / name, "--m", "8", "--frr", "0.1",
                   "--seed", "6", "--jobs", jobs) == 0
    assert (tmp_path / "serial.json").read_bytes() == (tmp_path / "parallel.json").read_bytes()


def test_usage_error_exit_code(capsys):
    assert run("calibrate", "--data", "missing.tdk") == 1  # --oracle and --out required
    assert "usage error" in capsys.readouterr().err


def test_runtime_error_exit_code(tmp_path, capsys):
    code = run("calibrate", "--oracle", "nonexistent-model.json", "--data", "nope.tdk",
               "--out", tmp_path / "r.json")
    assert code == 2


def test_detect_single_trojan_exit_code(tmp_path, capsys):
    from trojscan.confidence import BoundParams
    from trojscan.core import RngStream
    from trojscan.perturb import NoiseSpec

    # a hand-built record with a tiny threshold flags any input
    oracle = EchoOracle(class_count=10, height=4, width=4, channels=3)
    record = CalibrationRecord(
        noise=NoiseSpec(sigma=0.5),
        m=4,
        bound=BoundParams(),
        frr_target=0.5,
        tau=0.01,
        l_values=(0.005, 0.006),
        oracle_fingerprint=oracle.fingerprint(),
        seed=RngStream(0),
    )
    record.save(tmp_path / "record.json")
    arr = (np.full((4, 4, 3), 0.75) * 255).astype(np.uint8)
    _png.write_png(tmp_path / "input.png", arr)
    code = run("detect", "--oracle", "echo", "--record", tmp_path / "record.json",
               "--image", tmp_path / "input.png", "--classes", "10", "--seed", "0")
    assert code == 3
    doc = json.loads(capsys.readouterr().out.strip())
    assert doc["decision"] == "trojan"


def test_config_file_precedence(tmp_path):
    assert run("gen-data", "--out", tmp_path / "data", "--train", "20", "--test", "5",
               "--seed", "8") == 0
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"m": 5, "frr": 0.2}))
    data = tmp_path / "data" / "train.tdk"
    assert run("calibrate", "--oracle", "echo", "--data", data, "--config", config,
               "--out", tmp_path / "from_config.json", "--seed", "8") == 0
    assert CalibrationRecord.load(tmp_path / "from_config.json").m == 5
    assert run("calibrate", "--oracle", "echo", "--data", data, "--config", config,
               "--m", "7", "--out", tmp_path / "flag_wins.json", "--seed", "8") == 0
    assert CalibrationRecord.load(tmp_path / "flag_wins.json").m == 7


def test_seed_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("TDK_SEED", "99")
    assert run("gen-data", "--out", tmp_path / "data", "--train", "10", "--test", "4") == 0
    manifest = json.loads((tmp_path / "data" / "run.manifest.json").read_text())
    assert manifest["config"]["seed"] == 99
