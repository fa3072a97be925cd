from __future__ import annotations

import json
import subprocess
import sys

import pytest

from uiopt.cli import main

SMALL = {
    "seed": 0,
    "profile": {"n_sessions": 30, "archetype_mix": {"struggler": 1.0}},
    "classifier": {"hidden_size": 4, "max_epochs": 4, "patience": 2},
    "optimizer": {"max_iterations": 20, "population_size": 6},
}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL))
    return path


def test_config_dump(capsys, small_config):
    assert main(["config", "--config", str(small_config), "--dump"]) == 0
    dumped = json.loads(capsys.readouterr().out)
    assert dumped["seed"] == 0
    assert dumped["optimizer"]["max_iterations"] == 20
    assert dumped["classifier"]["batch_size"] == 32


def test_config_check(capsys):
    assert main(["config"]) == 0
    assert capsys.readouterr().out == "config OK\n"


def test_bad_config_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"seed": 0, "gate_fraction": 2}))
    assert main(["run", "--config", str(bad)]) == 1
    assert "config error" in capsys.readouterr().err


def test_missing_session_file_exit_1(tmp_path):
    assert main(["label", str(tmp_path / "none.jsonl"), "--out", str(tmp_path)]) == 1


def test_zero_rounds_exit_1(small_config):
    assert main(["loop", "--config", str(small_config), "--rounds", "0"]) == 1


def test_stage_failure_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({**SMALL, "profile": {"n_sessions": 3}}))
    assert main(["run", "--config", str(cfg)]) == 2
    assert "stage failure [ingest]" in capsys.readouterr().err


def test_cluster_too_few_rows_exit_2(tmp_path):
    assert main(["generate", "--out", str(tmp_path), "--seed", "1", "--config", str(_write(tmp_path, {"seed": 1, "profile": {"n_sessions": 3}}))]) == 0
    assert main(["ingest", str(tmp_path / "sessions.jsonl"), "--out", str(tmp_path)]) == 0
    assert main(["cluster", str(tmp_path / "features.csv"), "--out", str(tmp_path)]) == 2


def _write(tmp_path, obj):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(obj))
    return path


def test_stepwise_commands(tmp_path, small_config):
    out = str(tmp_path)
    sessions = str(tmp_path / "sessions.jsonl")
    assert main(["generate", "--config", str(small_config), "--out", out]) == 0
    assert main(["ingest", sessions, "--out", out]) == 0
    assert (tmp_path / "raw_normalized.csv").exists() and (tmp_path / "raw_normalized.meta.json").exists()
    assert main(["cluster", str(tmp_path / "features.csv"), "--min-cluster-size", "4", "--out", out]) == 0
    assert main(["assess", sessions, "--truth", str(tmp_path / "truth.jsonl"), "--out", out]) == 0
    assessment = json.loads((tmp_path / "assessment.json").read_text())
    assert assessment["loop_detection_rate_pct"] == 100.0
    assert main(["label", sessions, "--config", str(small_config), "--out", out]) == 0
    assert main(["train", sessions, "--clusters", str(tmp_path / "clusters.csv"), "--config", str(small_config), "--out", out]) == 0
    assert main(["optimize", "--config", str(small_config), "--out", out]) == 0
    assert json.loads((tmp_path / "best_candidate.json").read_text())["fitness"] > 0


def test_run_twice_identical(tmp_path, small_config):
    for name in ("a", "b"):
        assert main(["run", "--config", str(small_config), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_loop_writes_csv(tmp_path, small_config, capsys):
    assert main(["loop", "--config", str(small_config), "--rounds", "2", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "loop.csv").read_text().splitlines()
    assert rows[0] == "round,mean_uicpi,optimizer_ran" and len(rows) == 3
    assert capsys.readouterr().out.count("round ") == 2


def test_console_entry_point():
    done = subprocess.run([sys.executable, "-m", "uiopt.cli", "config"], capture_output=True, text=True)
    assert done.returncode == 0 and done.stdout == "config OK\n"
