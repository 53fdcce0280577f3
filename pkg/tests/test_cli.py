import json
import subprocess
import sys
from pathlib import Path

import pytest

from hcmsim import corpus
from hcmsim.cli import main

ROOT = Path(__file__).resolve().parents[1]


def write(tmp_path, name, data):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


@pytest.fixture
def domino(tmp_path):
    return write(tmp_path, "s.json", {"seed": 1, "module_count": 2, "target": "line-2",
                                      "trajectory": {"builtin": "stochastic", "seed": 2017},
                                      "duration_cap": 300.0})


def test_run_and_replay(tmp_path, domino, capsys):
    trace = tmp_path / "t.jsonl"
    assert main(["run", "--scenario", str(domino), "--trace", str(trace)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["success"] and trace.exists()
    assert main(["replay", "--trace", str(trace), "--scenario", str(domino)]) == 0
    assert json.loads(capsys.readouterr().out)["verified"]


def test_replay_divergence_exit_code(tmp_path, domino, capsys):
    trace = tmp_path / "t.jsonl"
    main(["run", "--scenario", str(domino), "--trace", str(trace)])
    other = write(tmp_path, "o.json", {**json.loads(domino.read_text()), "seed": 2})
    capsys.readouterr()
    assert main(["replay", "--trace", str(trace), "--scenario", str(other)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "divergence" and err["tick"] == 0


def test_batch_writes_summary(tmp_path, domino):
    out = tmp_path / "sum.csv"
    assert main(["batch", "--scenario", str(domino), "--attempts", "2", "--seeds", "5,6",
                 "--summary", str(out)]) == 0
    rows = out.read_text().strip().split("\n")
    assert len(rows) == 4 and rows[-1].startswith("aggregate")


def test_failed_trial_exit_code(tmp_path, capsys):
    s = write(tmp_path, "s.json", {"module_count": 6, "target": "rect-2x3", "duration_cap": 0.2})
    assert main(["run", "--scenario", str(s)]) == 1
    assert json.loads(capsys.readouterr().out)["failure_cause"] == "timeout"


def test_invalid_scenario_error(tmp_path, capsys):
    s = write(tmp_path, "s.json", {"module_count": 30, "target": "line-2"})
    assert main(["run", "--scenario", str(s)]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "scenario_invalid"


def test_trajectory_commands(tmp_path, capsys):
    out = tmp_path / "p.csv"
    assert main(["compile-scm", "--program", str(corpus.path("scm_eenw.json")),
                 "--calibration", str(corpus.path("calibration.json")), "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["validate", "--trajectory", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["valid"]
    assert main(["classify", "--trajectory", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["class"] == "Slide"


def test_compile_without_calibration(tmp_path, capsys):
    assert main(["compile-scm", "--program", str(corpus.path("scm_eenw.json")),
                 "--out", str(tmp_path / "x.csv")]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "calibration_missing"


def test_validate_rejects(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("t_ms,pitch_deg,roll_deg,yaw_deg\n0,0,0,0\n10,20,0,0\n")
    assert main(["validate", "--trajectory", str(bad)]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "slew_violation"


def test_console_entry_and_log_level(tmp_path):
    env = {"HCM_LOG_LEVEL": "INFO", "PATH": "/usr/bin:/bin"}
    p = subprocess.run([sys.executable, "-m", "hcmsim.cli", "validate", "--trajectory",
                        str(corpus.path("yaw_spin.csv"))], capture_output=True, text=True,
                       env=env, cwd=ROOT)
    assert p.returncode == 0 and json.loads(p.stdout)["valid"]
