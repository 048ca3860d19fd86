import json
import subprocess
import sys

import pytest

from pnscan.cli import EXIT_DEPENDENCY, EXIT_OK, EXIT_SCHEMA, EXIT_SIMULATION, parse_grid, parse_pairs, run
from pnscan.errors import ScenarioError


def test_parse_pairs():
    assert parse_pairs("N1:N13, N2:N14") == [["N1", "N13"], ["N2", "N14"]]
    for bad in ("N1", "N1:", "A:B:C", " , "):
        with pytest.raises(ScenarioError) as info:
            parse_pairs(bad)
        assert info.value.path == "--pairs"


def test_parse_grid_entries():
    grid = parse_grid("none,jitter:alpha=0.5,jitter:alpha=auto,multi_transceiver:n=3,passive:p=0.2,"
                      "active_system:p=0.7")
    assert grid == [
        {"mode": "none"},
        {"mode": "jitter", "alpha": 0.5},
        {"mode": "jitter", "alpha": None},
        {"mode": "multi_transceiver", "n_transceivers": 3},
        {"mode": "passive", "p_isolate": 0.2},
        {"mode": "active_system", "p_assist": 0.7},
    ]
    with pytest.raises(ScenarioError):
        parse_grid("jitter:alpha")


def test_parse_grid_file(tmp_path):
    p = tmp_path / "grid.json"
    p.write_text(json.dumps({"grid": [{"mode": "none"}, {"mode": "jitter", "alpha": 1.0}]}))
    assert parse_grid(str(p))[1] == {"mode": "jitter", "alpha": 1.0}


def test_simulate_exit_ok(tmp_path, capsys):
    code = run(["simulate", "--scenario", "minimal", "--out", str(tmp_path), "--trials", "2"])
    assert code == EXIT_OK
    assert (tmp_path / "transcripts" / "A-B.jsonl").exists()
    assert "report.txt" in capsys.readouterr().out


def test_seed_override_echoed(tmp_path):
    assert run(["simulate", "--scenario", "minimal", "--out", str(tmp_path), "--seed", "99"]) == EXIT_OK
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["scenario"]["experiment"]["seed"] == 99
    assert report["overrides"]["seed"] == 99
    assert "# override seed = 99" in (tmp_path / "report.txt").read_text()


def test_schema_error_exit(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": 1, "name": "x", "nodes": [],
                               "adversary": {"observer_position_m": 0}, "experiment": {"seed": 1}}))
    assert run(["simulate", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == EXIT_SCHEMA
    assert "nodes" in capsys.readouterr().err


def test_bad_pair_is_schema_error(tmp_path):
    assert run(["attack", "--scenario", "minimal", "--out", str(tmp_path), "--pairs", "A:Z"]) == EXIT_SCHEMA


def test_bad_nonce_is_schema_error(tmp_path):
    assert run(["order-group", "--scenario", "minimal", "--out", str(tmp_path), "--nonce", "xyz"]) == EXIT_SCHEMA


def test_missing_scenario_is_dependency_error(tmp_path):
    assert run(["simulate", "--scenario", str(tmp_path / "gone.json"), "--out", str(tmp_path)]) == EXIT_DEPENDENCY


def test_missing_traces_is_dependency_error(tmp_path):
    code = run(["attack", "--scenario", "minimal", "--out", str(tmp_path), "--traces", str(tmp_path / "none")])
    assert code == EXIT_DEPENDENCY


def test_order_group_without_input_is_dependency_error(tmp_path):
    assert run(["order-group", "--out", str(tmp_path)]) == EXIT_DEPENDENCY


def test_exhausted_session_is_simulation_error(tmp_path):
    s = {"schema_version": 1, "name": "tight",
         "nodes": [{"id": "A", "position_m": 0}, {"id": "B", "position_m": 5}],
         "adversary": {"observer_position_m": 0},
         "protocol": {"frame_cap": 1, "target_key_bits": 512},
         "experiment": {"seed": 1}}
    p = tmp_path / "tight.json"
    p.write_text(json.dumps(s))
    assert run(["simulate", "--scenario", str(p), "--out", str(tmp_path / "o")]) == EXIT_SIMULATION


def test_order_group_prints_tree(tmp_path, capsys):
    csv = tmp_path / "adv.csv"
    csv.write_text("node,A,B,C\nA,,0.9,0.6\nB,0.9,,0.7\nC,0.6,0.7,\n")
    code = run(["order-group", "--advantage", str(csv), "--out", str(tmp_path / "o"), "--nonce", "0011"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "max-edge d 0.7" in out


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "pnscan", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("simulate", "attack", "evaluate", "order-group", "export"):
        assert cmd in proc.stdout
