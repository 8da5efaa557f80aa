import os

from vrsm import history
from vrsm.cli import main

SCEN = os.path.join(os.path.dirname(__file__), "..", "scenarios")


def _scen(name):
    return os.path.join(SCEN, name + ".ini")


def test_baseline_run_exits_zero(capsys):
    assert main(["sim", "run", "--scenario", _scen("baseline"), "--seed", "1", "--check"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_mutant_run_exits_one_with_sweep_report(capsys):
    assert main(["sim", "run", "--scenario", _scen("mutant_paxos"), "--seed", "1"]) == 1
    assert "crash sweep on px1" in capsys.readouterr().out


def test_mutant_sweep_reports_first_failing_seed(capsys):
    assert main(["sim", "sweep", "--scenario", _scen("mutant_logger"), "--seeds", "1..2"]) == 1
    out = capsys.readouterr().out
    assert "first failing seed: 1" in out and "--seed 1" in out


def test_zero_fault_sweep_passes(capsys):
    assert main(["sim", "sweep", "--scenario", _scen("baseline"), "--seeds", "1..3"]) == 0
    assert "3/3 seeds passed" in capsys.readouterr().out


def test_crash_sweep_command(capsys):
    assert main(["sim", "crash-sweep", "--scenario", _scen("logger"), "--node", "log"]) == 0
    assert "0 violations" in capsys.readouterr().out


def test_history_written_and_checked(tmp_path, capsys):
    h = tmp_path / "h.jsonl"
    assert main(["sim", "run", "--scenario", _scen("baseline"), "--seed", "2", "--history", str(h)]) == 0
    assert history.load(str(h))
    assert main(["check", "--history", str(h), "--spec", "kv"]) == 0
    assert "linearizable" in capsys.readouterr().out


def test_check_reports_violation(tmp_path, capsys):
    h = tmp_path / "bad.jsonl"
    h.write_text('{"client":0,"op":"put","args":["k","1"],"result":"","invoke":1,"return":2,"completed":true}\n'
                 '{"client":1,"op":"get","args":["k"],"result":"7","invoke":3,"return":4,"completed":true}\n')
    assert main(["check", "--history", str(h)]) == 1
    assert "NOT linearizable" in capsys.readouterr().out


def test_bench_with_zero_ops_exits_cleanly(capsys):
    assert main(["real", "bench", "--config-addrs", "127.0.0.1:1", "--ops", "0"]) == 0
    assert "ops=0 errors=0" in capsys.readouterr().out


def test_missing_scenario_is_a_usage_error(capsys):
    assert main(["sim", "run", "--scenario", "/nonexistent.ini"]) == 2
