"""End-to-end command-line checks (subprocess against the installed package)."""

import json
import subprocess
import sys

import pytest

import kbpforge as kf

BASE = [sys.executable, "-m", "kbpforge.cli"]


def run_cli(*argv, check=False):
    proc = subprocess.run(
        [*BASE, *argv], capture_output=True, text=True, timeout=300
    )
    if check and proc.returncode != 0:
        raise AssertionError(
            f"exit {proc.returncode}\nstdout:\n{proc.stdout}\nstderr:\n{proc.stderr}"
        )
    return proc


FLOOD31 = ("--exchange", "floodset", "--n", "3", "--t", "1")


# ---------------------------------------------------------------------------
# synth


def test_synth_writes_golden_table(tmp_path):
    out = tmp_path / "table.txt"
    proc = run_cli("synth", *FLOOD31, "--out", str(out), check=True)
    table = kf.DecisionTable.from_text(out.read_text())
    assert len(table.decide_entries()) == 9
    assert table.decide_times() == {2}
    assert "timing: seconds=" in proc.stderr
    assert "decide 0 when seen0 = 1" in proc.stderr  # condition report


def test_synth_stdout_and_determinism():
    a = run_cli("synth", *FLOOD31, check=True)
    b = run_cli("synth", *FLOOD31, check=True)
    assert a.stdout == b.stdout
    assert a.stdout.startswith("# decision table v1\n")


def test_synth_records_format():
    proc = run_cli("synth", *FLOOD31, "--format", "records", check=True)
    lines = [json.loads(line) for line in proc.stdout.splitlines()]
    assert lines[0]["record"] == "params" and lines[0]["origin"] == "synth:sba"
    entries = [l for l in lines if l["record"] == "entry"]
    assert len(entries) == 24
    fired = [e for e in entries if e["action"] != "noop"]
    assert len(fired) == 9
    assert all(e["obs"]["seen0"] in (0, 1) for e in entries)


def test_synth_csv_format():
    proc = run_cli("synth", *FLOOD31, "--format", "csv", check=True)
    head, *rows = proc.stdout.strip().splitlines()
    assert head == "agent,time,seen0,seen1,action"
    assert len(rows) == 24


def test_synth_baseline_rule():
    proc = run_cli(
        "synth", *FLOOD31, "--baseline", "floodset_textbook", check=True
    )
    assert "origin: rule:floodset_textbook" in proc.stdout


def test_synth_missing_flags_is_usage_error():
    proc = run_cli("synth", "--exchange", "floodset")
    assert proc.returncode == 2
    assert "error:" in proc.stderr


def test_synth_bad_pairing_is_usage_error():
    proc = run_cli("synth", *FLOOD31, "--kbp", "eba0")
    assert proc.returncode == 2


# ---------------------------------------------------------------------------
# check


def test_check_suite_passes():
    proc = run_cli("check", *FLOOD31, "--suite", "sba", check=True)
    assert proc.stdout.count("PASS") == 4
    assert proc.returncode == 0


def test_check_suite_fails_for_noop_table(tmp_path):
    out = tmp_path / "noop.txt"
    p = kf.InstanceParams(exchange="floodset", failure_model="crash", n=3, t=1)
    out.write_text(kf.noop_table(p).to_text())
    proc = run_cli("check", "--table", str(out), "--suite", "sba")
    assert proc.returncode == 1
    assert "FAIL termination" in proc.stdout


def test_check_suite_records():
    proc = run_cli(
        "check", *FLOOD31, "--suite", "sba", "--format", "records", check=True
    )
    recs = [json.loads(line) for line in proc.stdout.splitlines()]
    assert [r["property"] for r in recs] == list(kf.SBA_SUITE.properties)
    assert all(r["passed"] for r in recs)


def test_check_hypothesis_exit_codes():
    ok = run_cli("check", *FLOOD31, "--hypothesis", "time == 2")
    assert ok.returncode == 0 and "hypothesis holds" in ok.stdout
    bad = run_cli("check", *FLOOD31, "--hypothesis", "time == 1")
    assert bad.returncode == 1 and "hypothesis fails" in bad.stdout
    ugly = run_cli("check", *FLOOD31, "--hypothesis", "import os")
    assert ugly.returncode == 2


def test_check_formula_layers():
    proc = run_cli(
        "check", *FLOOD31, "--formula", "CN exists_vote(0)", "--layer", "2"
    )
    assert proc.returncode == 1  # not valid everywhere
    assert "layer 2: holds at" in proc.stdout
    proc2 = run_cli("check", *FLOOD31, "--formula", "true", check=True)
    assert "valid everywhere" in proc2.stdout


def test_check_formula_parse_error():
    proc = run_cli("check", *FLOOD31, "--formula", "K[")
    assert proc.returncode == 2


def test_check_table_flag_conflicts(tmp_path):
    out = tmp_path / "t.txt"
    run_cli("synth", *FLOOD31, "--out", str(out), check=True)
    proc = run_cli(
        "check", "--table", str(out), "--n", "4", "--suite", "sba"
    )
    assert proc.returncode == 2
    assert "conflicts" in proc.stderr


# ---------------------------------------------------------------------------
# compare


@pytest.fixture(scope="module")
def two_tables(tmp_path_factory):
    d = tmp_path_factory.mktemp("tables")
    a = d / "synth.txt"
    b = d / "textbook.txt"
    argv = ("--exchange", "floodset", "--n", "3", "--t", "2")
    run_cli("synth", *argv, "--out", str(a), check=True)
    run_cli(
        "synth", *argv, "--baseline", "floodset_textbook", "--out", str(b),
        check=True,
    )
    return a, b


def test_compare_reports_strict_order(two_tables):
    a, b = two_tables
    proc = run_cli("compare", "--a", str(a), "--b", str(b), check=True)
    assert "relation: strict_lt_somewhere" in proc.stdout
    assert "witness (A earlier):" in proc.stdout


def test_compare_expect_exit_codes(two_tables):
    a, b = two_tables
    ok = run_cli(
        "compare", "--a", str(a), "--b", str(b), "--expect",
        "strict_lt_somewhere",
    )
    assert ok.returncode == 0
    bad = run_cli("compare", "--a", str(a), "--b", str(b), "--expect", "le")
    assert bad.returncode == 1
    assert "expected relation le" in bad.stderr


def test_compare_records(two_tables):
    a, b = two_tables
    proc = run_cli(
        "compare", "--a", str(a), "--b", str(b), "--format", "records",
        check=True,
    )
    recs = [json.loads(line) for line in proc.stdout.splitlines()]
    assert recs[0] == {"record": "order", "relation": "strict_lt_somewhere"}
    assert recs[1]["earlier"] == "A" and recs[1]["late_time"] == 3


def test_compare_missing_file():
    proc = run_cli("compare", "--a", "/nonexistent", "--b", "/nonexistent")
    assert proc.returncode == 2


# ---------------------------------------------------------------------------
# bench


def test_bench_zero_budget_times_out_every_cell():
    proc = run_cli(
        "bench", "--exchange", "floodset", "--n-max", "3", "--budget", "0",
        "--format", "csv", check=True,
    )
    head, *rows = proc.stdout.strip().splitlines()
    assert head == "n,t,check,synth"
    assert len(rows) == 2 + 3  # t ranges 1..n for n in {2,3}
    assert all(r.endswith("TO,TO") for r in rows)


def test_bench_timeout_flag_is_budget_alias():
    proc = run_cli(
        "bench", "--exchange", "floodset", "--n-max", "2", "--timeout", "0",
        "--format", "csv", check=True,
    )
    rows = proc.stdout.strip().splitlines()[1:]
    assert rows and all(r.endswith("TO,TO") for r in rows)


def test_bench_small_grid_runs():
    proc = run_cli(
        "bench", "--exchange", "floodset", "--n-min", "2", "--n-max", "2",
        "--format", "records", check=True,
    )
    recs = [json.loads(line) for line in proc.stdout.splitlines()]
    assert [(r["n"], r["t"]) for r in recs] == [(2, 1), (2, 2)]
    for r in recs:
        float(r["check"]) and float(r["synth"])  # numeric, not TO/ERR


def test_bench_rejects_bad_grid():
    proc = run_cli("bench", "--exchange", "floodset", "--n-min", "0")
    assert proc.returncode == 2


# ---------------------------------------------------------------------------
# entry points


def test_console_script_help():
    proc = subprocess.run(
        ["kbpforge", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "synth" in proc.stdout and "bench" in proc.stdout
