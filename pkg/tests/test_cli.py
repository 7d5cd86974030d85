import csv
import subprocess
import sys

import numpy as np
import pytest

from ibrplace.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize("case,k,expected", [("case39", 2, "16 6"), ("case145", 4, "12 68 94 142")])
def test_place(capsys, case, k, expected):
    code, out, _ = run(capsys, "place", "--case", case, "--k", str(k))
    assert code == 0
    assert f"buses:     {expected}" in out


def test_place_case300_positions(capsys):
    code, out, _ = run(capsys, "place", "--case", "case300", "--k", "2",
                       "--weight-model", "signed", "--labels", "position")
    assert code == 0 and "buses:     245 276" in out


def test_place_exhaustive(capsys):
    code, out, _ = run(capsys, "place", "--case", "case39", "--k", "2", "--method", "exhaustive")
    assert code == 0 and "exhaustive" in out and "6 16" in out


def test_usage_errors(capsys):
    assert run(capsys, "place", "--case", "case39", "--k", "0")[0] == 1
    assert run(capsys, "compare", "--case", "case39", "--k-range", "4-1")[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    code, _, err = run(capsys, "place", "--case", "case39")
    assert code == 1 and "--k" in err


def test_budget_error_names_subset_count(capsys):
    code, _, err = run(capsys, "place", "--case", "case39", "--k", "4", "--method", "exhaustive",
                       "--budget", "100")
    assert code == 2
    assert "82251" in err  # C(39, 4)


def test_missing_file(capsys, tmp_path):
    code, _, err = run(capsys, "place", "--case", str(tmp_path / "nope.m"), "--k", "1")
    assert code == 2 and "not found" in err


def test_malformed_file(capsys, tmp_path):
    bad = tmp_path / "bad.m"
    bad.write_text("function mpc = bad\nmpc.bus = [1 2 3;\n")
    assert run(capsys, "place", "--case", str(bad), "--k", "1")[0] == 2


def test_compare_csv(capsys, tmp_path):
    out = tmp_path / "cmp.csv"
    code, text, _ = run(capsys, "compare", "--case", "case39", "--k-range", "1,2", "--out", str(out))
    assert code == 0 and "greedy" in text.lower()
    rows = list(csv.reader(out.open()))
    assert len(rows) == 5
    assert rows[4][1:3] == ["exhaustive", "6 16"]


def _freq(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    cols = [c for c in rows[0] if c.startswith("f_g")]
    return np.array([[float(r[c]) for c in cols] for r in rows])


def test_simulate_flat_without_disturbance(capsys, tmp_path):
    out = tmp_path / "t.csv"
    code, _, _ = run(capsys, "simulate", "--case", "case39", "--setup", "case39-low-inertia",
                     "--buses", "6,16", "--duration", "2", "--out", str(out))
    assert code == 0
    f = _freq(out)
    assert f.shape == (201, 7)
    assert np.abs(f - 60.0).max() < 1e-6


def test_simulate_loss_and_control(capsys, tmp_path):
    common = ["simulate", "--case", "case39", "--setup", "case39-low-inertia", "--buses", "6,16",
              "--disturbed-gen", "2", "--duration", "6"]
    out_none = tmp_path / "none.csv"
    out_lqr = tmp_path / "lqr.csv"
    assert run(capsys, *common, "--control", "none", "--out", str(out_none))[0] == 0
    assert run(capsys, *common, "--control", "lqr", "--out", str(out_lqr))[0] == 0
    f_none, f_lqr = _freq(out_none), _freq(out_lqr)
    assert f_none.min() < 60.0
    assert np.abs(f_lqr - 60).sum() < np.abs(f_none - 60).sum()


def test_simulate_bad_window(capsys):
    code, _, err = run(capsys, "simulate", "--case", "case39", "--disturbed-gen", "1",
                       "--duration", "1", "--window", "0.5,5")
    assert code == 2 and "window" in err


def test_simulate_unknown_generator(capsys):
    code, _, _ = run(capsys, "simulate", "--case", "case39", "--disturbed-gen", "99", "--duration", "1")
    assert code == 2


def test_evaluate_reproducible(capsys, tmp_path):
    args = ["evaluate", "--case", "case39", "--setup", "case39-low-inertia", "--duration", "2",
            "--window", "0.5,1.5", "--seed", "7"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    code, text, _ = run(capsys, *args, "--out", str(a))
    assert code == 0
    assert "optimal (6, 16)" in text and "next (5, 16)" in text and "random" in text
    assert run(capsys, *args, "--out", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_evaluate_single_placement(capsys):
    code, text, _ = run(capsys, "evaluate", "--case", "case39", "--setup", "case39-low-inertia",
                        "--duration", "2", "--window", "0.5,1.5", "--placements", "6,16")
    assert code == 0
    assert text.count("(6, 16)") == 1
    assert sum(l.startswith("Gen ") for l in text.splitlines()) == 7


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "ibrplace", "place", "--case", "case39", "--k", "1"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "16" in res.stdout
