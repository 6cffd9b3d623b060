import csv
import subprocess
import sys
from pathlib import Path

import pytest

from degenell.cli import DIAGNOSE_COLUMNS, LEMMA_COLUMNS, run
from degenell.manufactured import REFINEMENT_COLUMNS
from degenell.solver import REPORT_COLUMNS

CONFIGS = Path(__file__).parent.parent / "configs"


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def header(path):
    with open(path) as fh:
        return tuple(next(csv.reader(fh)))


def test_minimal_solve(tmp_path):
    code = run(["solve", str(CONFIGS / "minimal.cfg"), "--out", str(tmp_path)])
    assert code == 0
    assert header(tmp_path / "report.csv") == REPORT_COLUMNS
    assert header(tmp_path / "solution.csv") == ("x1", "x2", "x3", "u")
    rows = list(csv.DictReader(open(tmp_path / "report.csv")))
    assert len(rows) == 1 and rows[0]["converged"] == "true"


def test_misspelled_key_exit_2(tmp_path, capsys):
    cfg = write(tmp_path, "problem.dimension = 3\noperater.family = sigma_k_root\n")
    assert run(["solve", cfg, "--out", str(tmp_path)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_log_sigma_continuation_exit_3(tmp_path):
    cfg = write(tmp_path, "operator.family = log_sigma_n\nsolve.mode = continuation\n")
    assert run(["sweep", cfg, "--out", str(tmp_path)]) == 3


def test_infeasible_psi_exit_1(tmp_path, capsys):
    cfg = write(tmp_path, "problem.nodes = 7\nproblem.A = 1\nproblem.psi = 1e12\nsolve.mode = single\n")
    assert run(["solve", cfg, "--out", str(tmp_path)]) == 1
    assert "subsolution" in capsys.readouterr().err


def test_missing_config_exit_3(tmp_path):
    assert run(["solve", "--out", str(tmp_path)]) == 3


def test_verify_lemma(tmp_path, capsys):
    assert run(["verify-lemma", "--n", "3..8", "--count", "500", "--seed", "7", "--out", str(tmp_path)]) == 0
    assert header(tmp_path / "lemma.csv") == LEMMA_COLUMNS
    assert len(list(csv.DictReader(open(tmp_path / "lemma.csv")))) == 500
    assert "500/500" in capsys.readouterr().out


def test_sweep_is_deterministic(tmp_path):
    cfg = str(CONFIGS / "degenerate_sweep.cfg")
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["sweep", cfg, "--nodes", "9", "--levels", "3", "--out", str(a)]) == 0
    assert run(["sweep", cfg, "--nodes", "9", "--levels", "3", "--out", str(b)]) == 0
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    assert len((a / "sweep.csv").read_text().splitlines()) == 5


def test_diagnose(tmp_path):
    assert run(["diagnose", str(CONFIGS / "minimal.cfg"), "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "diagnose.csv")))
    assert header(tmp_path / "diagnose.csv") == DIAGNOSE_COLUMNS
    assert {"C_quad", "C_mixed", "C_global", "C_main"} <= {r["monitor"] for r in rows}


def test_subsolution(tmp_path, capsys):
    assert run(["subsolution", str(CONFIGS / "minimal.cfg"), "--out", str(tmp_path)]) == 0
    assert header(tmp_path / "subsolution.csv")[-3:] == ("u_sub", "excess", "cone_margin")
    assert "A =" in capsys.readouterr().out


def test_convergence(tmp_path):
    text = (CONFIGS / "manufactured.cfg").read_text().replace("nodes = 9, 17, 33", "nodes = 9, 17")
    assert run(["convergence", write(tmp_path, text), "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "convergence.csv")))
    assert header(tmp_path / "convergence.csv") == REFINEMENT_COLUMNS
    assert 3.2 <= float(rows[1]["ratio"]) <= 4.8


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "degenell.cli", "verify-lemma", "--count", "60", "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0 and (tmp_path / "lemma.csv").exists()
