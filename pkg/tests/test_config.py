import numpy as np
import pytest

from degenell.config import ConfigParseError, ConfigSemanticError, int_range, parse_config

MINIMAL = """
[problem]
dimension = 3
nodes = 9
A = 1
psi = 1
[operator]
family = sigma_k_root
[solve]
mode = single
"""


def test_minimal():
    cfg = parse_config(MINIMAL)
    assert cfg.problem.dimension == 3 and cfg.problem.nodes == 9
    assert np.array_equal(cfg.problem.A, np.eye(3))
    assert cfg.f.family == "sigma_k_root" and cfg.f.k == 3
    assert cfg.mode == "single" and cfg.problem.warp is None


def test_dotted_keys_and_comments():
    cfg = parse_config("problem.dimension = 4  # four\nsolve.levels = 3\noperator.k = 2\n")
    assert cfg.problem.dimension == 4 and cfg.solve.levels == 3 and cfg.f.k == 2


def test_misspelled_section_reports_line():
    with pytest.raises(ConfigParseError) as exc:
        parse_config("problem.dimension = 3\n\noperater.family = sigma_k_root\n")
    assert exc.value.line == 3 and "line 3" in str(exc.value)


@pytest.mark.parametrize(
    "text,line",
    [
        ("[problem]\nnodez = 9\n", 2),
        ("[nowhere]\n", 1),
        ("dimension = 3\n", 1),
        ("[problem]\nnodes = 9\nnodes = 17\n", 3),
        ("[problem]\nthis is not an entry\n", 2),
        ("[problem]\nnodes = nine\n", 2),
        ("[problem]\nnodes =\n", 2),
        ("[problem]\npsi = 1 +\n", 2),
    ],
)
def test_parse_errors(text, line):
    with pytest.raises(ConfigParseError) as exc:
        parse_config(text)
    assert exc.value.line == line and exc.value.exit_code == 2


@pytest.mark.parametrize(
    "text",
    [
        "operator.family = log_sigma_n\nsolve.mode = continuation\n",
        "operator.family = cubic\n",
        "operator.family = quotient_root\noperator.k = 2\noperator.l = 2\n",
        "problem.nodes = 3\n",
        "problem.A = 1, 2\n",
        "problem.A = 1,2,3; 4,5,6; 7,8,9\n",
        "problem.eta = zeta\n",
        "problem.psi = x7\n",
        "solve.ratio = 1.5\n",
        "solve.mode = adaptive\n",
        "lemma.n = 2..5\n",
    ],
)
def test_semantic_errors(text):
    with pytest.raises(ConfigSemanticError) as exc:
        parse_config(text)
    assert exc.value.exit_code == 3


def test_log_sigma_single_mode_allowed():
    assert parse_config("operator.family = log_sigma_n\nsolve.mode = single\n").f.family == "log_sigma_n"


def test_matrix_forms():
    cfg = parse_config("problem.A = 1, 2, 3\n")
    assert np.array_equal(cfg.problem.A, np.diag([1, 2, 3]))
    cfg = parse_config("problem.A = 1,0.5,0; 0.5,2,0; 0,0,3\n")
    assert cfg.problem.A[0, 1] == 0.5


def test_zeta_and_expressions():
    cfg = parse_config("problem.eta = zeta\nproblem.zeta = 0.1, 0, -0.1\nproblem.warp = 0.1*x3\nproblem.phi = sin(2*pi*x1)\n")
    assert cfg.problem.eta.kind == "zeta_form"
    assert cfg.problem.warp(0.0, 0.0, 1.0) == pytest.approx(0.1)


def test_int_range():
    assert int_range("3..8") == [3, 4, 5, 6, 7, 8]
    assert int_range("3, 5") == [3, 5]


@pytest.mark.parametrize("name", ["degenerate_sweep", "manufactured", "minimal"])
def test_shipped_configs_parse(name):
    from pathlib import Path

    text = (Path(__file__).parent.parent / "configs" / f"{name}.cfg").read_text()
    parse_config(text)
