"""Run configuration: ``[section]`` headers with ``key = value`` lines.

A line may also spell the section inline (``solve.levels = 8``). ``#`` starts
a comment. Unknown sections or keys, duplicates and malformed lines are parse
errors (exit code 2); values that parse but make no sense together are
semantic errors (exit code 3).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .expressions import Expression, ExpressionError, ExpressionSyntaxError
from .operators import EtaTensor
from .solver import SolveConfig
from .spectral import FAMILIES, SpectralFunction


class ConfigParseError(ValueError):
    exit_code = 2

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ConfigSemanticError(ValueError):
    exit_code = 3


SCHEMA = {
    "problem": {"dimension", "nodes", "warp", "A", "eta", "zeta", "psi", "phi", "exact"},
    "operator": {"family", "k", "l"},
    "solve": {
        "mode", "epsilon", "tol_residual", "max_newton", "cone_margin_floor",
        "eps0", "ratio", "levels", "backtrack", "min_step", "linear_solver",
    },
    "subsolution": {"delta0"},
    "convergence": {"nodes"},
    "lemma": {"n", "count", "seed", "margin"},
    "output": {"directory"},
}
MODES = ("single", "continuation")

_SECTION = re.compile(r"^\[\s*([A-Za-z_][\w-]*)\s*\]$")
_ENTRY = re.compile(r"^([A-Za-z_][\w.-]*)\s*=\s*(.*)$")


def parse_sections(text: str) -> dict:
    """Raw ``{section: {key: (value, line)}}`` with schema and syntax checks."""
    out: dict = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            section = m.group(1)
            if section not in SCHEMA:
                raise ConfigParseError(f"unknown section [{section}]", lineno)
            out.setdefault(section, {})
            continue
        m = _ENTRY.match(line)
        if not m:
            raise ConfigParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = m.group(1), m.group(2).strip()
        if "." in key:
            sec, key = key.split(".", 1)
        else:
            sec = section
        if sec is None:
            raise ConfigParseError(f"key {key!r} outside any section", lineno)
        if sec not in SCHEMA:
            raise ConfigParseError(f"unknown section {sec!r} in key {sec}.{key}", lineno)
        if key not in SCHEMA[sec]:
            raise ConfigParseError(f"unknown key {sec}.{key}", lineno)
        if value == "":
            raise ConfigParseError(f"empty value for {sec}.{key}", lineno)
        entries = out.setdefault(sec, {})
        if key in entries:
            raise ConfigParseError(f"duplicate key {sec}.{key} (first set on line {entries[key][1]})", lineno)
        entries[key] = (value, lineno)
    return out


def _typed(raw, sec, key, conv, default):
    if key not in raw.get(sec, {}):
        return default
    value, line = raw[sec][key]
    try:
        return conv(value)
    except ValueError:
        raise ConfigParseError(f"cannot read {sec}.{key} = {value!r}", line) from None


def _int_list(text: str) -> list[int]:
    return [int(t) for t in re.split(r"[,\s]+", text.strip()) if t]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in re.split(r"[,\s]+", text.strip()) if t]


def int_range(text: str) -> list[int]:
    """'3..8' or '3,4,5' or '5'."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return _int_list(text)


def _matrix(text: str, n: int):
    """Scalar c (c·I), n diagonal entries, or n rows separated by ';'."""
    rows = [r for r in text.split(";") if r.strip()]
    if len(rows) > 1:
        M = np.array([_float_list(r) for r in rows], dtype=float)
        if M.shape != (n, n):
            raise ConfigSemanticError(f"A must be {n}x{n}, got shape {M.shape}")
        if not np.allclose(M, M.T):
            raise ConfigSemanticError("A must be symmetric")
        return M
    vals = _float_list(rows[0])
    if len(vals) == 1:
        return vals[0] * np.eye(n)
    if len(vals) == n:
        return np.diag(vals)
    raise ConfigSemanticError(f"A needs 1, {n} or {n}x{n} entries, got {len(vals)}")


@dataclass
class ProblemSpec:
    dimension: int
    nodes: int
    warp: Expression | None
    A: np.ndarray
    eta: EtaTensor
    psi: Expression
    phi: Expression
    exact: Expression | None = None


@dataclass
class RunConfig:
    problem: ProblemSpec
    f: SpectralFunction
    solve: SolveConfig
    mode: str = "continuation"
    epsilon: float = 0.0
    delta0: float | None = None
    convergence_nodes: list = field(default_factory=lambda: [9, 17, 33])
    lemma_n: list = field(default_factory=lambda: list(range(3, 9)))
    lemma_count: int = 10_000
    lemma_seed: int = 7
    lemma_margin: float = 1.01
    output: str = "out"


def _expression(raw, key, n, default):
    if key not in raw.get("problem", {}):
        return Expression(default, n) if default is not None else None
    value, line = raw["problem"][key]
    try:
        return Expression(value, n)
    except ExpressionSyntaxError as exc:
        raise ConfigParseError(str(exc), line) from None
    except ExpressionError as exc:
        raise ConfigSemanticError(f"problem.{key}: {exc}") from None


def parse_config(text: str) -> RunConfig:
    raw = parse_sections(text)
    n = _typed(raw, "problem", "dimension", int, 3)
    if n < 2:
        raise ConfigSemanticError(f"dimension must be >= 2, got {n}")
    nodes = _typed(raw, "problem", "nodes", int, 17)
    if nodes < 5:
        raise ConfigSemanticError(f"need at least 5 nodes per axis, got {nodes}")
    A = np.zeros((n, n))
    if "A" in raw.get("problem", {}):
        value, line = raw["problem"]["A"]
        try:
            A = _matrix(value, n)
        except ConfigSemanticError:
            raise
        except ValueError:
            raise ConfigParseError(f"cannot read problem.A = {value!r}", line) from None
    eta_kind = _typed(raw, "problem", "eta", str, "zero")
    if eta_kind == "zero":
        if "zeta" in raw.get("problem", {}):
            raise ConfigSemanticError("problem.zeta given but problem.eta = zero")
        eta = EtaTensor.zero()
    elif eta_kind == "zeta":
        zeta = _typed(raw, "problem", "zeta", _float_list, None)
        if zeta is None or len(zeta) != n:
            raise ConfigSemanticError(f"problem.eta = zeta needs problem.zeta with {n} entries")
        eta = EtaTensor.zeta_form(np.array(zeta))
    else:
        raise ConfigSemanticError(f"problem.eta must be 'zero' or 'zeta', got {eta_kind!r}")
    warp = _expression(raw, "warp", n, None)
    if warp is not None and warp.is_constant() and float(warp.sym) == 0.0:
        warp = None
    problem = ProblemSpec(
        n, nodes, warp, A, eta,
        psi=_expression(raw, "psi", n, "0"),
        phi=_expression(raw, "phi", n, "0"),
        exact=_expression(raw, "exact", n, None),
    )

    family = _typed(raw, "operator", "family", str, "sigma_k_root")
    if family not in FAMILIES:
        raise ConfigSemanticError(f"operator.family must be one of {FAMILIES}, got {family!r}")
    k = _typed(raw, "operator", "k", int, n)
    l = _typed(raw, "operator", "l", int, 0)
    try:
        f = SpectralFunction(family, n, k, l)
    except ValueError as exc:
        raise ConfigSemanticError(str(exc)) from None

    mode = _typed(raw, "solve", "mode", str, "continuation")
    if mode not in MODES:
        raise ConfigSemanticError(f"solve.mode must be one of {MODES}, got {mode!r}")
    if mode == "continuation" and not f.supports_degenerate:
        raise ConfigSemanticError(
            f"{family} is unbounded below on the cone boundary; continuation towards the degenerate equation needs a finite value there"
        )
    kw = {}
    for key, conv in (
        ("tol_residual", float), ("max_newton", int), ("cone_margin_floor", float), ("eps0", float),
        ("ratio", float), ("levels", int), ("backtrack", float), ("min_step", float), ("linear_solver", str),
    ):
        if key in raw.get("solve", {}):
            kw[key] = _typed(raw, "solve", key, conv, None)
    try:
        solve = SolveConfig(f, **kw)
    except ValueError as exc:
        raise ConfigSemanticError(str(exc)) from None
    if solve.levels < 0 or solve.max_newton < 1:
        raise ConfigSemanticError("solve.levels must be >= 0 and solve.max_newton >= 1")
    epsilon = _typed(raw, "solve", "epsilon", float, 0.0)
    if epsilon < 0:
        raise ConfigSemanticError("solve.epsilon must be >= 0")

    delta0 = _typed(raw, "subsolution", "delta0", float, None)
    if delta0 is not None and delta0 < 0:
        raise ConfigSemanticError("subsolution.delta0 must be >= 0")
    conv_nodes = _typed(raw, "convergence", "nodes", _int_list, [9, 17, 33])
    if any(m < 5 for m in conv_nodes):
        raise ConfigSemanticError("convergence.nodes entries must be >= 5")
    lemma_n = _typed(raw, "lemma", "n", int_range, list(range(3, 9)))
    if not lemma_n or min(lemma_n) < 3:
        raise ConfigSemanticError("lemma.n values must be >= 3")
    return RunConfig(
        problem, f, solve, mode, epsilon, delta0, conv_nodes,
        lemma_n,
        _typed(raw, "lemma", "count", int, 10_000),
        _typed(raw, "lemma", "seed", int, 7),
        _typed(raw, "lemma", "margin", float, 1.01),
        _typed(raw, "output", "directory", str, "out"),
    )
