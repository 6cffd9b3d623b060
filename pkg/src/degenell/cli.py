"""Command-line front end.

Exit codes: 0 success, 1 numerical failure, 2 configuration parse error,
3 configuration semantic error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .admissible import SubsolutionRefused, construct_subsolution_caseI, verify_subsolution
from .config import ConfigParseError, ConfigSemanticError, RunConfig, int_range, parse_config
from .diagnostics import diagnose_level
from .eigen_lemma import sweep as lemma_sweep
from .manifold import ProductGrid, boundary_geometry
from .manufactured import REFINEMENT_COLUMNS, ManufacturedProblem, convergence_study
from .operators import ProblemData
from .solver import (
    REPORT_COLUMNS,
    AdmissibilityError,
    SolveError,
    SolveReport,
    degeneracy_continuation,
    format_value,
    level_record,
    newton_solve,
)

log = logging.getLogger("degenell")

COMMANDS = ("solve", "sweep", "verify-lemma", "subsolution", "diagnose", "convergence")
LEMMA_COLUMNS = ("n", "eps", "a", "max_tangential_gap", "normal_gap", "trace_error", "ok")
DIAGNOSE_COLUMNS = ("level", "epsilon", "monitor", "value")


class NumericalFailure(RuntimeError):
    pass


def write_csv(path: Path, columns, rows) -> None:
    """Rows are dicts or sequences; floats are written with repr for exact round trips."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            vals = [r[c] for c in columns] if isinstance(r, dict) else list(r)
            w.writerow([v if isinstance(v, str) else format_value(v) for v in vals])


def build_problem(cfg: RunConfig, nodes: int | None = None) -> ProblemData:
    p = cfg.problem
    grid = ProductGrid.uniform(p.dimension, nodes or p.nodes, p.warp)
    return ProblemData(grid, A=p.A, eta=p.eta, psi=p.psi(*grid.coords), phi=p.phi(*grid.coords))


def _subsolution(cfg: RunConfig, data: ProblemData):
    try:
        return construct_subsolution_caseI(data, cfg.f, delta0=cfg.delta0)
    except SubsolutionRefused as exc:
        raise NumericalFailure(f"no admissible subsolution: {exc}") from None


def _continuation(cfg: RunConfig, data: ProblemData) -> SolveReport:
    sub = _subsolution(cfg, data)
    report = degeneracy_continuation(data, cfg.solve, subsolution=sub)
    if report.failure:
        log.error("continuation stopped: %s", report.failure)
    return report


def _single(cfg: RunConfig, data: ProblemData) -> SolveReport:
    sub = _subsolution(cfg, data)
    report = SolveReport(subsolution=sub)
    try:
        res = newton_solve(sub.values, data, cfg.solve, cfg.epsilon)
    except (SolveError, AdmissibilityError) as exc:
        report.failure = str(exc)
        log.error("solve failed: %s", exc)
        return report
    report.levels.append(level_record(data, cfg.epsilon, res))
    if not res.converged:
        report.failure = f"no convergence in {cfg.solve.max_newton} iterations"
    return report


def _report_rows(report: SolveReport):
    return [lv.row() for lv in report.levels]


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    data = build_problem(cfg)
    report = _continuation(cfg, data) if cfg.mode == "continuation" else _single(cfg, data)
    write_csv(out / "report.csv", REPORT_COLUMNS, _report_rows(report))
    if report.levels:
        u = report.levels[-1].u
        cols = tuple(f"x{i + 1}" for i in range(data.n)) + ("u",)
        write_csv(out / "solution.csv", cols, np.column_stack([data.grid.coords.T, u]).tolist())
    return 0 if report.converged else 1


def cmd_sweep(cfg: RunConfig, out: Path) -> int:
    data = build_problem(cfg)
    report = _continuation(cfg, data)
    write_csv(out / "sweep.csv", REPORT_COLUMNS, _report_rows(report))
    return 0 if report.converged else 1


def cmd_diagnose(cfg: RunConfig, out: Path) -> int:
    data = build_problem(cfg)
    report = _continuation(cfg, data) if cfg.mode == "continuation" else _single(cfg, data)
    patches = boundary_geometry(data.grid)
    rows = []
    for i, lv in enumerate(report.levels):
        diag = diagnose_level(lv.u, report.subsolution.values, data, cfg.f, patches, lv.epsilon)
        rows += [(i, lv.epsilon, name, value) for name, value in diag.rows()]
    write_csv(out / "diagnose.csv", DIAGNOSE_COLUMNS, rows)
    return 0 if report.converged else 1


def cmd_subsolution(cfg: RunConfig, out: Path) -> int:
    data = build_problem(cfg)
    sub = _subsolution(cfg, data)
    chk = verify_subsolution(data, cfg.f, sub.values, sub.delta0)
    cols = tuple(f"x{i + 1}" for i in range(data.n)) + ("u_sub", "excess", "cone_margin")
    write_csv(out / "subsolution.csv", cols, np.column_stack([data.grid.coords.T, sub.values, chk.excess, chk.cone_margin]).tolist())
    print(f"A = {format_value(sub.A_coeff)}  delta0 = {format_value(sub.delta0)}  min excess = {format_value(sub.min_excess)}")
    return 0 if chk.ok else 1


def cmd_convergence(cfg: RunConfig, out: Path) -> int:
    p = cfg.problem
    if p.exact is None:
        raise ConfigSemanticError("convergence needs problem.exact")
    problem = ManufacturedProblem(p.exact, p.A, p.eta, p.warp)
    rows = convergence_study(problem, cfg.solve, cfg.convergence_nodes)
    write_csv(out / "convergence.csv", REFINEMENT_COLUMNS, [r.row() for r in rows])
    for r in rows:
        print(f"nodes {r.nodes:3d}  error {r.error_inf:.4e}  ratio {r.ratio:.3f}  ({r.seconds:.1f} s)")
    return 0 if len(rows) == len(cfg.convergence_nodes) else 1


def cmd_verify_lemma(n_values, count: int, seed: int, margin: float, out: Path) -> int:
    rows = lemma_sweep(count, n_values, seed, margin)
    write_csv(out / "lemma.csv", LEMMA_COLUMNS, rows)
    bad = sum(not r["ok"] for r in rows)
    print(f"{len(rows) - bad}/{len(rows)} instances satisfy both bounds")
    return 0 if bad == 0 else 1


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="degenell", description="Dirichlet problems for f(λ(U[u])) = ψ on warped slabs.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("config", nargs="?", help="configuration file (optional for verify-lemma)")
    ap.add_argument("--out", help="output directory (overrides output.directory)")
    ap.add_argument("--nodes", type=int, help="nodes per axis (overrides problem.nodes)")
    ap.add_argument("--levels", type=int, help="continuation levels (overrides solve.levels)")
    ap.add_argument("--n", dest="lemma_n", help="lemma dimensions, e.g. 3..8")
    ap.add_argument("--count", type=int, help="lemma instance count")
    ap.add_argument("--seed", type=int, help="lemma random seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.config is None:
            if args.command != "verify-lemma":
                raise ConfigSemanticError(f"{args.command} needs a configuration file")
            cfg = parse_config("")
        else:
            cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
        if args.nodes is not None:
            if args.nodes < 5:
                raise ConfigSemanticError("--nodes must be >= 5")
            cfg.problem.nodes = args.nodes
        if args.levels is not None:
            cfg.solve = replace(cfg.solve, levels=args.levels)
        out = Path(args.out or cfg.output)
        if args.command == "verify-lemma":
            n_values = int_range(args.lemma_n) if args.lemma_n else cfg.lemma_n
            if min(n_values) < 3:
                raise ConfigSemanticError("lemma dimensions must be >= 3")
            count = args.count if args.count is not None else cfg.lemma_count
            seed = args.seed if args.seed is not None else cfg.lemma_seed
            return cmd_verify_lemma(n_values, count, seed, cfg.lemma_margin, out)
        handler = {
            "solve": cmd_solve,
            "sweep": cmd_sweep,
            "diagnose": cmd_diagnose,
            "subsolution": cmd_subsolution,
            "convergence": cmd_convergence,
        }[args.command]
        return handler(cfg, out)
    except ConfigParseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalFailure, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except (ConfigSemanticError, ValueError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
