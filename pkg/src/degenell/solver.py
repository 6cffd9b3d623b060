"""Damped Newton for f(λ(U[u])) = ψ + ε with Dirichlet data, and the
continuation ε ↓ 0 that approaches the degenerate equation."""

from __future__ import annotations

import csv
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field, replace

import numpy as np
import pyamg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .operators import ProblemData, eigh_wrt_g
from .spectral import SpectralFunction, cone_margin

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("epsilon", "iters", "residual", "sup_lap", "sup_grad", "C_quad", "C_mixed", "converged")


class AdmissibilityError(RuntimeError):
    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class SolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolveConfig:
    f: SpectralFunction
    tol_residual: float = 1e-10
    max_newton: int = 60
    cone_margin_floor: float = 1e-10
    eps0: float = 0.5
    ratio: float = 0.5
    levels: int = 8
    backtrack: float = 0.5
    min_step: float = 1e-10
    armijo: float = 1e-4
    linear_solver: str = "amg"

    def __post_init__(self):
        if self.eps0 <= 0:
            raise ValueError("eps0 must be positive")
        if not 0 < self.ratio < 1:
            raise ValueError("ratio must lie in (0, 1)")
        if self.cone_margin_floor <= 0:
            raise ValueError("cone_margin_floor must be positive")
        if self.linear_solver not in LINEAR_SOLVERS:
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")

    def epsilons(self) -> np.ndarray:
        return self.eps0 * self.ratio ** np.arange(self.levels + 1)


def nondegeneracy_gap(data: ProblemData, f: SpectralFunction, eps: float = 0.0) -> float:
    """δ_{ψ,f} = inf ψ_ε - sup_{∂Γ} f."""
    return float(np.min(data.psi + eps) - f.boundary_sup)


class NewtonSystem:
    """Residual and Jacobian of u -> f(λ(U[u])) - ψ_ε at interior nodes."""

    def __init__(self, data: ProblemData, f: SpectralFunction, eps: float = 0.0, floor: float = 1e-10):
        self.data = data
        self.f = f
        self.eps = eps
        self.floor = floor
        grid = data.grid
        self.inn = grid.interior
        self.bnd = grid.boundary
        asm = data.assembly
        self.keys = list(asm.U)
        self.U_rows = {key: asm.U[key][self.inn] for key in self.keys}
        self.U_int = {key: self.U_rows[key][:, self.inn].tocsr() for key in self.keys}
        self.U_abs = {key: abs(op) for key, op in self.U_rows.items()}
        self.A_int = data.A[self.inn]
        self.psi_eps = data.psi[self.inn] + eps

    def tensor(self, u) -> np.ndarray:
        n = self.data.n
        T = np.empty((self.inn.size, n, n))
        for (i, j), op in self.U_rows.items():
            v = op @ u
            T[:, i, j] = v
            T[:, j, i] = v
        return self.A_int + T

    def evaluate(self, u):
        """Eigen-data at interior nodes; raises AdmissibilityError below the margin floor."""
        lam, V = eigh_wrt_g(self.tensor(u), self.data.grid, self.inn)
        margin = cone_margin(lam, self.f.cone)
        floor = self.floor * (1.0 + np.linalg.norm(lam, axis=-1))
        short = margin - floor
        if np.min(short) < 0:
            bad = int(self.inn[np.argmin(short)])
            raise AdmissibilityError(
                f"admissibility lost at node {bad} (margin {margin.min():.3e})", bad
            )
        return lam, V

    def residual(self, u, eig=None) -> np.ndarray:
        lam, _ = self.evaluate(u) if eig is None else eig
        return self.f.value_unchecked(lam) - self.psi_eps

    def roundoff(self, u, eig) -> np.ndarray:
        """Bound on the floating-point error of the residual at each node.

        Entries of U are sums of stencil terms of size |c||u|; their rounding
        error propagates through f with weight Σ_m f_m(λ).
        """
        au = np.abs(u)
        scale = np.abs(self.A_int).max(axis=(1, 2))
        for op in self.U_abs.values():
            scale = np.maximum(scale, op @ au)
        df = self.f.gradient_unchecked(eig[0])
        return np.finfo(float).eps * np.sum(np.abs(df), axis=-1) * scale

    def coefficients(self, eig) -> np.ndarray:
        """F^{ij} = Σ_m f_m v_m^i v_m^j with g-orthonormal eigenvectors v_m."""
        lam, V = eig
        df = self.f.gradient_unchecked(lam)
        return np.einsum("pim,pm,pjm->pij", V, df, V)

    def jacobian(self, eig) -> sp.csr_matrix:
        F = self.coefficients(eig)
        J = None
        for (i, j), op in self.U_int.items():
            w = F[:, i, j] * (1.0 if i == j else 2.0)
            term = sp.diags(w) @ op
            J = term if J is None else J + term
        return J.tocsr()


def residual(u, data: ProblemData, f: SpectralFunction, eps: float = 0.0, floor: float = 1e-10) -> np.ndarray:
    """f(λ(U[u])) - ψ - ε at the interior nodes."""
    return NewtonSystem(data, f, eps, floor).residual(np.asarray(u, dtype=float))


def jacobian_apply(u, data: ProblemData, f: SpectralFunction, v, eps: float = 0.0, floor: float = 1e-10) -> np.ndarray:
    """Linearisation of :func:`residual` at u applied to a direction v.

    ``v`` may be given on all nodes (boundary entries are ignored) or on the
    interior only.
    """
    sysm = NewtonSystem(data, f, eps, floor)
    v = np.asarray(v, dtype=float)
    if v.shape[0] == data.grid.size:
        v = v[sysm.inn]
    return sysm.jacobian(sysm.evaluate(np.asarray(u, dtype=float))) @ v


LINEAR_SOLVERS = ("amg", "direct")


@contextmanager
def _fixed_global_seed(seed: int = 0):
    # pyamg draws start vectors from numpy's global generator
    state = np.random.get_state()
    np.random.seed(seed)
    try:
        yield
    finally:
        np.random.set_state(state)


def _linear_solve(J, rhs, method: str, rtol: float):
    """Solve J x = rhs; "amg" is smoothed-aggregation multigrid inside flexible GMRES."""
    if method == "amg":
        res = []
        with _fixed_global_seed():
            ml = pyamg.smoothed_aggregation_solver(J, symmetry="nonsymmetric")
            x = ml.solve(rhs, tol=rtol, accel="fgmres", maxiter=200, residuals=res)
        if np.linalg.norm(J @ x - rhs) <= 10 * rtol * np.linalg.norm(rhs):
            return x
        log.warning("multigrid stalled after %d iterations; falling back to LU", len(res))
    return spla.spsolve(J.tocsc(), rhs)


@dataclass
class NewtonResult:
    u: np.ndarray
    iterations: int
    residual: float
    converged: bool
    history: list = field(default_factory=list)
    min_margin: list = field(default_factory=list)
    noise_floor: float = 0.0


def newton_solve(u0, data: ProblemData, config: SolveConfig, eps: float = 0.0, floor_scale: float = 1.0) -> NewtonResult:
    """Damped Newton with a fraction-to-boundary line search.

    Every accepted iterate keeps the cone margin of λ(U[u]) above
    ``cone_margin_floor * floor_scale * (1 + |λ|)`` at all interior nodes.
    The run stops once max|r| < tol_residual, or once it falls below the
    rounding bound of the residual evaluation (which exceeds tol_residual
    only when λ(U[u]) sits very close to the cone boundary).
    """
    f = config.f
    sysm = NewtonSystem(data, f, eps, config.cone_margin_floor * floor_scale)
    u = data.with_boundary(u0)
    inn = sysm.inn
    eig = sysm.evaluate(u)
    r = sysm.residual(u, eig)
    history = [float(np.max(np.abs(r)))]
    margins = [float(np.min(cone_margin(eig[0], f.cone)))]
    noise = float(np.max(sysm.roundoff(u, eig)))
    it = 0
    while history[-1] >= max(config.tol_residual, noise):
        if it >= config.max_newton:
            return NewtonResult(u, it, history[-1], False, history, margins, noise)
        J = sysm.jacobian(eig)
        # forcing term slaved to the outer residual
        rtol = max(min(1e-2 * history[-1], 1e-4), 1e-13)
        delta = _linear_solve(J, -r, config.linear_solver, rtol)
        if not np.all(np.isfinite(delta)):
            raise SolveError("linear solve produced non-finite values")
        norm0 = np.linalg.norm(r)
        alpha = 1.0
        while True:
            trial = u.copy()
            trial[inn] += alpha * delta
            try:
                eig_t = sysm.evaluate(trial)
                r_t = sysm.residual(trial, eig_t)
                if np.linalg.norm(r_t) <= (1.0 - config.armijo * alpha) * norm0:
                    break
            except AdmissibilityError:
                pass
            alpha *= config.backtrack
            if alpha < config.min_step:
                raise SolveError(f"line search stalled at iteration {it} (residual {history[-1]:.3e})")
        u, eig, r = trial, eig_t, r_t
        it += 1
        history.append(float(np.max(np.abs(r))))
        margins.append(float(np.min(cone_margin(eig[0], f.cone))))
        noise = float(np.max(sysm.roundoff(u, eig)))
        log.debug("newton %d: step %.3g residual %.3e", it, alpha, history[-1])
    return NewtonResult(u, it, history[-1], True, history, margins, noise)


@dataclass
class LevelRecord:
    epsilon: float
    iters: int
    residual: float
    sup_lap: float
    sup_grad: float
    C_quad: float
    C_mixed: float
    converged: bool
    C_main: float = np.nan
    C_global: float = np.nan
    u: np.ndarray | None = field(default=None, repr=False)

    def row(self) -> dict:
        return {c: getattr(self, c) for c in REPORT_COLUMNS}


@dataclass
class SolveReport:
    levels: list = field(default_factory=list)
    failure: str | None = None
    subsolution: object = None

    @property
    def converged(self) -> bool:
        return self.failure is None and all(lv.converged for lv in self.levels)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for lv in self.levels:
                w.writerow([format_value(lv.row()[c]) for c in REPORT_COLUMNS])


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def level_record(data: ProblemData, eps: float, result: NewtonResult, u_sub=None) -> LevelRecord:
    from .diagnostics import boundary_quadratic_monitor, mixed_and_global_monitors

    from .manifold import boundary_geometry, gradient_norm, laplacian

    grid = data.grid
    patches = boundary_geometry(grid)
    quad = boundary_quadratic_monitor(result.u, data, patches)
    mixed = mixed_and_global_monitors(result.u, data, patches)
    return LevelRecord(
        float(eps),
        result.iterations,
        result.residual,
        float(np.max(laplacian(grid, result.u))),
        float(np.max(gradient_norm(grid, result.u))),
        quad.C_quad,
        mixed.C_mixed,
        result.converged,
        C_main=mixed.C_main,
        C_global=mixed.C_global,
        u=result.u,
    )


def degeneracy_continuation(data: ProblemData, config: SolveConfig, u_start=None, subsolution=None) -> SolveReport:
    """Solve for ε_k = ε₀ ratio^k, k = 0..levels, warm-starting each level.

    The default start is the Case I subsolution; the margin floor shrinks
    with ε/ε₀ so the iterates may approach ∂Γ as the lift vanishes.
    """
    from .admissible import construct_subsolution_caseI

    f = config.f
    if not f.supports_degenerate:
        raise ValueError(f"{f.family} has sup over the cone boundary = -inf; degenerate mode needs it finite")
    report = SolveReport()
    if u_start is None:
        if subsolution is None:
            subsolution = construct_subsolution_caseI(data, f)
        u_start = subsolution.values
    report.subsolution = subsolution
    u = np.asarray(u_start, dtype=float)
    for eps in config.epsilons():
        if nondegeneracy_gap(data, f, eps) <= 0:
            report.failure = f"non-degeneracy gap not positive at eps={eps:g}"
            break
        try:
            res = newton_solve(u, data, config, eps, floor_scale=eps / config.eps0)
        except (SolveError, AdmissibilityError) as exc:
            report.failure = f"eps={eps:g}: {exc}"
            break
        report.levels.append(level_record(data, eps, res))
        if not res.converged:
            report.failure = f"eps={eps:g}: no convergence in {config.max_newton} iterations"
            break
        u = res.u
    return report


def with_levels(config: SolveConfig, **changes) -> SolveConfig:
    return replace(config, **changes)
