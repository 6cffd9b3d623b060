"""Manufactured solutions: exact right-hand sides and grid-refinement studies."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .expressions import Expression
from .manifold import ProductGrid, christoffel_from_metric, warped_metric
from .operators import EtaTensor, ProblemData, eigenvalues_wrt_g, trace_g
from .spectral import SpectralFunction

log = logging.getLogger(__name__)


@dataclass
class ManufacturedProblem:
    """u = ``exact`` solves f(λ(U[u])) = ψ when ψ is computed by :meth:`psi`.

    Derivatives of ``exact`` and of the warp are taken symbolically, so ψ
    carries no discretisation error.
    """

    exact: Expression
    A: object = None
    eta: EtaTensor = field(default_factory=EtaTensor.zero)
    warp: Expression | None = None

    @property
    def n(self) -> int:
        return self.exact.n

    def grid(self, nodes: int) -> ProductGrid:
        return ProductGrid.uniform(self.n, nodes, self.warp)

    def exact_values(self, grid: ProductGrid) -> np.ndarray:
        return self.exact(*grid.coords)

    def exact_tensors(self, grid: ProductGrid):
        """Exact 𝔤[u*] and U[u*] at every node."""
        n, X = self.n, grid.coords
        du = np.stack([self.exact.derivative(i)(*X) for i in range(n)], axis=-1)
        d2 = np.empty((grid.size, n, n))
        for i in range(n):
            for j in range(i, n):
                d2[:, i, j] = d2[:, j, i] = self.exact.derivative(i, j)(*X)
        if self.warp is None:
            w = np.zeros(grid.size)
            dw = np.zeros((grid.size, n))
        else:
            w = self.warp(*X)
            dw = np.stack([self.warp.derivative(i)(*X) for i in range(n)], axis=-1)
        g, dg = warped_metric(w, dw)
        ginv = np.linalg.inv(g)
        gam = christoffel_from_metric(ginv, dg)
        hess = d2 - np.einsum("pkij,pk->pij", gam, du)
        data = ProblemData(grid, A=self.A, eta=self.eta)
        W = np.einsum("pkij,pk->pij", self.eta.components(grid), du)
        G = data.chi + hess + W
        U = trace_g(grid, G)[:, None, None] * g - G
        return G, U

    def psi(self, grid: ProductGrid, f: SpectralFunction) -> np.ndarray:
        _, U = self.exact_tensors(grid)
        return f(eigenvalues_wrt_g(U, grid))

    def data(self, grid: ProductGrid, f: SpectralFunction) -> ProblemData:
        return ProblemData(grid, A=self.A, eta=self.eta, psi=self.psi(grid, f), phi=self.exact_values(grid))


@dataclass
class RefinementRow:
    nodes: int
    h: float
    iters: int
    residual: float
    error_inf: float
    ratio: float
    seconds: float

    def row(self) -> dict:
        return {c: getattr(self, c) for c in REFINEMENT_COLUMNS}


REFINEMENT_COLUMNS = ("nodes", "h", "iters", "residual", "error_inf", "ratio")


def convergence_study(problem: ManufacturedProblem, config, node_counts=(9, 17, 33), start: str = "subsolution"):
    """Solve on each grid from the Case I subsolution and record the L∞ error.

    ``ratio`` is error(previous grid) / error(this grid); NaN on the first.
    """
    from .admissible import construct_subsolution_caseI
    from .solver import newton_solve

    rows = []
    prev = None
    for m in node_counts:
        grid = problem.grid(m)
        data = problem.data(grid, config.f)
        t0 = time.perf_counter()
        if start == "subsolution":
            u0 = construct_subsolution_caseI(data, config.f).values
        else:
            u0 = data.linear_extension()
        res = newton_solve(u0, data, config)
        elapsed = time.perf_counter() - t0
        err = float(np.max(np.abs(res.u - problem.exact_values(grid))))
        ratio = prev / err if prev is not None else float("nan")
        rows.append(RefinementRow(m, grid.h, res.iterations, res.residual, err, ratio, elapsed))
        log.info("nodes %d: error %.3e ratio %.3f (%.1f s)", m, err, ratio, elapsed)
        if not res.converged:
            break
        prev = err
    return rows
