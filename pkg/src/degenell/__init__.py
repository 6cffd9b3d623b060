"""Finite-difference solvers for degenerate fully nonlinear elliptic Dirichlet
problems f(λ(U[u])) = ψ on warped slabs T^{n-1} × [0, 1]."""

from .admissible import (
    SubsolutionRefused,
    construct_subsolution_caseI,
    ordering_check,
    solve_supersolution_w,
    verify_subsolution,
)
from .diagnostics import (
    barrier_check,
    boundary_quadratic_monitor,
    calibrate_and_Rc,
    mixed_and_global_monitors,
    search_barrier_constants,
)
from .eigen_lemma import growth_threshold, localize_eigenvalues
from .manifold import ProductGrid, boundary_geometry
from .operators import EtaTensor, ProblemData, assemble_g, assemble_U
from .solver import SolveConfig, degeneracy_continuation, newton_solve, residual
from .spectral import SpectralFunction, lambda_from_mu, mu_from_lambda

__version__ = "0.1.0"

__all__ = [
    "EtaTensor",
    "ProblemData",
    "ProductGrid",
    "SolveConfig",
    "SpectralFunction",
    "SubsolutionRefused",
    "assemble_U",
    "assemble_g",
    "barrier_check",
    "boundary_geometry",
    "boundary_quadratic_monitor",
    "calibrate_and_Rc",
    "construct_subsolution_caseI",
    "degeneracy_continuation",
    "growth_threshold",
    "lambda_from_mu",
    "localize_eigenvalues",
    "mixed_and_global_monitors",
    "mu_from_lambda",
    "newton_solve",
    "ordering_check",
    "residual",
    "search_barrier_constants",
    "solve_supersolution_w",
    "verify_subsolution",
]
