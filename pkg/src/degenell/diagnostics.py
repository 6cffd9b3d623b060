"""Measured versions of the a priori second-order estimates on solved fields.

All "constants" are maxima of ratios over the grid, so each one is the
smallest C for which the corresponding inequality holds on that solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .manifold import BoundaryPatch, ProductGrid, covariant_hessian, distance_fields, gradient_norm, laplacian
from .operators import ProblemData, assemble_U, assemble_g, frame_components, trace_g
from .spectral import SpectralFunction, cone_margin


def _patches(patches) -> tuple:
    return (patches,) if isinstance(patches, BoundaryPatch) else tuple(patches)


def _frame_g(u, data: ProblemData, patches):
    """𝔤[u] in the frame (e_1, ..., e_{n-1}, ν), stacked over all patches."""
    G = assemble_g(u, data)
    return np.concatenate([frame_components(G[p.nodes], p) for p in _patches(patches)])


# --------------------------------------------------------------- monitors
@dataclass
class QuadraticMonitor:
    C_quad: float
    trace: np.ndarray  # tr_g 𝔤 at boundary nodes
    mixed_sq: np.ndarray  # Σ_α |𝔤(e_α, ν)|²
    ratio: np.ndarray


def boundary_quadratic_monitor(u, data: ProblemData, patches) -> QuadraticMonitor:
    """max over ∂M of tr_g 𝔤 / (1 + Σ_α |𝔤(e_α, ν)|²)."""
    Gf = _frame_g(u, data, patches)
    tr = np.trace(Gf, axis1=1, axis2=2)
    mixed = np.sum(Gf[:, :-1, -1] ** 2, axis=1)
    ratio = tr / (1.0 + mixed)
    return QuadraticMonitor(float(ratio.max()), tr, mixed, ratio)


@dataclass
class MixedGlobalMonitor:
    C_mixed: float
    C_global: float
    C_main: float
    sup_grad: float
    sup_lap: float
    sup_boundary_lap: float
    max_mixed: float


def mixed_and_global_monitors(u, data: ProblemData, patches) -> MixedGlobalMonitor:
    grid = data.grid
    u = np.asarray(u, dtype=float)
    H = covariant_hessian(grid, u)
    lap = laplacian(grid, u)
    sup_grad = float(np.max(gradient_norm(grid, u)))
    mixed = []
    bnodes = []
    for p in _patches(patches):
        Hp = frame_components(H[p.nodes], p)
        # the maximum over unit tangents X of |∇²u(X, ν)| is the length of the mixed column
        mixed.append(np.linalg.norm(Hp[:, :-1, -1], axis=1))
        bnodes.append(p.nodes)
    mixed = np.concatenate(mixed)
    bnodes = np.concatenate(bnodes)
    sup_b = float(np.max(lap[bnodes]))
    sup_abs_b = float(np.max(np.abs(lap[bnodes])))
    sup_lap = float(np.max(lap))
    return MixedGlobalMonitor(
        C_mixed=float(mixed.max() / (1.0 + sup_grad)),
        C_global=sup_lap / (1.0 + sup_grad**2 + sup_abs_b),
        C_main=sup_b / (1.0 + sup_grad**2),
        sup_grad=sup_grad,
        sup_lap=sup_lap,
        sup_boundary_lap=sup_b,
        max_mixed=float(mixed.max()),
    )


@dataclass
class EstimateMonitor:
    C_quad: float
    C_mixed: float
    C_global: float
    C_main: float
    barrier: "BarrierParams | None" = None
    b1: float = np.nan

    def finite_positive(self) -> bool:
        vals = np.array([self.C_quad, self.C_mixed, self.C_global, self.C_main])
        return bool(np.all(np.isfinite(vals)) and np.all(vals >= 0))

    def rows(self) -> list[tuple[str, float]]:
        return [("C_quad", self.C_quad), ("C_mixed", self.C_mixed), ("C_global", self.C_global), ("C_main", self.C_main)]


def estimate_monitor(u, data: ProblemData, patches) -> EstimateMonitor:
    q = boundary_quadratic_monitor(u, data, patches)
    m = mixed_and_global_monitors(u, data, patches)
    return EstimateMonitor(q.C_quad, m.C_mixed, m.C_global, m.C_main)


def relative_drift(values) -> float:
    """(max - min) / max|value| over a sequence."""
    v = np.asarray(values, dtype=float)
    return float((v.max() - v.min()) / np.max(np.abs(v)))


# ------------------------------------------------------------- calibration
class CalibrationError(RuntimeError):
    pass


@dataclass
class Calibration:
    eps0: float
    R0: float
    lam_sub: np.ndarray  # tangential eigenvalues of the subsolution tensor, (B, n-1)
    sub_trace_tangential: np.ndarray  # Σ_α 𝔤̲_αα, (B,)
    psi: np.ndarray
    R_c: np.ndarray | None = None
    trace: np.ndarray | None = None  # tr_g 𝔤[u] at the same nodes

    @property
    def below_Rc(self) -> np.ndarray:
        return self.trace < self.R_c

    @property
    def all_below(self) -> bool:
        return bool(np.all(self.below_Rc))


def _calibration_vector(R, eps0, lam_sub, sub_tan):
    return np.concatenate([R - lam_sub - eps0, (sub_tan - eps0)[:, None]], axis=1)


def calibration_holds(f: SpectralFunction, R, eps0, lam_sub, sub_tan, psi, strict=False) -> np.ndarray:
    """Nodewise: the shifted vector lies in Γ and f of it is >= ψ (> ψ if strict)."""
    v = _calibration_vector(R, eps0, lam_sub, sub_tan)
    inside = cone_margin(v, f.cone) > 0
    out = np.zeros(len(v), dtype=bool)
    val = f.value_unchecked(v[inside])
    out[inside] = val > psi[inside] if strict else val >= psi[inside]
    return out


def calibrate(
    u_sub,
    data: ProblemData,
    f: SpectralFunction,
    patches,
    eps: float = 0.0,
    R_cap: float = 2.0**40,
    eps_floor: float = 2.0**-40,
) -> Calibration:
    """Search R₀ by doubling, then the largest ε₀ in {1, 1/2, 1/4, ...}.

    The inequality is checked at every boundary node against ψ + eps.
    """
    nodes = np.concatenate([p.nodes for p in _patches(patches)])
    Gs = _frame_g(u_sub, data, patches)
    tan = Gs[:, :-1, :-1]
    lam_sub = np.linalg.eigvalsh(0.5 * (tan + tan.transpose(0, 2, 1)))
    sub_tan = np.trace(tan, axis1=1, axis2=2)
    psi = data.psi[nodes] + eps
    R = 1.0
    while not np.all(calibration_holds(f, R, 0.0, lam_sub, sub_tan, psi, strict=True)):
        R *= 2.0
        if R > R_cap:
            raise CalibrationError(f"no R0 up to {R_cap:g}; subsolution too weak at the boundary")
    eps0 = 1.0
    while not np.all(calibration_holds(f, R, eps0, lam_sub, sub_tan, psi)):
        eps0 *= 0.5
        if eps0 < eps_floor:
            raise CalibrationError(f"no eps0 above {eps_floor:g} for R0 = {R:g}")
    return Calibration(eps0, R, lam_sub, sub_tan, psi)


def rc_values(cal: Calibration, u, u_sub, data: ProblemData, patches) -> np.ndarray:
    """R_c nodewise, in the tangential frame that diagonalises 𝔤[u]_{αβ}."""
    n = data.n
    G = _frame_g(u, data, patches)
    Gs = _frame_g(u_sub, data, patches)
    tan = 0.5 * (G[:, :-1, :-1] + G[:, :-1, :-1].transpose(0, 2, 1))
    d, P = np.linalg.eigh(tan)  # columns of P: rotated tangents
    g_an = np.einsum("bac,ba->bc", P, G[:, :-1, -1])
    sub_diag = np.einsum("bac,bad,bdc->bc", P, Gs[:, :-1, :-1], P)
    return (
        2 * (n - 1) * (2 * n - 3) / cal.eps0 * np.sum(g_an**2, axis=1)
        + (n - 1) * np.sum(np.abs(d) + np.abs(sub_diag), axis=1)
        + np.sum(np.abs(cal.lam_sub), axis=1)
        + cal.R0
        + cal.eps0
    )


def calibrate_and_Rc(u_sub, u, data: ProblemData, f: SpectralFunction, patches, eps: float = 0.0) -> Calibration:
    """Calibrate on the subsolution and compare tr_g 𝔤[u] with R_c at every boundary node."""
    cal = calibrate(u_sub, data, f, patches, eps)
    cal.R_c = rc_values(cal, u, u_sub, data, patches)
    cal.trace = np.trace(_frame_g(u, data, patches), axis1=1, axis2=2)
    return cal


# ----------------------------------------------------- boundary mechanisms
@dataclass
class TangentialComparison:
    """Σ_α 𝔤_αα - Σ_α 𝔤̲_αα at boundary nodes."""

    difference: np.ndarray
    nodes: np.ndarray

    @property
    def min_difference(self) -> float:
        return float(self.difference.min())

    def holds(self, tol: float = 1e-8) -> bool:
        return bool(np.all(self.difference >= -tol))


def tangential_trace_comparison(u, u_sub, data: ProblemData, patches) -> TangentialComparison:
    G = _frame_g(u, data, patches)
    Gs = _frame_g(u_sub, data, patches)
    tan = np.trace(G[:, :-1, :-1], axis1=1, axis2=2)
    tan_sub = np.trace(Gs[:, :-1, :-1], axis1=1, axis2=2)
    nodes = np.concatenate([p.nodes for p in _patches(patches)])
    return TangentialComparison(tan - tan_sub, nodes)


@dataclass
class BoundaryIdentityReport:
    tangential_gradient: float  # max |∇_{e_α}(u - u̲)|
    hessian_residual: float  # max |∇²(u-u̲)(e_α,e_β) + ∇_ν(u-u̲) II(e_α,e_β)|
    normal_lower: float  # min ∇_ν(u - u̲)
    normal_upper: float  # min ∇_ν(w - u)


def boundary_identity_check(u, u_sub, data: ProblemData, patches, w=None) -> BoundaryIdentityReport:
    grid = data.grid
    v = np.asarray(u, dtype=float) - np.asarray(u_sub, dtype=float)
    dv = grid.gradient(v)
    Hv = covariant_hessian(grid, v)
    tg, hr, lo, up = [], [], [], []
    for p in _patches(patches):
        tg.append(np.abs(np.einsum("bai,bi->ba", p.frame, dv[p.nodes])).ravel())
        dnu = np.einsum("bi,bi->b", p.normal, dv[p.nodes])
        Hf = np.einsum("bai,bij,bcj->bac", p.frame, Hv[p.nodes], p.frame)
        hr.append(np.abs(Hf + dnu[:, None, None] * p.second_form).ravel())
        lo.append(dnu)
        if w is not None:
            dw = grid.gradient(np.asarray(w, dtype=float) - np.asarray(u, dtype=float))
            up.append(np.einsum("bi,bi->b", p.normal, dw[p.nodes]))
    return BoundaryIdentityReport(
        float(np.concatenate(tg).max()),
        float(np.concatenate(hr).max()),
        float(np.concatenate(lo).min()),
        float(np.concatenate(up).min()) if up else np.nan,
    )


# ----------------------------------------------------------------- barrier
class BarrierParamError(ValueError):
    pass


@dataclass(frozen=True)
class BarrierParams:
    A1: float
    A2: float
    A3: float
    N: float
    t: float
    delta: float

    def __post_init__(self):
        if self.N * self.delta - self.t > 1e-14 * max(1.0, self.t):
            raise BarrierParamError(f"N*delta - t = {self.N * self.delta - self.t:g} > 0")
        if min(self.A1, self.A2, self.A3, self.N, self.t, self.delta) <= 0:
            raise BarrierParamError("barrier constants must be positive")

    @classmethod
    def with_collar(cls, A1, A2, A3, delta, N=1.0) -> "BarrierParams":
        """t = Nδ, the equality case of Nδ - t <= 0."""
        return cls(A1, A2, A3, N, N * delta, delta)


@dataclass
class BarrierReport:
    params: BarrierParams
    b1: float
    x0: int
    collar: np.ndarray  # node indices with ρ <= δ
    values: np.ndarray  # (2(n-1), len(collar)), rows (α, sign) in order (1,+), (1,-), ...
    labels: list
    face_mask: np.ndarray  # collar nodes on ∂M
    rim_mask: np.ndarray  # interior collar nodes in the outer shell δ - h < ρ <= δ

    @property
    def max_value(self) -> float:
        return float(self.values.max())

    @property
    def face_max(self) -> float:
        return float(self.values[:, self.face_mask].max()) if self.face_mask.any() else -np.inf

    @property
    def rim_max(self) -> float:
        return float(self.values[:, self.rim_mask].max()) if self.rim_mask.any() else -np.inf

    def per_operator_max(self) -> dict:
        return {lab: float(row.max()) for lab, row in zip(self.labels, self.values)}


@dataclass
class BarrierTerms:
    """Pieces of Ψ̃ on the collar, before the constants are applied."""

    sqrt_b1: float
    gap: np.ndarray  # u̲ - u
    rho2: np.ndarray
    sigma: np.ndarray
    tangential: np.ndarray  # Σ_{τ<n} |∂_τ(u - φ)|²
    T: np.ndarray  # (n-1, m) ∂_α(u - φ)


def barrier_terms(u, u_sub, phi_ext, grid: ProductGrid, x0: int, delta: float):
    sigma, rho = distance_fields(grid, x0)
    collar = np.flatnonzero(rho <= delta + 1e-12)
    v = np.asarray(u, dtype=float) - np.asarray(phi_ext, dtype=float)
    dv = grid.gradient(v)
    b1 = 1.0 + float(np.max(np.einsum("pi,pij,pj->p", dv, grid.metric_inv, dv)))
    n = grid.n
    terms = BarrierTerms(
        np.sqrt(b1),
        (np.asarray(u_sub) - np.asarray(u))[collar],
        rho[collar] ** 2,
        sigma[collar],
        np.sum(dv[collar, : n - 1] ** 2, axis=1),
        dv[collar, : n - 1].T,
    )
    return terms, collar, rho[collar], b1


def barrier_values(terms: BarrierTerms, params: BarrierParams) -> tuple[np.ndarray, list]:
    s = terms.sqrt_b1
    base = (
        params.A1 * s * terms.gap
        - params.A2 * s * terms.rho2
        + params.A3 * s * (params.N * terms.sigma**2 - params.t * terms.sigma)
        + terms.tangential / s
    )
    rows, labels = [], []
    for a, Ta in enumerate(terms.T):
        for sign in (1.0, -1.0):
            rows.append(base + sign * Ta)
            labels.append(f"{'+' if sign > 0 else '-'}d{a + 1}")
    return np.array(rows), labels


def barrier_check(u, u_sub, phi_ext, grid: ProductGrid, x0: int, params: BarrierParams) -> BarrierReport:
    """Ψ̃ on Ω_δ = {ρ <= δ} for 𝒯 = ±∂_α, α < n."""
    terms, collar, rho, b1 = barrier_terms(u, u_sub, phi_ext, grid, x0, params.delta)
    vals, labels = barrier_values(terms, params)
    face = grid.boundary_mask[collar]
    rim = (~face) & (rho > params.delta - grid.h + 1e-12)
    return BarrierReport(params, b1, x0, collar, vals, labels, face, rim)


def search_barrier_constants(
    u,
    u_sub,
    phi_ext,
    grid: ProductGrid,
    x0: int,
    delta: float | None = None,
    separation: float = 10.0,
    A3: float = 2.0,
    N: float = 1.0,
    cap: float = 2.0**60,
    tol: float = 0.0,
) -> BarrierReport:
    """Doubling search for A₁ >= separation·A₂, A₂ >= separation·A₃, A₃ > 1.

    A₂ is raised until Ψ̃ <= tol on the outer shell of the collar, then A₁
    until Ψ̃ <= tol on the whole collar.
    """
    delta = 5.0 * grid.h if delta is None else delta
    terms, collar, rho, b1 = barrier_terms(u, u_sub, phi_ext, grid, x0, delta)
    face = grid.boundary_mask[collar]
    rim = (~face) & (rho > delta - grid.h + 1e-12)

    def report(A1, A2):
        p = BarrierParams.with_collar(A1, A2, A3, delta, N)
        vals, labels = barrier_values(terms, p)
        return BarrierReport(p, b1, x0, collar, vals, labels, face, rim)

    A2 = separation * A3
    A1 = separation * A2
    while report(A1, A2).rim_max > tol:
        A2 *= 2.0
        A1 = max(A1, separation * A2)
        if A2 > cap:
            break
    rep = report(A1, A2)
    while rep.max_value > tol and A1 <= cap:
        A1 *= 2.0
        rep = report(A1, A2)
    return rep


# ------------------------------------------------------------- rows for CSV
@dataclass
class LevelDiagnostics:
    epsilon: float
    monitor: EstimateMonitor
    calibration: Calibration | None = None
    comparison: TangentialComparison | None = None
    extra: dict = field(default_factory=dict)

    def rows(self) -> list[tuple[str, float]]:
        out = list(self.monitor.rows())
        if self.calibration is not None:
            cal = self.calibration
            out += [
                ("eps0", cal.eps0),
                ("R0", cal.R0),
                ("min_Rc_gap", float(np.min(cal.R_c - cal.trace))),
                ("frac_below_Rc", float(np.mean(cal.below_Rc))),
            ]
        if self.comparison is not None:
            out.append(("min_tangential_gain", self.comparison.min_difference))
        out += sorted(self.extra.items())
        return out


def diagnose_level(u, u_sub, data: ProblemData, f: SpectralFunction, patches, eps: float = 0.0) -> LevelDiagnostics:
    mon = estimate_monitor(u, data, patches)
    try:
        cal = calibrate_and_Rc(u_sub, u, data, f, patches, eps)
    except CalibrationError:
        cal = None
    comp = tangential_trace_comparison(u, u_sub, data, patches)
    return LevelDiagnostics(float(eps), mon, cal, comp)


def trace_U_positive(u, data: ProblemData) -> bool:
    """tr_g U[u] > 0 at all interior nodes."""
    U = assemble_U(u, data, check=False)
    return bool(np.all(trace_g(data.grid, U)[data.grid.interior] > 0))
