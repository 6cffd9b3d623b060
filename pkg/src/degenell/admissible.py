"""Sub- and supersolutions: the linear barrier w, the product-space
subsolution constructions, and the pointwise checks that certify them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .operators import ProblemData, assemble_U, assemble_g, eigenvalues_wrt_g, trace_g
from .spectral import SpectralFunction, cone_margin, gamma_infinity_contains, mu_from_lambda

A_CAP = 2.0**30
T_CAP = 2.0**40


class SubsolutionRefused(RuntimeError):
    def __init__(self, message, nodes=()):
        super().__init__(message)
        self.nodes = np.asarray(nodes, dtype=int)


class LinearSolveError(RuntimeError):
    pass


def default_delta0(psi) -> float:
    """1% of the spread of ψ, but never below 1e-2 so constant ψ keeps a strict margin."""
    psi = np.asarray(psi, dtype=float)
    return 1e-2 * max(float(np.ptp(psi)), 1.0)


def solve_supersolution_w(data: ProblemData, rtol: float = 1e-10) -> np.ndarray:
    """Solve tr_g 𝔤[w] = 0 in M, w = φ on ∂M (a linear uniformly elliptic problem)."""
    grid = data.grid
    K = data.assembly.trace_G
    inn, bnd = grid.interior, grid.boundary
    rhs = -trace_g(grid, data.chi)[inn] - K[inn][:, bnd] @ data.phi[bnd]
    Kii = K[inn][:, inn].tocsc()
    w_in = spla.spsolve(Kii, rhs)
    res = np.linalg.norm(Kii @ w_in - rhs)
    scale = max(np.linalg.norm(rhs), 1.0)
    if not np.all(np.isfinite(w_in)) or res > rtol * scale:
        raise LinearSolveError(f"supersolution solve residual {res:.3e}")
    w = data.phi.copy()
    w[inn] = w_in
    return w


@dataclass
class SubsolutionRecipe:
    case: str
    A_coeff: float
    base: np.ndarray
    values: np.ndarray
    delta0: float
    min_excess: float  # min over nodes of f(λ(U[u̲])) - ψ - δ₀
    min_cone_margin: float
    profile: object = None


@dataclass
class SubsolutionCheck:
    excess: np.ndarray  # f - ψ - δ₀ per node, -inf where outside the cone
    cone_margin: np.ndarray
    boundary_error: float

    @property
    def violations(self) -> np.ndarray:
        return np.flatnonzero((self.excess < 0) | (self.cone_margin <= 0))

    @property
    def ok(self) -> bool:
        return self.violations.size == 0 and self.boundary_error == 0.0


def verify_subsolution(data: ProblemData, f: SpectralFunction, u_sub, delta0: float = 0.0, tol: float = 0.0) -> SubsolutionCheck:
    """Nodewise check of f(λ(U[u̲])) >= ψ + δ₀ on the closed grid and u̲ = φ on ∂M."""
    grid = data.grid
    lam = eigenvalues_wrt_g(assemble_U(u_sub, data, check=False), grid)
    margin = cone_margin(lam, f.cone)
    excess = np.full(grid.size, -np.inf)
    inside = margin > 0
    excess[inside] = f.value_unchecked(lam[inside]) - data.psi[inside] - delta0 + tol
    bnd = grid.boundary
    berr = float(np.max(np.abs(np.asarray(u_sub)[bnd] - data.phi[bnd])))
    return SubsolutionCheck(excess, margin, berr)


def _limit_condition_nodes(data: ProblemData, f: SpectralFunction, base, target, t_cap: float) -> np.ndarray:
    """Nodes where f(λ(U[w̄] + t g_X)) stays <= target for all probed t."""
    grid = data.grid
    U0 = assemble_U(base, data, check=False)
    gT = grid.metric.copy()
    gT[:, -1, :] = 0.0
    gT[:, :, -1] = 0.0
    pending = np.arange(grid.size)
    t = 1.0
    while pending.size and t <= t_cap:
        lam = eigenvalues_wrt_g(U0[pending] + t * gT[pending], grid, pending)
        margin = cone_margin(lam, f.cone)
        ok = margin > 0
        val = np.full(pending.size, -np.inf)
        val[ok] = f.value_unchecked(lam[ok])
        pending = pending[~(ok & (val > target[pending]))]
        t *= 2.0
    return pending


def construct_subsolution_caseI(
    data: ProblemData,
    f: SpectralFunction,
    base=None,
    delta0: float | None = None,
    A_cap: float = A_CAP,
    t_cap: float = T_CAP,
    bisection_steps: int = 30,
) -> SubsolutionRecipe:
    """u̲ = w̄ + A(x_n² - x_n) with the least admissible A found by doubling then bisection."""
    grid = data.grid
    base = data.linear_extension() if base is None else np.asarray(base, dtype=float)
    delta0 = default_delta0(data.psi) if delta0 is None else float(delta0)
    target = data.psi + delta0
    bad = _limit_condition_nodes(data, f, base, target, t_cap)
    if bad.size:
        raise SubsolutionRefused(
            f"limit condition fails at {bad.size} node(s) (first {bad[0]})", bad
        )
    xn = grid.coords[-1]
    bump = xn**2 - xn

    def accepted(A):
        chk = verify_subsolution(data, f, base + A * bump, delta0)
        return chk.ok, chk

    A = 2.0**-20
    ok, chk = accepted(0.0)
    if ok:
        A = 0.0
    else:
        while True:
            ok, chk = accepted(A)
            if ok:
                break
            if A >= A_cap:
                raise SubsolutionRefused(f"no admissible A up to cap {A_cap:g}", chk.violations)
            A *= 2.0
        lo, hi = A / 2.0, A
        if lo >= 2.0**-20:
            for _ in range(bisection_steps):
                mid = 0.5 * (lo + hi)
                if accepted(mid)[0]:
                    hi = mid
                else:
                    lo = mid
        A = hi
        ok, chk = accepted(A)
    u_sub = base + A * bump
    return SubsolutionRecipe(
        "warped_caseI",
        float(A),
        base,
        u_sub,
        delta0,
        float(np.min(chk.excess)),
        float(np.min(chk.cone_margin)),
        profile=bump,
    )


# ----------------------------------------------------------------- Case II
@dataclass
class CaseIIReport:
    A: float
    gate_value: float
    gate_ok: bool
    samples: int
    violations: int
    min_excess: float
    min_cone_margin: float
    boundary_profile_error: float

    @property
    def ok(self) -> bool:
        return self.gate_ok and self.violations == 0 and self.boundary_profile_error <= 1e-14


def sample_product_points(n: int, k: int, count: int, rng) -> np.ndarray:
    """Uniform samples of T^{n-k} x B^k (unit ball), shape (count, n)."""
    x = rng.uniform(0.0, 1.0, size=(count, n - k))
    d = rng.standard_normal((count, k))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = rng.uniform(0.0, 1.0, size=(count, 1)) ** (1.0 / k)
    return np.hstack([x, r * d])


def ball_profile(points, k: int):
    """h = (|y|² - 1)/2 on the ball factor: value and Hessian (identity on the ball block)."""
    n = points.shape[1]
    y = points[:, n - k :]
    val = 0.5 * (np.sum(y**2, axis=1) - 1.0)
    hess = np.zeros((len(points), n, n))
    idx = np.arange(n - k, n)
    hess[:, idx, idx] = 1.0
    return val, hess


def verify_subsolution_caseII_pointwise(
    f: SpectralFunction,
    k: int,
    wbar_hessian,
    psi,
    A: float,
    sample_count: int = 10_000,
    seed: int = 0,
    delta0: float = 0.0,
    A_tensor=None,
    variant: str = "U",
) -> CaseIIReport:
    """Sample X x Ω with Ω the unit ball in R^k and check u̲ = w̄ + A h pointwise.

    The product metric is flat and η = 0, so derivatives of h are exact.
    ``variant='U'`` checks f(λ(U[u̲])) >= ψ + δ₀; ``variant='g'`` checks the
    𝔤-form f(λ(χ + ∇²u̲)) instead.
    """
    n = f.n
    if not 2 <= k <= n:
        raise ValueError("ball factor needs 2 <= k <= n")
    rng = np.random.default_rng(seed)
    pts = sample_product_points(n, k, sample_count, rng)
    gate = float(k - 1)  # mean curvature of the unit sphere in R^k
    gate_ok = gamma_infinity_contains(gate, f.cone)

    _, hh = ball_profile(pts, k)
    hess = np.asarray(wbar_hessian(pts), dtype=float) + A * hh
    At = np.zeros((n, n)) if A_tensor is None else np.asarray(A_tensor, dtype=float)
    if variant == "U":
        T = At + np.trace(hess, axis1=1, axis2=2)[:, None, None] * np.eye(n) - hess
    elif variant == "g":
        chi = np.trace(At) / (n - 1) * np.eye(n) - At
        T = chi + hess
    else:
        raise ValueError(f"unknown variant {variant!r}")
    lam = np.linalg.eigvalsh(T)
    margin = cone_margin(lam, f.cone)
    psi_v = np.broadcast_to(np.asarray(psi(pts) if callable(psi) else psi, dtype=float), (sample_count,))
    excess = np.full(sample_count, -np.inf)
    inside = margin > 0
    excess[inside] = f.value_unchecked(lam[inside]) - psi_v[inside] - delta0

    # h vanishes on ∂Ω
    sph = rng.standard_normal((256, k))
    sph /= np.linalg.norm(sph, axis=1, keepdims=True)
    hb, _ = ball_profile(np.hstack([np.zeros((256, n - k)), sph]), k)
    return CaseIIReport(
        float(A),
        gate,
        gate_ok,
        sample_count,
        int(np.sum(excess < 0)),
        float(excess.min()),
        float(margin.min()),
        float(np.max(np.abs(hb))),
    )


def search_caseII_A(f, k, wbar_hessian, psi, sample_count=10_000, seed=0, delta0=0.0, A_tensor=None,
                    variant="U", A_cap=A_CAP) -> CaseIIReport:
    """Least power-of-two A (from 1) that passes the pointwise Case II check."""
    A = 1.0
    while A <= A_cap:
        rep = verify_subsolution_caseII_pointwise(f, k, wbar_hessian, psi, A, sample_count, seed,
                                                  delta0, A_tensor, variant)
        if not rep.gate_ok:
            raise SubsolutionRefused(f"mean-curvature gate {rep.gate_value} not in Γ^∞")
        if rep.ok:
            return rep
        A *= 2.0
    raise SubsolutionRefused(f"no admissible A up to cap {A_cap:g}")


# ----------------------------------------------------------- supersolution
@dataclass
class SupersolutionReport:
    admissible: np.ndarray  # bool per node, λ(U[ŭ]) ∈ Γ
    g_admissible: np.ndarray  # bool per node, Qλ(𝔤[ŭ]) ∈ Γ
    excess: np.ndarray  # F(U[ŭ]) - ψ where admissible, nan elsewhere
    boundary_error: float
    tol: float

    @property
    def violations(self) -> np.ndarray:
        return np.flatnonzero(self.admissible & (self.excess > self.tol))

    @property
    def non_admissible(self) -> np.ndarray:
        return np.flatnonzero(~self.admissible)

    @property
    def ok(self) -> bool:
        return self.violations.size == 0 and self.non_admissible.size == 0


def verify_supersolution(data: ProblemData, f: SpectralFunction, u_sup, tol: float = 1e-8) -> SupersolutionReport:
    """Check F(U[ŭ]) <= ψ nodewise; nodes with λ outside Γ are reported separately."""
    grid = data.grid
    lam = eigenvalues_wrt_g(assemble_U(u_sup, data, check=False), grid)
    adm = cone_margin(lam, f.cone) > 0
    lam_g = eigenvalues_wrt_g(assemble_g(u_sup, data), grid)
    g_adm = cone_margin(mu_from_lambda(lam_g), f.cone) > 0
    excess = np.full(grid.size, np.nan)
    excess[adm] = f.value_unchecked(lam[adm]) - data.psi[adm]
    bnd = grid.boundary
    berr = float(np.max(np.abs(np.asarray(u_sup)[bnd] - data.phi[bnd])))
    return SupersolutionReport(adm, g_adm, excess, berr, tol)


@dataclass
class OrderingReport:
    lower_gap: np.ndarray  # u̲ - u
    upper_gap: np.ndarray  # u - w
    tol: float

    @property
    def max_lower_violation(self) -> float:
        return float(np.max(self.lower_gap))

    @property
    def max_upper_violation(self) -> float:
        return float(np.max(self.upper_gap))

    @property
    def lower_violations(self) -> np.ndarray:
        return np.flatnonzero(self.lower_gap > self.tol)

    @property
    def upper_violations(self) -> np.ndarray:
        return np.flatnonzero(self.upper_gap > self.tol)

    @property
    def ok(self) -> bool:
        return self.lower_violations.size == 0 and self.upper_violations.size == 0


def ordering_check(u_sub, u, w, tol: float = 1e-6) -> OrderingReport:
    """Sandwich u̲ - tol <= u <= w + tol."""
    u_sub, u, w = (np.asarray(a, dtype=float) for a in (u_sub, u, w))
    return OrderingReport(u_sub - u, u - w, tol)
