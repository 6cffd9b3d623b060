"""Discrete geometry of the warped slab M = T^{n-1} x [0, 1], g = e^φ g_X + dx_n².

The first n-1 axes are periodic with period 1, the last axis is bounded and
carries the two boundary faces. Scalar fields are flat arrays of length
``grid.size`` in C order over ``grid.shape``; tensor fields have trailing
``(n, n)`` axes.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class GridError(ValueError):
    pass


def _first_periodic(m: int, h: float) -> sp.csr_matrix:
    D = sp.lil_matrix((m, m))
    for i in range(m):
        D[i, (i + 1) % m] += 0.5 / h
        D[i, (i - 1) % m] -= 0.5 / h
    return D.tocsr()


def _second_periodic(m: int, h: float) -> sp.csr_matrix:
    D = sp.lil_matrix((m, m))
    for i in range(m):
        D[i, (i + 1) % m] += 1.0 / h**2
        D[i, i] -= 2.0 / h**2
        D[i, (i - 1) % m] += 1.0 / h**2
    return D.tocsr()


def _first_bounded(m: int, h: float) -> sp.csr_matrix:
    D = sp.lil_matrix((m, m))
    for i in range(1, m - 1):
        D[i, i + 1] = 0.5 / h
        D[i, i - 1] = -0.5 / h
    D[0, 0:3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    D[m - 1, m - 3 :] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    return D.tocsr()


def _second_bounded(m: int, h: float) -> sp.csr_matrix:
    D = sp.lil_matrix((m, m))
    for i in range(1, m - 1):
        D[i, i - 1 : i + 2] = np.array([1.0, -2.0, 1.0]) / h**2
    D[0, 0:4] = np.array([2.0, -5.0, 4.0, -1.0]) / h**2
    D[m - 1, m - 4 :] = np.array([-1.0, 4.0, -5.0, 2.0]) / h**2
    return D.tocsr()


def warped_metric(warp, warp_gradient):
    """g = diag(e^φ, ..., e^φ, 1) and dg[p, l, i, j] = ∂_l g_ij from φ and ∂φ."""
    N, n = warp_gradient.shape
    g = np.zeros((N, n, n))
    dg = np.zeros((N, n, n, n))
    ew = np.exp(warp)
    for a in range(n - 1):
        g[:, a, a] = ew
        dg[:, :, a, a] = ew[:, None] * warp_gradient
    g[:, -1, -1] = 1.0
    return g, dg


def christoffel_from_metric(metric_inv, dg) -> np.ndarray:
    """Γ[p, k, i, j] = Γ^k_ij from g^{-1} and dg[p, l, i, j] = ∂_l g_ij."""
    # comb[p, i, j, m] = ∂_i g_jm + ∂_j g_im - ∂_m g_ij
    comb = dg + dg.transpose(0, 2, 1, 3) - dg.transpose(0, 2, 3, 1)
    gam = 0.5 * np.einsum("pkm,pijm->pkij", metric_inv, comb)
    return 0.5 * (gam + gam.transpose(0, 1, 3, 2))


class ProductGrid:
    """Structured grid on the warped slab.

    ``shape`` is the storage shape: periodic axes hold ``shape[a]`` distinct
    nodes at spacing ``1/shape[a]``, the bounded axis holds ``shape[-1]``
    nodes including both faces at spacing ``1/(shape[-1]-1)``. ``warp`` is a
    callable of the coordinate arrays, an array of node values, or None.
    """

    def __init__(self, n: int, shape, warp=None):
        shape = tuple(int(s) for s in shape)
        if n < 2 or len(shape) != n:
            raise GridError(f"need n >= 2 and a shape of length n, got n={n}, shape={shape}")
        if shape[-1] < 5:
            raise GridError("bounded axis needs at least 5 nodes for the one-sided stencils")
        if min(shape[:-1]) < 3:
            raise GridError("periodic axes need at least 3 nodes")
        self.n = n
        self.shape = shape
        self.size = int(np.prod(shape))
        self.spacing = tuple(1.0 / s for s in shape[:-1]) + (1.0 / (shape[-1] - 1),)
        axes = [np.arange(s) * h for s, h in zip(shape, self.spacing)]
        mesh = np.meshgrid(*axes, indexing="ij")
        self.coords = np.stack([m.ravel() for m in mesh])  # (n, N)
        if warp is None:
            w = np.zeros(self.size)
        elif callable(warp):
            w = np.broadcast_to(np.asarray(warp(*self.coords), dtype=float), (self.size,)).copy()
        else:
            w = np.asarray(warp, dtype=float).ravel().copy()
            if w.shape != (self.size,):
                raise GridError("warp array does not match grid size")
        w.setflags(write=False)
        self.warp = w

    @classmethod
    def uniform(cls, n: int, nodes: int, warp=None) -> "ProductGrid":
        """Grid with ``nodes`` points per unit interval on every axis (h = 1/(nodes-1)).

        On the periodic axes the endpoint coincides with 0 and is not stored.
        """
        return cls(n, (nodes - 1,) * (n - 1) + (nodes,), warp)

    # ------------------------------------------------------------------ layout
    @property
    def h(self) -> float:
        return max(self.spacing)

    @cached_property
    def normal_index(self) -> np.ndarray:
        return np.unravel_index(np.arange(self.size), self.shape)[-1]

    @cached_property
    def bottom(self) -> np.ndarray:
        return np.flatnonzero(self.normal_index == 0)

    @cached_property
    def top(self) -> np.ndarray:
        return np.flatnonzero(self.normal_index == self.shape[-1] - 1)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.size, dtype=bool)
        m[self.bottom] = True
        m[self.top] = True
        return m

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    @property
    def is_flat(self) -> bool:
        return not np.any(self.warp)

    def node(self, *index) -> int:
        return int(np.ravel_multi_index(index, self.shape))

    # ----------------------------------------------------------- FD operators
    def _along(self, axis: int, mat: sp.spmatrix) -> sp.csr_matrix:
        before = int(np.prod(self.shape[:axis]))
        after = int(np.prod(self.shape[axis + 1 :]))
        return sp.kron(sp.kron(sp.identity(before), mat), sp.identity(after)).tocsr()

    @cached_property
    def d1(self) -> list[sp.csr_matrix]:
        ops = []
        for k, (m, h) in enumerate(zip(self.shape, self.spacing)):
            mat = _first_bounded(m, h) if k == self.n - 1 else _first_periodic(m, h)
            ops.append(self._along(k, mat))
        return ops

    @cached_property
    def d2(self) -> dict[tuple[int, int], sp.csr_matrix]:
        ops = {}
        for k, (m, h) in enumerate(zip(self.shape, self.spacing)):
            mat = _second_bounded(m, h) if k == self.n - 1 else _second_periodic(m, h)
            ops[k, k] = self._along(k, mat)
        for k in range(self.n):
            for l in range(k + 1, self.n):
                ops[k, l] = (self.d1[k] @ self.d1[l]).tocsr()
        return ops

    def gradient(self, u) -> np.ndarray:
        """Coordinate partial derivatives, shape (N, n)."""
        u = np.asarray(u, dtype=float)
        return np.stack([D @ u for D in self.d1], axis=-1)

    # ---------------------------------------------------------------- metric
    @cached_property
    def warp_gradient(self) -> np.ndarray:
        return self.gradient(self.warp)

    @cached_property
    def metric(self) -> np.ndarray:
        return warped_metric(self.warp, self.warp_gradient)[0]

    @cached_property
    def metric_inv(self) -> np.ndarray:
        return np.linalg.inv(self.metric)

    @cached_property
    def metric_derivative(self) -> np.ndarray:
        """dg[p, l, i, j] = ∂_l g_ij, from the analytic form with FD derivatives of φ."""
        return warped_metric(self.warp, self.warp_gradient)[1]

    @cached_property
    def christoffel(self) -> np.ndarray:
        """Γ[p, k, i, j] = Γ^k_ij (symmetric in i, j)."""
        return christoffel_from_metric(self.metric_inv, self.metric_derivative)

    @cached_property
    def hessian_ops(self) -> dict[tuple[int, int], sp.csr_matrix]:
        """Sparse maps u -> (∇²u)_ij = ∂_ij u - Γ^k_ij ∂_k u for i <= j."""
        gam = self.christoffel
        ops = {}
        for i in range(self.n):
            for j in range(i, self.n):
                op = self.d2[i, j]
                for k in range(self.n):
                    c = gam[:, k, i, j]
                    if np.any(c):
                        op = op - sp.diags(c) @ self.d1[k]
                ops[i, j] = op.tocsr()
        return ops

    @cached_property
    def laplacian_op(self) -> sp.csr_matrix:
        ginv = self.metric_inv
        op = sp.csr_matrix((self.size, self.size))
        for (i, j), H in self.hessian_ops.items():
            w = ginv[:, i, j] * (1.0 if i == j else 2.0)
            if np.any(w):
                op = op + sp.diags(w) @ H
        return op.tocsr()

    def sym_from_ops(self, ops, u) -> np.ndarray:
        T = np.empty((self.size, self.n, self.n))
        for (i, j), op in ops.items():
            v = op @ u
            T[:, i, j] = v
            T[:, j, i] = v
        return T


@dataclass(frozen=True)
class ChristoffelField:
    values: np.ndarray  # (N, n, n, n), values[p, k, i, j] = Γ^k_ij


def christoffels(grid: ProductGrid) -> ChristoffelField:
    return ChristoffelField(grid.christoffel)


def covariant_hessian(grid: ProductGrid, u) -> np.ndarray:
    return grid.sym_from_ops(grid.hessian_ops, np.asarray(u, dtype=float))


def laplacian(grid: ProductGrid, u) -> np.ndarray:
    return grid.laplacian_op @ np.asarray(u, dtype=float)


def gradient_norm(grid: ProductGrid, u) -> np.ndarray:
    du = grid.gradient(u)
    return np.sqrt(np.einsum("pi,pij,pj->p", du, grid.metric_inv, du))


# ------------------------------------------------------------------ boundary
@dataclass(frozen=True)
class BoundaryPatch:
    """One boundary face with its inner normal, orthonormal frame and curvature.

    ``frame[b, α]`` and ``normal[b]`` are coordinate-component vectors; the
    second fundamental form is II(X, Y) = g(∇_X Y, ν), which is the form taken
    with respect to -ν, so mean concavity reads H <= 0.
    """

    side: int  # 0 for x_n = 0, 1 for x_n = 1
    nodes: np.ndarray
    normal: np.ndarray  # (B, n)
    frame: np.ndarray  # (B, n-1, n)
    second_form: np.ndarray  # (B, n-1, n-1)
    mean_curvature: np.ndarray  # (B,)

    @property
    def basis(self) -> np.ndarray:
        """(B, n, n) with rows e_1, ..., e_{n-1}, ν."""
        return np.concatenate([self.frame, self.normal[:, None, :]], axis=1)


def _patch(grid: ProductGrid, side: int) -> BoundaryPatch:
    nodes = grid.bottom if side == 0 else grid.top
    n = grid.n
    g = grid.metric[nodes]
    ginv = grid.metric_inv[nodes]
    # inner normal: ±grad x_n, normalised
    sign = 1.0 if side == 0 else -1.0
    nu = sign * ginv[:, :, -1]
    nu /= np.sqrt(np.einsum("bi,bij,bj->b", nu, g, nu))[:, None]
    # orthonormal tangent frame from the coordinate fields ∂_1..∂_{n-1}
    L = np.linalg.cholesky(g[:, :-1, :-1])
    Linv = np.linalg.inv(L)
    frame = np.zeros((len(nodes), n - 1, n))
    frame[:, :, :-1] = Linv  # rows of L^{-1}: e_α = Σ_β (L^{-1})_{αβ} ∂_β
    gam = grid.christoffel[nodes]
    nu_low = np.einsum("bkm,bm->bk", g, nu)
    gam_nu = np.einsum("bkij,bk->bij", gam, nu_low)
    II = np.einsum("bai,bij,bcj->bac", frame, gam_nu, frame)
    II = 0.5 * (II + II.transpose(0, 2, 1))
    H = np.trace(II, axis1=1, axis2=2)
    return BoundaryPatch(side, nodes, nu, frame, II, H)


def boundary_geometry(grid: ProductGrid) -> tuple[BoundaryPatch, BoundaryPatch]:
    """Patches for the faces x_n = 0 and x_n = 1."""
    return _patch(grid, 0), _patch(grid, 1)


@dataclass
class ConcavityReport:
    max_mean_curvature: float
    max_second_form_eig: float
    mean_concave_violations: np.ndarray  # boundary node indices with H > tol
    concave_violations: np.ndarray
    orthonormality_residual: float

    @property
    def mean_concave(self) -> bool:
        return self.mean_concave_violations.size == 0

    @property
    def concave(self) -> bool:
        return self.concave_violations.size == 0


def frame_residual(grid: ProductGrid, patch: BoundaryPatch) -> float:
    E = patch.basis
    G = np.einsum("bai,bij,bcj->bac", E, grid.metric[patch.nodes], E)
    return float(np.max(np.abs(G - np.eye(grid.n))))


def check_mean_concave(patches, grid: ProductGrid | None = None, tol: float = 1e-8) -> ConcavityReport:
    if isinstance(patches, BoundaryPatch):
        patches = (patches,)
    H = np.concatenate([p.mean_curvature for p in patches])
    eig = np.concatenate([np.linalg.eigvalsh(p.second_form)[:, -1] for p in patches])
    nodes = np.concatenate([p.nodes for p in patches])
    resid = max(frame_residual(grid, p) for p in patches) if grid is not None else np.nan
    return ConcavityReport(
        float(H.max()),
        float(eig.max()),
        nodes[H > tol],
        nodes[eig > tol],
        resid,
    )


# ----------------------------------------------------------------- distances
def boundary_distance(grid: ProductGrid) -> np.ndarray:
    """Distance to ∂M. Exact for every warp: g >= dx_n² and vertical lines are minimising."""
    xn = grid.coords[-1]
    return np.minimum(xn, 1.0 - xn)


def _torus_delta(grid: ProductGrid, x0: int) -> np.ndarray:
    d = grid.coords - grid.coords[:, [x0]]
    d[:-1] -= np.round(d[:-1])
    return d


def fast_marching(grid: ProductGrid, source: int) -> np.ndarray:
    """First-order fast marching for |∇T|_g = 1 on the diagonal warped metric."""
    n, shape = grid.n, grid.shape
    # effective spacing per axis at each node: h_k sqrt(g_kk)
    eff = np.stack([grid.spacing[k] * np.sqrt(grid.metric[:, k, k]) for k in range(n)], axis=-1)
    T = np.full(grid.size, np.inf)
    state = np.zeros(grid.size, dtype=np.int8)  # 0 far, 1 trial, 2 accepted
    multi = np.array(np.unravel_index(np.arange(grid.size), shape)).T
    T[source] = 0.0
    heap = [(0.0, source)]
    state[source] = 1

    def neighbours(p):
        idx = multi[p]
        for k in range(n):
            for step in (-1, 1):
                j = idx.copy()
                j[k] += step
                if k < n - 1:
                    j[k] %= shape[k]
                elif not 0 <= j[k] < shape[k]:
                    continue
                yield k, int(np.ravel_multi_index(tuple(j), shape))

    def solve(p):
        best = [np.inf] * n
        for k, q in neighbours(p):
            if state[q] == 2 and T[q] < best[k]:
                best[k] = T[q]
        terms = sorted((best[k], eff[p, k]) for k in range(n) if np.isfinite(best[k]))
        val = np.inf
        a = b = c = 0.0
        for tk, hk in terms:
            if tk >= val:
                break
            w = 1.0 / hk**2
            a += w
            b += -2.0 * w * tk
            c += w * tk**2
            disc = b * b - 4 * a * (c - 1.0)
            val = (-b + np.sqrt(max(disc, 0.0))) / (2 * a)
        return val

    while heap:
        t, p = heapq.heappop(heap)
        if state[p] == 2 or t > T[p]:
            continue
        state[p] = 2
        for _, q in neighbours(p):
            if state[q] == 2:
                continue
            cand = solve(q)
            if cand < T[q]:
                T[q] = cand
                state[q] = 1
                heapq.heappush(heap, (cand, q))
    return T


def distance_fields(grid: ProductGrid, x0: int):
    """(σ, ρ): distance to the boundary and to the boundary node ``x0``."""
    if not grid.boundary_mask[x0]:
        raise GridError(f"node {x0} is not on the boundary")
    sigma = boundary_distance(grid)
    if grid.is_flat:
        rho = np.sqrt(np.sum(_torus_delta(grid, x0) ** 2, axis=0))
    else:
        rho = fast_marching(grid, x0)
    return sigma, rho
