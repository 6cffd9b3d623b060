"""Assembly of 𝔤[u] = χ + ∇²u + W(du) and U[u] = A + (Δu)g - ∇²u + Z(du).

Both tensors are affine in u. The linear parts are kept as sparse matrices
per upper-triangle component so that residuals and Newton Jacobians share
one discretisation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .manifold import BoundaryPatch, ProductGrid


class ConsistencyError(RuntimeError):
    pass


@dataclass(frozen=True)
class EtaTensor:
    """The (1,2) tensor η with η^k_ij = η^k_ji.

    ``zero`` and ``zeta_form`` (η^k_ij = δ_ik ζ_j + δ_jk ζ_i) are the supported
    kinds; ``components`` takes an explicit (N, n, n, n) array and exists for
    negative controls.
    """

    kind: str = "zero"
    zeta: object = None
    values: np.ndarray | None = None

    @classmethod
    def zero(cls) -> "EtaTensor":
        return cls("zero")

    @classmethod
    def zeta_form(cls, zeta) -> "EtaTensor":
        return cls("zeta_form", zeta=zeta)

    @classmethod
    def from_components(cls, values) -> "EtaTensor":
        values = np.asarray(values, dtype=float)
        if not np.allclose(values, values.swapaxes(-1, -2)):
            raise ValueError("η must be symmetric in its lower indices")
        return cls("components", values=values)

    def zeta_values(self, grid: ProductGrid) -> np.ndarray:
        z = self.zeta(*grid.coords) if callable(self.zeta) else self.zeta
        z = np.asarray(z, dtype=float)
        if z.shape == (grid.n, grid.size):
            z = z.T
        return np.broadcast_to(z, (grid.size, grid.n))

    def components(self, grid: ProductGrid) -> np.ndarray:
        n, N = grid.n, grid.size
        if self.kind == "zero":
            return np.zeros((N, n, n, n))
        if self.kind == "components":
            return np.broadcast_to(self.values, (N, n, n, n))
        if self.kind != "zeta_form":
            raise ValueError(f"unknown η kind {self.kind!r}")
        z = self.zeta_values(grid)
        eye = np.eye(n)
        return np.einsum("ki,pj->pkij", eye, z) + np.einsum("kj,pi->pkij", eye, z)


def _constant_tensor(grid: ProductGrid, A) -> np.ndarray:
    if A is None:
        return np.zeros((grid.size, grid.n, grid.n))
    if callable(A):
        A = A(*grid.coords)
    A = np.asarray(A, dtype=float)
    A = np.broadcast_to(A, (grid.size, grid.n, grid.n)).copy()
    if not np.allclose(A, A.transpose(0, 2, 1)):
        raise ValueError("A must be symmetric")
    return 0.5 * (A + A.transpose(0, 2, 1))


def _node_values(grid: ProductGrid, v) -> np.ndarray:
    if callable(v):
        v = v(*grid.coords)
    return np.broadcast_to(np.asarray(v, dtype=float), (grid.size,)).copy()


def trace_g(grid: ProductGrid, T) -> np.ndarray:
    return np.einsum("pij,pij->p", grid.metric_inv, T)


@dataclass
class ProblemData:
    """Data of the Dirichlet problem f(λ(U[u])) = ψ in M, u = φ on ∂M.

    ``phi`` holds the boundary values (entries at interior nodes are ignored);
    scalars, node arrays or callables of the coordinates are accepted for
    ``A``, ``psi`` and ``phi``.
    """

    grid: ProductGrid
    A: np.ndarray = None
    eta: EtaTensor = field(default_factory=EtaTensor.zero)
    psi: np.ndarray = 0.0
    phi: np.ndarray = 0.0

    def __post_init__(self):
        self.A = _constant_tensor(self.grid, self.A)
        self.psi = _node_values(self.grid, self.psi)
        self.phi = _node_values(self.grid, self.phi)

    @property
    def n(self) -> int:
        return self.grid.n

    @cached_property
    def chi(self) -> np.ndarray:
        """χ = (tr_g A) g / (n-1) - A."""
        trA = trace_g(self.grid, self.A)
        return trA[:, None, None] * self.grid.metric / (self.n - 1) - self.A

    @cached_property
    def assembly(self) -> "OperatorAssembly":
        return OperatorAssembly(self.grid, self.eta)

    def with_boundary(self, u) -> np.ndarray:
        """Copy of u with the Dirichlet values imposed."""
        u = np.array(u, dtype=float)
        b = self.grid.boundary
        u[b] = self.phi[b]
        return u

    def linear_extension(self) -> np.ndarray:
        """w̄ = (1 - x_n) φ|_{x_n=0} + x_n φ|_{x_n=1}, constant along normal lines."""
        grid = self.grid
        shape = grid.shape
        ph = self.phi.reshape(shape)
        xn = grid.coords[-1].reshape(shape)
        w = (1.0 - xn) * ph[..., :1] + xn * ph[..., -1:]
        return w.ravel()


class OperatorAssembly:
    """Sparse linear parts of 𝔤[u] and U[u], one matrix per component i <= j."""

    def __init__(self, grid: ProductGrid, eta: EtaTensor):
        self.grid = grid
        self.eta = eta
        n = grid.n
        eta_c = eta.components(grid)
        self.eta_values = eta_c
        self.W = {}
        for i in range(n):
            for j in range(i, n):
                op = sp.csr_matrix((grid.size, grid.size))
                for k in range(n):
                    c = eta_c[:, k, i, j]
                    if np.any(c):
                        op = op + sp.diags(c) @ grid.d1[k]
                self.W[i, j] = op.tocsr()
        ginv = grid.metric_inv
        trW = sp.csr_matrix((grid.size, grid.size))
        for (i, j), op in self.W.items():
            w = ginv[:, i, j] * (1.0 if i == j else 2.0)
            if op.nnz and np.any(w):
                trW = trW + sp.diags(w) @ op
        self.trace_W = trW.tocsr()
        self.G = {key: (grid.hessian_ops[key] + self.W[key]).tocsr() for key in self.W}
        #: linear map u -> tr_g 𝔤[u] - tr_g χ
        self.trace_G = (grid.laplacian_op + self.trace_W).tocsr()
        g = grid.metric
        self.U = {}
        for (i, j), Gop in self.G.items():
            op = -Gop
            if np.any(g[:, i, j]):
                op = op + sp.diags(g[:, i, j]) @ self.trace_G
            self.U[i, j] = op.tocsr()


def assemble_g(u, data: ProblemData) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return data.chi + data.grid.sym_from_ops(data.assembly.G, u)


def assemble_U(u, data: ProblemData, check: bool = True, tol: float = 1e-10) -> np.ndarray:
    """U[u], optionally asserting U = (tr_g 𝔤)g - 𝔤 nodewise."""
    u = np.asarray(u, dtype=float)
    U = data.A + data.grid.sym_from_ops(data.assembly.U, u)
    if check:
        G = assemble_g(u, data)
        alt = trace_g(data.grid, G)[:, None, None] * data.grid.metric - G
        err = np.max(np.abs(U - alt))
        scale = 1.0 + np.max(np.abs(U))
        if err > tol * scale:
            raise ConsistencyError(f"U[u] != (tr 𝔤)g - 𝔤: max deviation {err:.3e}")
    return U


def assemble_W(u, data: ProblemData) -> np.ndarray:
    return data.grid.sym_from_ops(data.assembly.W, np.asarray(u, dtype=float))


def _metric_factor(grid: ProductGrid, nodes=None):
    g = grid.metric if nodes is None else grid.metric[nodes]
    L = np.linalg.cholesky(g)
    return np.linalg.inv(L)


def eigenvalues_wrt_g(T, grid: ProductGrid, nodes=None) -> np.ndarray:
    """Ascending eigenvalues of T v = λ g v at each node."""
    Linv = _metric_factor(grid, nodes)
    S = Linv @ T @ Linv.transpose(0, 2, 1)
    return np.linalg.eigvalsh(0.5 * (S + S.transpose(0, 2, 1)))


def eigh_wrt_g(T, grid: ProductGrid, nodes=None):
    """Eigenvalues and g-orthonormal eigenvectors (columns, coordinate components)."""
    Linv = _metric_factor(grid, nodes)
    S = Linv @ T @ Linv.transpose(0, 2, 1)
    lam, Y = np.linalg.eigh(0.5 * (S + S.transpose(0, 2, 1)))
    return lam, Linv.transpose(0, 2, 1) @ Y


def frame_components(T, patch: BoundaryPatch) -> np.ndarray:
    """T(E_a, E_b) in the boundary basis (e_1, ..., e_{n-1}, ν)."""
    E = patch.basis
    return np.einsum("bai,bij,bcj->bac", E, T, E)


@dataclass
class EtaReport:
    max_abs: float
    per_node: np.ndarray

    @property
    def ok(self) -> bool:
        return self.max_abs <= 1e-12


def check_eta_hypothesis(data: ProblemData, patches) -> EtaReport:
    """max over boundary nodes and k of |Σ_{i≠k} η^k_ii| in the orthonormal frame."""
    if isinstance(patches, BoundaryPatch):
        patches = (patches,)
    vals = []
    eta = data.assembly.eta_values
    for patch in patches:
        E = patch.basis  # rows are frame vectors
        Einv = np.linalg.inv(E)
        ef = np.einsum("bkc,bai,bdj,bkij->bcad", Einv, E, E, eta[patch.nodes])
        n = data.n
        sums = np.zeros((len(patch.nodes), n))
        for k in range(n):
            for i in range(n):
                if i != k:
                    sums[:, k] += ef[:, k, i, i]
        vals.append(np.max(np.abs(sums), axis=1))
    per = np.concatenate(vals)
    return EtaReport(float(per.max()), per)
