"""Gårding cones, concave symmetric spectral functions and the eigenvalue transform.

All functions act on the trailing axis of their array arguments, so a whole
grid of eigenvalue vectors (shape ``(N, n)``) is handled in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np


class DomainError(ValueError):
    """Raised when a point lies outside (or too close to the boundary of) a cone."""


@dataclass(frozen=True)
class ConeSpec:
    """The Gårding cone Γ_k in R^n, characterised by σ_1 > 0, ..., σ_k > 0."""

    n: int
    k: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"cone dimension must be >= 2, got {self.n}")
        if not 1 <= self.k <= self.n:
            raise ValueError(f"Gamma_k needs 1 <= k <= n, got k={self.k}, n={self.n}")

    @property
    def name(self) -> str:
        return f"Gamma_{self.k}"


def elementary_symmetric(lam, kmax: int | None = None) -> np.ndarray:
    """Return σ_0(λ), ..., σ_kmax(λ) stacked on a new trailing axis."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    kmax = n if kmax is None else kmax
    e = np.zeros(lam.shape[:-1] + (kmax + 1,))
    e[..., 0] = 1.0
    for i in range(n):
        for j in range(min(i + 1, kmax), 0, -1):
            e[..., j] += lam[..., i] * e[..., j - 1]
    return e


def _sigma_deleted(lam: np.ndarray, kmax: int) -> np.ndarray:
    """σ_j(λ|i) for j = 0..kmax; result has shape (..., n, kmax + 1)."""
    n = lam.shape[-1]
    out = np.empty(lam.shape[:-1] + (n, kmax + 1))
    for i in range(n):
        out[..., i, :] = elementary_symmetric(np.delete(lam, i, axis=-1), kmax)
    return out


def cone_margin(lam, cone: ConeSpec) -> np.ndarray:
    """Degree-one homogeneous margin min_j sgn(s_j)|s_j|^(1/j), s_j = σ_j/C(n, j).

    Positive exactly on the open cone; equals c on the diagonal point (c, ..., c).
    """
    lam = np.asarray(lam, dtype=float)
    if lam.shape[-1] != cone.n:
        raise ValueError(f"expected vectors of length {cone.n}, got {lam.shape[-1]}")
    sig = elementary_symmetric(lam, cone.k)
    vals = []
    for j in range(1, cone.k + 1):
        s = sig[..., j] / comb(cone.n, j)
        vals.append(np.sign(s) * np.abs(s) ** (1.0 / j))
    return np.min(np.stack(vals, axis=-1), axis=-1)


def cone_contains(lam, cone: ConeSpec):
    """Membership of λ in the open cone, returned as ``(inside, margin)``."""
    margin = cone_margin(lam, cone)
    return margin > 0, margin


@dataclass(frozen=True)
class ConePoint:
    values: np.ndarray
    margin: float

    @classmethod
    def make(cls, values, cone: ConeSpec) -> "ConePoint":
        values = np.asarray(values, dtype=float)
        return cls(values, float(cone_margin(values, cone)))

    @property
    def inside(self) -> bool:
        return self.margin > 0


FAMILIES = ("sigma_k_root", "log_sigma_n", "quotient_root")


@dataclass(frozen=True)
class SpectralFunction:
    """One of the three supported concave symmetric functions and its cone.

    ``sigma_k_root``  f = σ_k^{1/k} on Γ_k
    ``log_sigma_n``   f = Σ log λ_i on Γ_n
    ``quotient_root`` f = (σ_k/σ_l)^{1/(k-l)} on Γ_k, 0 <= l < k
    """

    family: str
    n: int
    k: int = 0
    l: int = 0
    domain_tol: float = 0.0
    cone: ConeSpec = field(init=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        k = self.n if self.family == "log_sigma_n" else self.k
        if self.family == "log_sigma_n":
            object.__setattr__(self, "k", self.n)
        if not 1 <= k <= self.n:
            raise ValueError(f"need 1 <= k <= n, got k={k}")
        if self.family == "quotient_root" and not 0 <= self.l < k:
            raise ValueError(f"quotient_root needs 0 <= l < k, got l={self.l}, k={k}")
        object.__setattr__(self, "cone", ConeSpec(self.n, k))

    @classmethod
    def sigma_root(cls, n: int, k: int | None = None) -> "SpectralFunction":
        return cls("sigma_k_root", n, n if k is None else k)

    @property
    def boundary_sup(self) -> float:
        """sup over ∂Γ of f."""
        return -np.inf if self.family == "log_sigma_n" else 0.0

    @property
    def sup(self) -> float:
        """sup over Γ of f (all supported families are unbounded above)."""
        return np.inf

    @property
    def supports_degenerate(self) -> bool:
        return np.isfinite(self.boundary_sup)

    def _check(self, lam):
        lam = np.asarray(lam, dtype=float)
        if lam.shape[-1] != self.n:
            raise ValueError(f"expected vectors of length {self.n}, got {lam.shape[-1]}")
        margin = cone_margin(lam, self.cone)
        if np.any(margin <= self.domain_tol):
            raise DomainError(
                f"point outside {self.cone.name} (min margin {np.min(margin):.3e})"
            )
        return lam

    def value_unchecked(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        if self.family == "log_sigma_n":
            return np.sum(np.log(lam), axis=-1)
        sig = elementary_symmetric(lam, self.k)
        if self.family == "sigma_k_root":
            return sig[..., self.k] ** (1.0 / self.k)
        return (sig[..., self.k] / sig[..., self.l]) ** (1.0 / (self.k - self.l))

    def gradient_unchecked(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        if self.family == "log_sigma_n":
            return 1.0 / lam
        k = self.k
        sig = elementary_symmetric(lam, k)
        dele = _sigma_deleted(lam, k)
        if self.family == "sigma_k_root":
            sk = sig[..., k]
            return (sk ** (1.0 / k - 1.0) / k)[..., None] * dele[..., k - 1]
        l = self.l
        fval = (sig[..., k] / sig[..., l]) ** (1.0 / (k - l))
        dk = dele[..., k - 1] / sig[..., k][..., None]
        dl = dele[..., l - 1] / sig[..., l][..., None] if l > 0 else 0.0
        return (fval / (k - l))[..., None] * (dk - dl)

    def __call__(self, lam) -> np.ndarray:
        return self.value_unchecked(self._check(lam))

    def gradient(self, lam) -> np.ndarray:
        return self.gradient_unchecked(self._check(lam))


def eval_f(f: SpectralFunction, lam):
    return f(lam.values if isinstance(lam, ConePoint) else lam)


def grad_f(f: SpectralFunction, lam):
    return f.gradient(lam.values if isinstance(lam, ConePoint) else lam)


def mu_from_lambda(lam) -> np.ndarray:
    """μ_i = Σ_{j≠i} λ_j, i.e. μ = Qλ with Q = ones - identity."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape[-1] < 2:
        raise ValueError("transform needs n >= 2")
    return np.sum(lam, axis=-1, keepdims=True) - lam


def lambda_from_mu(mu) -> np.ndarray:
    """Inverse of :func:`mu_from_lambda`: λ_i = Σμ/(n-1) - μ_i."""
    mu = np.asarray(mu, dtype=float)
    n = mu.shape[-1]
    if n < 2:
        raise ValueError("transform needs n >= 2")
    return np.sum(mu, axis=-1, keepdims=True) / (n - 1) - mu


def transform_matrix(n: int) -> np.ndarray:
    return np.ones((n, n)) - np.eye(n)


def tilde_f_eval(f: SpectralFunction, lam):
    """f̃(λ) := f(Qλ); raises DomainError when Qλ leaves the cone of f."""
    return f(mu_from_lambda(lam))


def tilde_f_gradient(f: SpectralFunction, lam):
    # Q is symmetric, so ∇f̃(λ) = Q ∇f(Qλ)
    return mu_from_lambda(f.gradient(mu_from_lambda(lam)))


@dataclass
class StructureReport:
    samples: int
    gradient_violations: int = 0
    concavity_violations: int = 0
    pairing_violations: int = 0
    min_gradient: float = np.inf
    min_pairing: float = np.inf
    worst_concavity_gap: float = -np.inf

    @property
    def ok(self) -> bool:
        return not (self.gradient_violations or self.concavity_violations or self.pairing_violations)


def check_structure(f, lam, mu, tol: float = 1e-10, transformed: bool = False) -> StructureReport:
    """Ellipticity, midpoint concavity and Σ f_i(λ)μ_i > 0 on sample pairs.

    ``lam`` and ``mu`` are (m, n) arrays of cone points. With ``transformed``
    the checks run for f̃ on its cone Q⁻¹Γ instead of f.
    """
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    value = (lambda x: tilde_f_eval(f, x)) if transformed else f
    grad = (lambda x: tilde_f_gradient(f, x)) if transformed else f.gradient

    g = grad(lam)
    pair = np.sum(g * mu, axis=-1)
    mid = value(0.5 * (lam + mu))
    ends = 0.5 * (value(lam) + value(mu))
    scale = 1.0 + np.abs(ends)
    gap = (ends - mid) / scale  # > 0 means concavity violated

    rep = StructureReport(samples=len(lam))
    rep.gradient_violations = int(np.sum(np.any(g <= 0, axis=-1)))
    rep.pairing_violations = int(np.sum(pair <= 0))
    rep.concavity_violations = int(np.sum(gap > tol))
    rep.min_gradient = float(np.min(g))
    rep.min_pairing = float(np.min(pair))
    rep.worst_concavity_gap = float(np.max(gap))
    return rep


def gamma_infinity_contains(c: float, cone: ConeSpec, t_cap: float = 2.0**40) -> bool:
    """Whether (t, ..., t, c) lies in the cone for all large t."""
    if c > 0:
        return True
    t = 1.0
    while t <= t_cap:
        point = np.full(cone.n, t)
        point[-1] = c
        if cone_margin(point, cone) > 0:
            # (1, ..., 1, 0) lies in the closed cone, so membership persists for larger t
            return True
        t *= 2.0
    return False


def _classify_growth(values: np.ndarray, target: float) -> str:
    """Decide from f on a doubling schedule whether it tends to ``target``."""
    if not np.all(np.isfinite(values)):
        return "inconclusive"
    inc = np.diff(values)
    if np.any(inc < -1e-12 * (1 + np.abs(values[1:]))):
        return "violated"
    if np.isfinite(target):
        return "satisfied" if values[-1] >= target - 1e-9 * (1 + abs(target)) else "inconclusive"
    tail = inc[-8:]
    if np.all(tail > 0):
        ratios = tail[1:] / tail[:-1]
        if np.all(ratios >= 0.75):
            return "satisfied"
        if np.all(ratios <= 0.6):
            return "violated"
    elif np.all(tail <= 1e-14 * (1 + np.abs(values[-1]))):
        return "violated"
    return "inconclusive"


@dataclass
class UnboundedReport:
    unbound: list[str]
    unbound_strong: list[str]

    @staticmethod
    def _summary(verdicts):
        if all(v == "satisfied" for v in verdicts):
            return "satisfied"
        if any(v == "violated" for v in verdicts):
            return "violated"
        return "inconclusive"

    @property
    def unbound_verdict(self) -> str:
        return self._summary(self.unbound)

    @property
    def unbound_strong_verdict(self) -> str:
        return self._summary(self.unbound_strong)


def check_unbounded_conditions(f: SpectralFunction, samples, t_cap: float = 2.0**40) -> UnboundedReport:
    """Probe f(λ + t e_n) and f(λ + t(1, ..., 1, 0)) as t doubles up to ``t_cap``."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    ts = 2.0 ** np.arange(0, int(np.log2(t_cap)) + 1)
    e_n = np.zeros(f.n)
    e_n[-1] = 1.0
    tang = 1.0 - e_n
    rep = UnboundedReport([], [])
    for lam in samples:
        f(lam)  # domain check
        a = f.value_unchecked(lam[None, :] + ts[:, None] * e_n)
        b = f.value_unchecked(lam[None, :] + ts[:, None] * tang)
        rep.unbound.append(_classify_growth(a, f.sup))
        rep.unbound_strong.append(_classify_growth(b, f.sup))
    return rep
