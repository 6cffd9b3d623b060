"""Eigenvalue localisation for arrowhead matrices with a large diagonal shift.

For H = [[a + d_α on the diagonal, off in the last column], [off^T, d_n]] and
a at least :func:`growth_threshold`, the top n-1 eigenvalues stay within ε of
a + d_α and the remaining one within (n-1)ε of d_n.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STRICT_FACTOR = 1.0 - 1e-12


@dataclass(frozen=True)
class ArrowheadMatrix:
    a: float
    d: np.ndarray
    off: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        off = np.asarray(self.off, dtype=float)
        if d.ndim != 1 or off.shape != (len(d) - 1,):
            raise ValueError("need d of length n and off of length n-1")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "off", off)

    @property
    def n(self) -> int:
        return len(self.d)

    def matrix(self) -> np.ndarray:
        return arrowhead_matrices(np.array([self.a]), self.d[None], self.off[None])[0]


def arrowhead_matrices(a, d, off) -> np.ndarray:
    """Batched assembly: a (m,), d (m, n), off (m, n-1) -> (m, n, n)."""
    a = np.asarray(a, dtype=float)
    d = np.asarray(d, dtype=float)
    off = np.asarray(off, dtype=float)
    m, n = d.shape
    H = np.zeros((m, n, n))
    idx = np.arange(n - 1)
    H[:, idx, idx] = a[:, None] + d[:, :-1]
    H[:, -1, -1] = d[:, -1]
    H[:, idx, -1] = off
    H[:, -1, idx] = off
    return H


def growth_threshold(eps, off, d):
    """Right-hand side of the quadratic growth condition on the shift a.

    (2n-3)/ε Σ|off_i|² + (n-1) Σ|d_i| + (n-2)ε/(2n-3); batched over leading axes.
    """
    eps = np.asarray(eps, dtype=float)
    off = np.asarray(off, dtype=float)
    d = np.asarray(d, dtype=float)
    n = d.shape[-1]
    if n < 3:
        raise ValueError(f"lemma needs n >= 3, got {n}")
    if np.any(eps <= 0):
        raise ValueError("epsilon must be positive")
    q = 2 * n - 3
    return q / eps * np.sum(off**2, axis=-1) + (n - 1) * np.sum(np.abs(d), axis=-1) + (n - 2) * eps / q


class LemmaNotApplicable(ValueError):
    pass


@dataclass
class LocalizationReport:
    eigenvalues: np.ndarray  # (m, n) ascending
    tangential_gaps: np.ndarray  # (m, n-1) |a + d_α - λ_α| after sorted matching
    normal_gap: np.ndarray  # (m,) |d_n - λ_n|
    eps: np.ndarray

    @property
    def tangential_ok(self) -> np.ndarray:
        return np.all(self.tangential_gaps <= self.eps[:, None] * STRICT_FACTOR, axis=-1)

    @property
    def normal_ok(self) -> np.ndarray:
        n = self.eigenvalues.shape[-1]
        return self.normal_gap <= (n - 1) * self.eps * STRICT_FACTOR

    @property
    def ok(self) -> np.ndarray:
        return self.tangential_ok & self.normal_ok

    @property
    def all_ok(self) -> bool:
        return bool(np.all(self.ok))


def localize_batch(a, d, off, eps, check_growth: bool = True) -> LocalizationReport:
    a = np.asarray(a, dtype=float)
    d = np.asarray(d, dtype=float)
    off = np.asarray(off, dtype=float)
    eps = np.broadcast_to(np.asarray(eps, dtype=float), a.shape).copy()
    if check_growth:
        thr = growth_threshold(eps, off, d)
        bad = np.flatnonzero(a < thr)
        if bad.size:
            raise LemmaNotApplicable(
                f"growth condition violated for {bad.size} instance(s), first index {bad[0]}"
            )
    lam = np.linalg.eigvalsh(arrowhead_matrices(a, d, off))
    # under the growth condition the n-1 largest eigenvalues form the shifted cluster
    predicted = np.sort(a[:, None] + d[:, :-1], axis=-1)
    tang = np.abs(predicted - lam[:, 1:])
    normal = np.abs(d[:, -1] - lam[:, 0])
    return LocalizationReport(lam, tang, normal, eps)


def localize_eigenvalues(H: ArrowheadMatrix, eps: float) -> LocalizationReport:
    return localize_batch(np.array([H.a]), H.d[None], H.off[None], eps)


def random_instances(count: int, n_values, seed: int, margin: float = 1.01):
    """Reproducible random instances grouped by dimension.

    d and off are standard normal, ε is log-uniform on [1e-2, 10], and the
    shift is ``margin`` times the growth threshold.
    """
    rng = np.random.default_rng(seed)
    n_values = list(n_values)
    dims = rng.choice(n_values, size=count)
    out = []
    for n in n_values:
        m = int(np.sum(dims == n))
        if m == 0:
            continue
        d = rng.standard_normal((m, n))
        off = rng.standard_normal((m, n - 1))
        eps = 10.0 ** rng.uniform(-2, 1, size=m)
        a = margin * growth_threshold(eps, off, d)
        out.append((n, a, d, off, eps))
    return out


def sweep(count: int = 10_000, n_values=range(3, 9), seed: int = 7, margin: float = 1.01):
    """Run the randomized check; returns a list of per-instance row dicts."""
    rows = []
    for n, a, d, off, eps in random_instances(count, n_values, seed, margin):
        rep = localize_batch(a, d, off, eps)
        trace_err = np.abs(np.sum(rep.eigenvalues, axis=-1) - ((n - 1) * a + np.sum(d, axis=-1)))
        for i in range(len(a)):
            rows.append(
                {
                    "n": n,
                    "eps": eps[i],
                    "a": a[i],
                    "max_tangential_gap": rep.tangential_gaps[i].max(),
                    "normal_gap": rep.normal_gap[i],
                    "trace_error": trace_err[i],
                    "ok": bool(rep.ok[i]),
                }
            )
    return rows
