import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from degenell.expressions import Expression
from degenell.manifold import (
    GridError,
    ProductGrid,
    boundary_geometry,
    check_mean_concave,
    christoffels,
    covariant_hessian,
    distance_fields,
    frame_residual,
    gradient_norm,
    laplacian,
)
from oracles import christoffel_oracle, seam_free


class TestGrid:
    def test_too_coarse(self):
        with pytest.raises(GridError):
            ProductGrid(3, (8, 8, 4))

    def test_layout(self):
        g = ProductGrid.uniform(3, 9)
        assert g.shape == (8, 8, 9) and g.h == pytest.approx(1 / 8)
        assert g.bottom.size == g.top.size == 64
        assert np.all(g.coords[-1][g.top] == 1.0)


class TestFlat:
    def test_christoffels_vanish(self):
        assert np.all(christoffels(ProductGrid.uniform(3, 9)).values == 0)

    def test_quadratic_hessian_is_identity(self):
        g = ProductGrid.uniform(3, 9)
        u = 0.5 * np.sum(g.coords**2, axis=0)
        H = covariant_hessian(g, u)
        m = seam_free(g)
        assert np.allclose(H[m], np.eye(3), atol=1e-11)
        assert np.allclose(laplacian(g, u)[m], 3.0, atol=1e-11)

    def test_normal_quadratic_exact_everywhere(self):
        g = ProductGrid.uniform(4, 7)
        u = 0.5 * g.coords[-1] ** 2
        H = covariant_hessian(g, u)
        expected = np.zeros((4, 4))
        expected[-1, -1] = 1
        assert np.allclose(H, expected, atol=1e-10)

    def test_bilinear_mixed_entry(self):
        g = ProductGrid.uniform(3, 9)
        H = covariant_hessian(g, g.coords[0] * g.coords[1])
        m = seam_free(g)
        expected = np.zeros((3, 3))
        expected[0, 1] = expected[1, 0] = 1
        assert np.allclose(H[m], expected, atol=1e-11)

    def test_boundary_curvature_exactly_zero(self):
        g = ProductGrid.uniform(3, 9)
        for p in boundary_geometry(g):
            assert np.all(p.second_form == 0) and np.all(p.mean_curvature == 0)
        rep = check_mean_concave(boundary_geometry(g), g)
        assert rep.mean_concave and rep.concave

    def test_distance_to_boundary(self):
        g = ProductGrid.uniform(3, 9)
        sigma, _ = distance_fields(g, g.bottom[0])
        assert np.array_equal(sigma, np.minimum(g.coords[-1], 1 - g.coords[-1]))

    def test_rho_euclidean_with_wrap(self):
        g = ProductGrid.uniform(3, 9)
        x0 = g.node(0, 0, 0)
        _, rho = distance_fields(g, x0)
        assert rho[g.node(1, 0, 0)] == pytest.approx(0.125)
        assert rho[g.node(7, 0, 0)] == pytest.approx(0.125)  # wraps around x1 = 1
        assert rho[g.node(2, 6, 4)] == pytest.approx(np.sqrt(0.25**2 + 0.25**2 + 0.5**2))

    def test_x0_must_be_on_boundary(self):
        g = ProductGrid.uniform(3, 9)
        with pytest.raises(GridError):
            distance_fields(g, g.node(0, 0, 4))


WARP_TEXT = "0.3*x3 + 0.2*sin(2*pi*x1)*x3^2"


class TestWarped:
    def test_christoffels_match_case_formulas(self):
        g = ProductGrid.uniform(3, 9, Expression(WARP_TEXT, 3))
        gam = christoffels(g).values
        assert np.allclose(gam, christoffel_oracle(g.warp_gradient, g.warp), atol=1e-12)
        assert np.array_equal(gam, gam.transpose(0, 1, 3, 2))

    def test_christoffels_converge_to_analytic(self):
        w = Expression(WARP_TEXT, 3)
        errs = []
        for m in (9, 17):
            g = ProductGrid.uniform(3, m, w)
            dw = np.stack([w.derivative(i)(*g.coords) for i in range(3)], axis=-1)
            errs.append(np.max(np.abs(christoffels(g).values - christoffel_oracle(dw, g.warp))))
        assert 3.0 < errs[0] / errs[1] < 5.0

    def test_hessian_second_order(self):
        w = Expression("x3", 3)
        u = Expression("sin(2*pi*x1)*cos(2*pi*x2)*exp(x3) + x3^3", 3)
        errs = []
        for m in (17, 33):
            g = ProductGrid.uniform(3, m, w)
            X = g.coords
            du = np.stack([u.derivative(i)(*X) for i in range(3)], axis=-1)
            exact = np.empty((g.size, 3, 3))
            for i in range(3):
                for j in range(3):
                    exact[:, i, j] = u.derivative(i, j)(*X)
            dw = np.stack([w.derivative(i)(*X) for i in range(3)], axis=-1)
            exact -= np.einsum("pkij,pk->pij", christoffel_oracle(dw, g.warp), du)
            errs.append(np.max(np.abs(covariant_hessian(g, u(*X)) - exact)))
        assert 3.2 < errs[0] / errs[1] < 4.8

    def test_hessian_symmetric(self):
        g = ProductGrid.uniform(3, 9, Expression(WARP_TEXT, 3))
        H = covariant_hessian(g, np.random.default_rng(0).standard_normal(g.size))
        assert np.max(np.abs(H - H.transpose(0, 2, 1))) <= 1e-12

    def test_frame_orthonormal(self):
        g = ProductGrid.uniform(3, 9, Expression(WARP_TEXT, 3))
        for p in boundary_geometry(g):
            assert frame_residual(g, p) < 1e-10

    def test_concave_when_warp_increases_inward(self):
        # φ = -(x3 - 1/2)^2 (1 + 0.3 sin 2πx1): ∇_ν φ >= 0 on both faces
        text = "-(x3 - 0.5)^2*(1 + 0.3*sin(2*pi*x1))"
        w = Expression(text, 3)
        g = ProductGrid.uniform(3, 17, w)
        patches = boundary_geometry(g)
        rep = check_mean_concave(patches, g)
        assert rep.concave and rep.mean_concave
        assert rep.max_second_form_eig <= 1e-8
        # oracle: II = -1/2 ∂_ν g restricted to the face, in the orthonormal frame
        dn = w.derivative(2)(*g.coords)
        for p in patches:
            sign = 1.0 if p.side == 0 else -1.0
            expected = -0.5 * sign * dn[p.nodes]
            assert np.allclose(p.second_form, expected[:, None, None] * np.eye(2), atol=0.02)
            assert np.allclose(p.mean_curvature, 2 * expected, atol=0.04)

    def test_second_form_oracle_converges(self):
        w = Expression("0.4*exp(-2*x3)*(1 + 0.3*sin(2*pi*x1))", 3)
        errs = []
        for m in (9, 17, 33):
            g = ProductGrid.uniform(3, m, w)
            dn = w.derivative(2)(*g.coords)
            p = boundary_geometry(g)[0]
            errs.append(np.max(np.abs(p.second_form - (-0.5 * dn[p.nodes])[:, None, None] * np.eye(2))))
        assert errs[2] < errs[1] < errs[0]
        assert errs[1] / errs[2] > 3.0

    def test_mean_concave_fails_where_warp_decreases_inward(self):
        w = Expression("(x3 - 0.5)^2", 3)  # ∇_ν φ = -1 on both faces
        g = ProductGrid.uniform(3, 9, w)
        rep = check_mean_concave(boundary_geometry(g), g)
        assert not rep.mean_concave and not rep.concave
        assert rep.mean_concave_violations.size == g.bottom.size + g.top.size

    def test_mean_concave_violations_localised(self):
        # ∇_ν φ has the sign of sin(2πx1) on the bottom face
        w = Expression("0.2*sin(2*pi*x1)*x3*(1 - x3)", 3)
        g = ProductGrid.uniform(3, 9, w)
        bottom = boundary_geometry(g)[0]
        rep = check_mean_concave(bottom, g)
        x1 = g.coords[0][rep.mean_concave_violations]
        assert rep.mean_concave_violations.size > 0
        assert np.all(np.sin(2 * np.pi * x1) < 0)

    def test_gradient_of_sigma_on_collar(self):
        g = ProductGrid.uniform(3, 17, Expression(WARP_TEXT, 3))
        sigma, _ = distance_fields(g, g.bottom[0])
        collar = (g.coords[-1] > 0) & (g.coords[-1] < 0.3)
        norm = gradient_norm(g, sigma)[collar]
        assert np.all((norm >= 0.5) & (norm <= 2.0))


def dijkstra_oracle(grid, source, reach=2):
    """Shortest paths over a wide-stencil graph; edge length uses the midpoint metric."""
    n, shape = grid.n, grid.shape
    idx = np.array(np.unravel_index(np.arange(grid.size), shape))
    rows, cols, vals = [], [], []
    for off in itertools.product(range(-reach, reach + 1), repeat=n):
        off = np.array(off)
        if not off.any() or np.gcd.reduce(np.abs(off)) != 1:
            continue
        j = idx + off[:, None]
        ok = (j[-1] >= 0) & (j[-1] < shape[-1])
        for a in range(n - 1):
            j[a] %= shape[a]
        src = np.flatnonzero(ok)
        dst = np.ravel_multi_index(tuple(j[:, ok]), shape)
        step = off * np.array(grid.spacing)
        ew = np.exp(0.5 * (grid.warp[src] + grid.warp[dst]))
        length = np.sqrt(ew * np.sum(step[:-1] ** 2) + step[-1] ** 2)
        rows.append(src)
        cols.append(dst)
        vals.append(length)
    W = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(grid.size, grid.size))
    return dijkstra(W, indices=source)


def test_fast_marching_against_graph_oracle():
    g = ProductGrid.uniform(3, 13, Expression("0.5*x3 + 0.3*sin(2*pi*x1)", 3))
    x0 = g.node(2, 3, 0)
    _, rho = distance_fields(g, x0)
    ref = dijkstra_oracle(g, x0)
    near = ref < 0.5
    assert np.max(np.abs(rho[near] - ref[near])) < 2 * g.h


def test_fast_marching_flat_matches_euclidean():
    from degenell.manifold import fast_marching

    g = ProductGrid.uniform(3, 13)
    x0 = g.node(0, 0, 0)
    _, exact = distance_fields(g, x0)
    near = exact < 0.4
    assert np.max(np.abs(fast_marching(g, x0)[near] - exact[near])) < 2 * g.h
