import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from degenell.spectral import (
    ConeSpec,
    DomainError,
    SpectralFunction,
    check_structure,
    check_unbounded_conditions,
    cone_contains,
    elementary_symmetric,
    eval_f,
    gamma_infinity_contains,
    grad_f,
    lambda_from_mu,
    mu_from_lambda,
    tilde_f_eval,
    tilde_f_gradient,
    transform_matrix,
)


def brute_sigma(lam, j):
    return sum(np.prod(c) for c in itertools.combinations(lam, j)) if j else 1.0


def positive_points(rng, m, n):
    return rng.uniform(0.1, 3.0, size=(m, n))


ALL_FUNCTIONS = [
    SpectralFunction.sigma_root(3),
    SpectralFunction.sigma_root(4, 2),
    SpectralFunction("log_sigma_n", 4),
    SpectralFunction("quotient_root", 5, 3, 1),
    SpectralFunction("sigma_k_root", 3, 1),
]


class TestCone:
    def test_positive_orthant_point(self):
        inside, margin = cone_contains([1, 1, 1], ConeSpec(3, 3))
        assert inside and margin == pytest.approx(1.0)

    def test_gamma1_vs_gamma2(self):
        assert cone_contains([-1, 1, 1], ConeSpec(3, 1))[0]
        assert not cone_contains([-1, 1, 1], ConeSpec(3, 2))[0]

    def test_margin_scales_linearly(self):
        lam = np.array([0.5, 1.0, 2.0, 3.0])
        _, m1 = cone_contains(lam, ConeSpec(4, 3))
        _, m7 = cone_contains(7 * lam, ConeSpec(4, 3))
        assert m7 == pytest.approx(7 * m1)

    @pytest.mark.parametrize("n,k", [(3, 1), (3, 2), (3, 3), (5, 2), (5, 4), (6, 6)])
    def test_agrees_with_bruteforce_sigmas(self, n, k):
        rng = np.random.default_rng(n * 10 + k)
        lam = rng.standard_normal((1000, n))
        inside, _ = cone_contains(lam, ConeSpec(n, k))
        expected = np.array([all(brute_sigma(v, j) > 0 for j in range(1, k + 1)) for v in lam])
        assert np.array_equal(inside, expected)

    def test_elementary_symmetric_against_combinations(self):
        lam = np.array([0.3, -1.2, 2.0, 0.7, 1.1])
        e = elementary_symmetric(lam)
        for j in range(6):
            assert e[j] == pytest.approx(brute_sigma(lam, j), abs=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            cone_contains([1, 2], ConeSpec(3, 2))

    def test_nested_cones(self):
        rng = np.random.default_rng(0)
        lam = rng.standard_normal((2000, 5)) + 0.5
        inside = [cone_contains(lam, ConeSpec(5, k))[0] for k in range(1, 6)]
        for k in range(4):
            assert np.all(inside[k] >= inside[k + 1])

    def test_bad_cone(self):
        with pytest.raises(ValueError):
            ConeSpec(3, 4)


class TestSpectralFunction:
    def test_sigma2_root_at_ones(self):
        assert eval_f(SpectralFunction.sigma_root(3, 2), np.ones(3)) == pytest.approx(np.sqrt(3))

    def test_log_sigma_at_ones(self):
        f = SpectralFunction("log_sigma_n", 5)
        assert eval_f(f, np.ones(5)) == pytest.approx(0.0)
        assert np.allclose(grad_f(f, np.ones(5)), 1.0)

    def test_boundary_sup(self):
        assert SpectralFunction.sigma_root(3).boundary_sup == 0
        assert SpectralFunction("quotient_root", 4, 3, 1).boundary_sup == 0
        assert SpectralFunction("log_sigma_n", 4).boundary_sup == -np.inf
        assert not SpectralFunction("log_sigma_n", 4).supports_degenerate

    def test_outside_cone_is_domain_error(self):
        with pytest.raises(DomainError):
            SpectralFunction.sigma_root(3)([1.0, 1.0, -0.5])

    @pytest.mark.parametrize("f", ALL_FUNCTIONS, ids=lambda f: f"{f.family}-{f.n}-{f.k}-{f.l}")
    def test_gradient_matches_central_differences(self, f):
        rng = np.random.default_rng(1)
        lam = positive_points(rng, 40, f.n)
        g = f.gradient(lam)
        s = 1e-6
        fd = np.empty_like(g)
        for i in range(f.n):
            e = np.zeros(f.n)
            e[i] = s
            fd[:, i] = (f(lam + e) - f(lam - e)) / (2 * s)
        assert np.max(np.abs(fd - g) / np.abs(g)) < 1e-6

    @pytest.mark.parametrize("f", ALL_FUNCTIONS, ids=lambda f: f"{f.family}-{f.n}-{f.k}-{f.l}")
    def test_structure_on_random_pairs(self, f):
        rng = np.random.default_rng(2)
        rep = check_structure(f, positive_points(rng, 100, f.n), positive_points(rng, 100, f.n))
        assert rep.ok, rep

    def test_sigma_n_root_100_pairs(self):
        f = SpectralFunction.sigma_root(4)
        rng = np.random.default_rng(3)
        rep = check_structure(f, positive_points(rng, 100, 4), positive_points(rng, 100, 4))
        assert rep.samples == 100 and rep.ok

    def test_log_sigma_pairing_at_ones(self):
        f = SpectralFunction("log_sigma_n", 4)
        rep = check_structure(f, np.ones((1, 4)), np.ones((1, 4)))
        assert rep.min_pairing == pytest.approx(4.0)

    def test_sigma1_pairing_is_sigma1(self):
        f = SpectralFunction("sigma_k_root", 3, 1)
        lam = np.array([[1.0, -0.5, 2.0]])
        mu = np.array([[0.2, 0.3, -0.1]])
        assert check_structure(f, lam, mu).min_pairing == pytest.approx(0.4)

    def test_structure_detects_convex_function(self):
        # negative control: a convex "f" must trip the concavity check
        class Convex:
            def __call__(self, x):
                return np.sum(np.asarray(x) ** 2, axis=-1)

            def gradient(self, x):
                return 2 * np.asarray(x)

        rng = np.random.default_rng(4)
        rep = check_structure(Convex(), positive_points(rng, 50, 3), positive_points(rng, 50, 3))
        assert rep.concavity_violations > 0


class TestTransform:
    def test_forward_example(self):
        assert np.array_equal(mu_from_lambda([1, 2, 3]), [5, 4, 3])

    def test_ones(self):
        assert np.array_equal(mu_from_lambda([1, 1, 1]), [2, 2, 2])
        assert np.allclose(lambda_from_mu([2, 2, 2]), [1, 1, 1])

    def test_inverse_matches_dense_solve(self):
        mu = np.array([5.0, 4.0, 3.0])
        assert np.allclose(lambda_from_mu(mu), [1, 2, 3])
        assert np.allclose(np.linalg.solve(transform_matrix(3), mu), lambda_from_mu(mu), atol=1e-14)

    @pytest.mark.parametrize("n", range(2, 9))
    def test_determinant(self, n):
        assert np.linalg.det(transform_matrix(n)) == pytest.approx((-1) ** (n - 1) * (n - 1))

    def test_roundtrip_many(self):
        rng = np.random.default_rng(5)
        for n in range(3, 9):
            lam = rng.standard_normal((10_000 // 6 + 1, n)) * 10
            back = lambda_from_mu(mu_from_lambda(lam))
            assert np.max(np.abs(back - lam)) < 1e-12

    @given(arrays(np.float64, st.integers(2, 8), elements=st.floats(-1e3, 1e3)))
    def test_roundtrip_property(self, lam):
        assert np.allclose(mu_from_lambda(lambda_from_mu(lam)), lam, atol=1e-12 * (1 + np.abs(lam).max()), rtol=0)

    @given(arrays(np.float64, st.integers(2, 8), elements=st.floats(1e-3, 1e3)))
    def test_positive_orthant_maps_into_itself(self, lam):
        assert np.all(mu_from_lambda(lam) > 0)

    def test_length_one_rejected(self):
        with pytest.raises(ValueError):
            mu_from_lambda([1.0])


class TestTildeF:
    def test_ones(self):
        for n in (3, 5):
            assert tilde_f_eval(SpectralFunction.sigma_root(n), np.ones(n)) == pytest.approx(n - 1)

    def test_example_123(self):
        assert tilde_f_eval(SpectralFunction.sigma_root(3), [1, 2, 3]) == pytest.approx(60 ** (1 / 3))

    def test_outside(self):
        with pytest.raises(DomainError):
            tilde_f_eval(SpectralFunction.sigma_root(3), [-5.0, 1.0, 1.0])

    def test_midpoint_concavity_on_segments(self):
        f = SpectralFunction.sigma_root(4)
        rng = np.random.default_rng(6)
        # Q^{-1} of positive vectors lie in the cone of f̃
        a = lambda_from_mu(positive_points(rng, 50, 4))
        b = lambda_from_mu(positive_points(rng, 50, 4))
        mid = tilde_f_eval(f, 0.5 * (a + b))
        assert np.all(mid >= 0.5 * (tilde_f_eval(f, a) + tilde_f_eval(f, b)) - 1e-12)

    def test_inherits_structure(self):
        f = SpectralFunction("quotient_root", 4, 3, 1)
        rng = np.random.default_rng(7)
        a = lambda_from_mu(positive_points(rng, 100, 4))
        b = lambda_from_mu(positive_points(rng, 100, 4))
        assert check_structure(f, a, b, transformed=True).ok
        assert np.all(tilde_f_gradient(f, a) > 0)


class TestGammaInfinity:
    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_positive(self, k):
        assert gamma_infinity_contains(1.0, ConeSpec(3, k))

    def test_zero_in_gamma1(self):
        assert gamma_infinity_contains(0.0, ConeSpec(3, 1))

    def test_negative_not_in_gamma_n(self):
        assert not gamma_infinity_contains(-0.5, ConeSpec(3, 3))

    def test_negative_in_gamma_k_below_n(self):
        assert gamma_infinity_contains(-5.0, ConeSpec(4, 2))


class TestUnbounded:
    def test_log_sigma(self):
        rep = check_unbounded_conditions(SpectralFunction("log_sigma_n", 3), [[1, 2, 3], [0.1, 1, 5]])
        assert rep.unbound_verdict == "satisfied" and rep.unbound_strong_verdict == "satisfied"

    def test_sigma_n_root(self):
        rep = check_unbounded_conditions(SpectralFunction.sigma_root(3), [np.ones(3)])
        assert rep.unbound_verdict == "satisfied"

    def test_sigma1(self):
        rep = check_unbounded_conditions(SpectralFunction("sigma_k_root", 4, 1), [[1, 0, -0.5, 2]])
        assert rep.unbound_verdict == "satisfied" and rep.unbound_strong_verdict == "satisfied"


def test_binomial_normalisation_on_diagonal():
    cone = ConeSpec(6, 4)
    for c in (0.5, 2.0):
        assert cone_contains(np.full(6, c), cone)[1] == pytest.approx(c)
    assert comb(6, 4) == 15
