import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import fd_derivative, fd_gradient
from nlkrylov.errors import NumericalDomainError, UsageError
from nlkrylov.ip_space import inner
from nlkrylov.operators import apply_jvp, frechet
from nlkrylov.problems import (
    LJ_MIN_DIST,
    REGISTRY,
    ProblemSpec,
    bratu_operator,
    build_problem,
    fcc_lattice,
    hequation_kernel,
    lj_energy,
    lj_gradient,
    make_bratu,
    make_hequation,
    make_lennard_jones,
    make_linear,
    make_nare,
    make_singular2d,
    nare_matrices,
    random_linear,
    tridiag_linear,
)


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


class TestLinear:
    def test_identity_root(self):
        b = np.eye(3)[0]
        pr = make_linear(np.eye(3), b)
        np.testing.assert_array_equal(pr.f(b), np.zeros(3))

    def test_shape_errors(self):
        with pytest.raises(UsageError):
            make_linear(np.ones((2, 3)), np.ones(2))
        with pytest.raises(UsageError):
            make_linear(np.eye(2), np.ones(3))

    def test_seeded(self):
        a, b = random_linear(10, 4), random_linear(10, 4)
        x = np.arange(10.0)
        np.testing.assert_array_equal(a.f(x), b.f(x))
        assert not np.array_equal(a.f(x), random_linear(10, 5).f(x))

    def test_tridiag_jvp(self):
        pr = tridiag_linear(6)
        q = np.arange(6.0)
        np.testing.assert_allclose(pr.jvp(np.zeros(6), q), pr.f(q) - pr.f(np.zeros(6)))


class TestBratu:
    def test_pure_laplacian_zero(self):
        pr = make_bratu(4, 0.0)
        np.testing.assert_array_equal(pr.f(np.zeros(16)), np.zeros(16))

    def test_hand_value(self):
        np.testing.assert_allclose(make_bratu(3, 0.5).f(np.zeros(9)), np.full(9, -0.02), rtol=1e-14)

    def test_default_guess_ones(self):
        np.testing.assert_array_equal(make_bratu(5, 0.5).x0, np.ones(25))

    def test_jvp_matches_fd(self):
        pr = make_bratu(10, 0.5)
        rng = np.random.default_rng(0)
        for _ in range(3):
            x, q = rng.standard_normal(100), rng.standard_normal(100)
            assert rel_err(pr.jvp(x, q), fd_derivative(pr.f, x, q)) <= 1e-5

    def test_operator_symmetric(self):
        L = bratu_operator(7)
        rng = np.random.default_rng(1)
        u, v = rng.standard_normal(49), rng.standard_normal(49)
        assert abs(inner(L @ u, v) - inner(u, L @ v)) <= 1e-12 * (1 + abs(inner(u, L @ v)))

    def test_overflow(self):
        pr = make_bratu(3, 0.5)
        x = np.zeros(9)
        x[4] = 800.0
        with pytest.raises(NumericalDomainError) as info:
            pr.f(x)
        assert info.value.index == 4

    @pytest.mark.parametrize("kwargs", [dict(N=1), dict(lam=-1.0)])
    def test_invalid(self, kwargs):
        with pytest.raises(UsageError):
            make_bratu(**{"N": 4, "lam": 0.5, **kwargs})


class TestHEquation:
    def test_zero_omega_root(self):
        np.testing.assert_array_equal(make_hequation(20, 0.0).f(np.ones(20)), np.zeros(20))

    def test_zero_vector(self):
        np.testing.assert_array_equal(make_hequation(15, 0.7).f(np.zeros(15)), -np.ones(15))

    def test_jvp_matches_fd(self):
        pr = make_hequation(50, 0.99)
        rng = np.random.default_rng(2)
        x = 1.0 + 0.1 * rng.standard_normal(50)
        q = rng.standard_normal(50)
        assert rel_err(pr.jvp(x, q), fd_derivative(pr.f, x, q)) <= 1e-5

    def test_kernel_matches_double_loop(self):
        n, omega = 40, 0.9
        h = np.random.default_rng(3).uniform(0.5, 1.5, n)
        mu = (np.arange(1, n + 1) - 0.5) / n
        s = np.zeros(n)
        for i in range(n):
            for j in range(n):
                s[i] += omega / (2 * n) * mu[i] * h[j] / (mu[i] + mu[j])
        np.testing.assert_allclose(omega / (2 * n) * hequation_kernel(n) @ h, s, rtol=1e-12)
        np.testing.assert_allclose(make_hequation(n, omega).f(h), h - 1 / (1 - s), rtol=1e-12)

    def test_domain_error(self):
        with pytest.raises(NumericalDomainError):
            make_hequation(10, 1.0).f(np.full(10, 100.0))

    @pytest.mark.parametrize("kwargs", [dict(n=0), dict(omega=1.5), dict(omega=-0.1)])
    def test_invalid(self, kwargs):
        with pytest.raises(UsageError):
            make_hequation(**{"n": 5, "omega": 0.5, **kwargs})


class TestSingular2d:
    def test_root(self):
        np.testing.assert_array_equal(make_singular2d().f(np.zeros(2)), np.zeros(2))

    def test_hand_value(self):
        np.testing.assert_allclose(make_singular2d().f(np.ones(2)), [2.0, 3.5])

    def test_jacobian_at_root(self):
        pr = make_singular2d()
        J = np.column_stack([pr.jvp(np.zeros(2), e) for e in np.eye(2)])
        np.testing.assert_array_equal(J, [[1.0, 0.0], [0.0, 0.0]])
        np.testing.assert_array_equal(J @ np.array([0.0, 1.0]), np.zeros(2))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-2, 2), st.floats(-2, 2))
    def test_jvp_matches_fd(self, a, b):
        pr = make_singular2d()
        x = np.array([a, b])
        for q in np.eye(2):
            np.testing.assert_allclose(pr.jvp(x, q), fd_derivative(pr.f, x, q), atol=1e-6)


class TestLennardJones:
    def dimer(self, d):
        return np.array([0.0, 0.0, 0.0, d, 0.0, 0.0])

    def test_dimer_minimum(self):
        x = self.dimer(LJ_MIN_DIST)
        assert lj_energy(x) == pytest.approx(-1.0, rel=1e-14)
        np.testing.assert_allclose(lj_gradient(x), np.zeros(6), atol=1e-13)

    def test_unit_distance(self):
        assert lj_energy(self.dimer(1.0)) == pytest.approx(0.0, abs=1e-15)

    def test_gradient_matches_fd_of_energy(self):
        x = np.random.default_rng(4).uniform(0, 3, 15)
        assert rel_err(lj_gradient(x), fd_gradient(lj_energy, x)) <= 1e-5

    def test_coincident_atoms(self):
        with pytest.raises(NumericalDomainError):
            lj_energy(np.zeros(6))

    def test_lattice(self):
        pos = fcc_lattice(2)
        assert pos.shape == (32, 3)
        d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        np.fill_diagonal(d, np.inf)
        assert d.min() == pytest.approx(LJ_MIN_DIST, rel=1e-12)

    def test_seeded_and_perturbed(self):
        a, b = make_lennard_jones(1, 0.05, 3), make_lennard_jones(1, 0.05, 3)
        np.testing.assert_array_equal(a.x0, b.x0)
        assert not np.array_equal(a.x0, make_lennard_jones(1, 0.05, 4).x0)
        np.testing.assert_allclose(make_lennard_jones(1, 0.0).x0, fcc_lattice(1).ravel())
        assert a.jvp is None


class TestNare:
    def test_residual_at_zero(self):
        M = nare_matrices(8, 4, 2, 3)
        np.testing.assert_allclose(make_nare(8, 4, 2, 3).f(np.zeros((8, 4))), M.F @ M.G.T)

    def test_structure(self):
        M = nare_matrices(5, 3, 2, 2)
        A = M.A.toarray()
        assert A[4, 4] == 1.9 and A[4, 0] == -1.0 and A[0, 1] == -1.0 and A[0, 0] == 3.0
        assert M.B[0, 0] == 2.0 and M.B[2, 0] == -1.0 and M.B[1, 2] == -1.0
        np.testing.assert_array_equal(M.F[:2], [[-1.0, -1.0], [0.0, -0.9]])
        assert not M.F[2:].any()

    def test_frechet_matches_fd(self):
        pr = make_nare(8, 2, 2, 2)
        rng = np.random.default_rng(5)
        X, D = rng.standard_normal((8, 2)), rng.standard_normal((8, 2))
        assert rel_err(frechet(pr, X, D, None), fd_derivative(pr.f, X, D)) <= 1e-5

    def test_default_guess_is_zero_matrix(self):
        np.testing.assert_array_equal(make_nare(6, 3, 2, 2).x0, np.zeros((6, 3)))

    @pytest.mark.parametrize("sizes", [(5, 3, 4, 2), (5, 3, 2, 4), (0, 3, 2, 2), (2, 3, 3, 1)])
    def test_size_errors(self, sizes):
        with pytest.raises(UsageError):
            make_nare(*sizes)


class TestDerivativeLinearity:
    @settings(max_examples=20, deadline=None)
    @given(
        st.sampled_from(["bratu", "hequation", "singular2d", "linear"]),
        st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1),
    )
    def test_linear_in_direction(self, name, a, b, seed):
        params = {"bratu": {"N": 4}, "hequation": {"n": 12}}.get(name, {})
        pr = build_problem(name, **params)
        rng = np.random.default_rng(seed)
        x = pr.x0 + 0.01 * rng.standard_normal(pr.x0.shape)
        q1, q2 = rng.standard_normal((2,) + pr.x0.shape)
        lhs = apply_jvp(pr, x, a * q1 + b * q2, None)
        rhs = a * apply_jvp(pr, x, q1, None) + b * apply_jvp(pr, x, q2, None)
        assert np.linalg.norm(lhs - rhs) <= 1e-12 * (1 + np.linalg.norm(rhs))


class TestRegistry:
    def test_all_names_build(self):
        small = {"bratu": {"N": 3}, "hequation": {"n": 5}, "lennard_jones": {"cells": 1},
                 "nare": {"n": 6, "p": 3, "r": 2, "s": 2}, "linear": {"n": 4}}
        for name in REGISTRY:
            pr = build_problem(name, **small.get(name, {}))
            assert np.all(np.isfinite(pr.f(pr.x0)))

    def test_aliases_and_coercion(self):
        pr = build_problem("h-equation", n="7", omega="0.5")
        assert pr.x0.shape == (7,)
        pr = build_problem("bratu", N="3", **{"lambda": "0.5"})
        np.testing.assert_allclose(pr.f(np.zeros(9)), np.full(9, -0.02))
        assert build_problem("lj", cells=1).x0.shape == (12,)

    @pytest.mark.parametrize(
        "name,params",
        [("nope", {}), ("bratu", {"M": 3}), ("bratu", {"N": "x"}), ("linear", {"kind": "other"})],
    )
    def test_errors(self, name, params):
        with pytest.raises(UsageError):
            build_problem(name, **params)

    def test_spec_deterministic(self):
        spec = ProblemSpec("linear", {"n": 5, "seed": 2})
        x = np.ones(5)
        np.testing.assert_array_equal(spec.build().f(x), spec.build().f(x))
