"""Benchmark problems with analytic derivative actions where available."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import NumericalDomainError, UsageError
from .operators import Problem

EXP_LIMIT = 700.0


def make_linear(A, b, x0=None, name: str = "linear") -> Problem:
    """``f(x) = A x - b`` with the exact derivative action ``A q``.

    ``A`` may be a dense array or a scipy sparse matrix.
    """
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise UsageError(f"A must be square, got {A.shape}")
    b = np.asarray(b, dtype=float)
    if b.shape != (A.shape[0],):
        raise UsageError(f"b has shape {b.shape}, expected ({A.shape[0]},)")
    if x0 is None:
        x0 = np.zeros_like(b)
    return Problem(lambda x: A @ x - b, lambda x, q: A @ q, x0, name)


def random_linear(n: int, seed: int = 0, shift: float = 3.0) -> Problem:
    """Well-conditioned random system ``(shift I + G / sqrt(n)) x = b``."""
    if n < 1:
        raise UsageError("n must be >= 1")
    rng = np.random.default_rng(seed)
    A = shift * np.eye(n) + rng.standard_normal((n, n)) / np.sqrt(n)
    b = rng.standard_normal(n)
    return make_linear(A, b, name="linear")


def tridiag_linear(n: int, diag: float = 4.0, off: float = -1.0, seed: int = 0) -> Problem:
    """Sparse Toeplitz tridiagonal system with a seeded right-hand side."""
    if n < 1:
        raise UsageError("n must be >= 1")
    A = sp.diags([off, diag, off], [-1, 0, 1], shape=(n, n), format="csr")
    b = np.random.default_rng(seed).standard_normal(n)
    return make_linear(A, b, name="tridiag")


def laplacian_1d(N: int) -> sp.csr_matrix:
    return sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(N, N), format="csr")


def bratu_operator(N: int) -> sp.csr_matrix:
    L = laplacian_1d(N)
    I = sp.identity(N, format="csr")
    return (sp.kron(L, I) + sp.kron(I, L)).tocsr()


def _safe_exp(x: np.ndarray) -> np.ndarray:
    big = np.abs(x) > EXP_LIMIT
    if big.any():
        idx = int(np.flatnonzero(big)[0])
        raise NumericalDomainError(f"exp argument {x[idx]:.3e} out of range at index {idx}", idx)
    return np.exp(x)


def make_bratu(N: int = 100, lam: float = 0.5) -> Problem:
    """Discrete Bratu problem ``L x - h^2 lam exp(x) = 0`` on an N x N grid.

    ``L`` is the unscaled five-point Laplacian, ``h = 1/(N+2)`` and the
    default initial guess is all ones.
    """
    if N < 2:
        raise UsageError("N must be >= 2")
    if lam < 0:
        raise UsageError("lambda must be nonnegative")
    L = bratu_operator(N)
    c = lam / (N + 2) ** 2

    def f(x):
        return L @ x - c * _safe_exp(x)

    def jvp(x, q):
        return L @ q - c * _safe_exp(x) * q

    return Problem(f, jvp, np.ones(N * N), f"bratu(N={N},lambda={lam})")


def hequation_kernel(n: int) -> np.ndarray:
    """Midpoint-rule kernel ``mu_i / (mu_i + mu_j)`` with ``mu_i = (i - 1/2)/n``."""
    i = np.arange(1, n + 1, dtype=float)
    return (i[:, None] - 0.5) / (i[:, None] + i[None, :] - 1.0)


def make_hequation(n: int = 1000, omega: float = 0.99) -> Problem:
    """Discretized Chandrasekhar H-equation ``h - 1 / (1 - (omega/2n) K h) = 0``."""
    if n < 1:
        raise UsageError("n must be >= 1")
    if not 0.0 <= omega <= 1.0:
        raise UsageError("omega must lie in [0, 1]")
    K = hequation_kernel(n) * (omega / (2 * n))

    def denom(h):
        d = 1.0 - K @ h
        bad = d <= 0.0
        if bad.any():
            idx = int(np.flatnonzero(bad)[0])
            raise NumericalDomainError(f"1 - (K h)_i <= 0 at index {idx}", idx)
        return d

    def f(h):
        return h - 1.0 / denom(h)

    def jvp(h, q):
        return q - (K @ q) / denom(h) ** 2

    return Problem(f, jvp, np.ones(n), f"hequation(n={n},omega={omega})")


def make_singular2d() -> Problem:
    """Two-dimensional problem with a singular root at the origin.

    The Jacobian at the root has null space ``span([0, 1])``.
    """

    def f(x):
        x1, x2 = x
        return np.array([x1 + x2**2, 1.5 * x1 * x2 + x2**2 + x2**3])

    def jvp(x, q):
        x1, x2 = x
        J = np.array([[1.0, 2 * x2], [1.5 * x2, 1.5 * x1 + 2 * x2 + 3 * x2**2]])
        return J @ q

    return Problem(f, jvp, np.array([0.1, 1.0]), "singular2d")


LJ_MIN_DIST = 2.0 ** (1.0 / 6.0)


def fcc_lattice(cells: int) -> np.ndarray:
    """``4 cells^3`` FCC sites with nearest-neighbour distance ``2^(1/6)``."""
    if cells < 1:
        raise UsageError("cells must be >= 1")
    a = LJ_MIN_DIST * np.sqrt(2.0)
    basis = np.array([[0, 0, 0], [0.5, 0.5, 0], [0.5, 0, 0.5], [0, 0.5, 0.5]])
    grid = np.array(np.meshgrid(*[np.arange(cells)] * 3, indexing="ij")).reshape(3, -1).T
    return a * (grid[:, None, :] + basis[None, :, :]).reshape(-1, 3)


def _pair_data(x: np.ndarray):
    pos = x.reshape(-1, 3)
    diff = pos[:, None, :] - pos[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(r2, np.inf)
    if r2.min() < 1e-16:
        raise NumericalDomainError("coincident atoms in Lennard-Jones cluster")
    return diff, r2


def lj_energy(x: np.ndarray) -> float:
    """Lennard-Jones energy ``sum_{i<j} 4 (r^-12 - r^-6)`` of flat coordinates."""
    _, r2 = _pair_data(np.asarray(x, dtype=float))
    inv6 = r2**-3
    return float(2.0 * np.sum(inv6 * inv6 - inv6))


def lj_gradient(x: np.ndarray) -> np.ndarray:
    diff, r2 = _pair_data(np.asarray(x, dtype=float))
    inv2 = 1.0 / r2
    inv8 = inv2**4
    coef = 4.0 * (-12.0 * inv8 * inv2**3 + 6.0 * inv8)
    return np.einsum("ij,ijk->ik", coef, diff).ravel()


def make_lennard_jones(cells: int = 3, perturb_scale: float = 0.05, seed: int = 0) -> Problem:
    """Stationarity ``grad E = 0`` of a perturbed FCC Lennard-Jones cluster.

    Each coordinate of the lattice is shifted by a uniform draw in
    ``[-s, s]`` with ``s = perturb_scale * 2^(1/6)``. The derivative action
    is left to finite differences.
    """
    if perturb_scale < 0:
        raise UsageError("perturb_scale must be nonnegative")
    pos = fcc_lattice(cells)
    rng = np.random.default_rng(seed)
    pos = pos + rng.uniform(-1.0, 1.0, pos.shape) * perturb_scale * LJ_MIN_DIST
    return Problem(lj_gradient, None, pos.ravel(), f"lennard_jones(cells={cells})")


@dataclass
class NareMatrices:
    A: sp.csr_matrix
    B: np.ndarray
    F: np.ndarray
    G: np.ndarray
    P: np.ndarray
    Q: np.ndarray


def nare_matrices(n: int, p: int, r: int, s: int) -> NareMatrices:
    if min(n, p, r, s) < 1:
        raise UsageError("all NARE sizes must be positive")
    if r > p or r > n or s > p or s > n:
        raise UsageError("NARE sizes need r <= min(n, p) and s <= min(n, p)")
    A = sp.lil_matrix((n, n))
    A.setdiag(3.0)
    A.setdiag(-1.0, 1)
    A[n - 1, n - 1] = 1.9
    if n > 1:
        A[n - 1, 0] = -1.0
    B = 3.0 * np.eye(p) - np.eye(p, k=1)
    B[0, 0] = 2.0
    if p > 1:
        B[p - 1, 0] = -1.0
    F1 = -np.eye(r) - np.eye(r, k=1)
    F1[r - 1, r - 1] = -0.9
    F = np.zeros((n, r))
    F[:r] = F1
    P = np.zeros((p, s))
    P[:s] = np.eye(s) + np.eye(s, k=-1)
    return NareMatrices(A.tocsr(), B, F, np.eye(p, r), P, np.eye(n, s))


def make_nare(n: int = 3000, p: int = 20, r: int = 3, s: int = 5) -> Problem:
    """Nonsymmetric algebraic Riccati equation ``F G^T + A X + X B - X P Q^T X = 0``.

    Matrix-valued unknown ``X`` (n x p) with the analytic Frechet derivative.
    """
    M = nare_matrices(n, p, r, s)
    FG = M.F @ M.G.T

    def PQt(X):
        return M.P @ (M.Q.T @ X)

    def f(X):
        return FG + M.A @ X + X @ M.B - X @ PQt(X)

    def jvp(X, D):
        return M.A @ D + D @ M.B - (D @ PQt(X) + X @ PQt(D))

    return Problem(f, jvp, np.zeros((n, p)), f"nare(n={n},p={p},r={r},s={s})")


@dataclass
class ProblemSpec:
    """Named problem with keyword parameters, as used by the command line."""

    name: str
    params: dict = field(default_factory=dict)
    x0_rule: str = "default"

    def build(self) -> Problem:
        return build_problem(self.name, **self.params)


def _linear_from_params(n: int = 30, seed: int = 0, kind: str = "random") -> Problem:
    if kind == "random":
        return random_linear(n, seed)
    if kind == "tridiag":
        return tridiag_linear(n, seed=seed)
    raise UsageError(f"unknown linear kind {kind!r}; known: random, tridiag")


REGISTRY: dict[str, tuple[Callable[..., Problem], dict]] = {
    "linear": (_linear_from_params, {"n": int, "seed": int, "kind": str}),
    "bratu": (make_bratu, {"N": int, "lam": float}),
    "hequation": (make_hequation, {"n": int, "omega": float}),
    "singular2d": (make_singular2d, {}),
    "lennard_jones": (make_lennard_jones, {"cells": int, "perturb_scale": float, "seed": int}),
    "nare": (make_nare, {"n": int, "p": int, "r": int, "s": int}),
}

PROBLEM_ALIASES = {"lj": "lennard_jones", "h-equation": "hequation"}
PARAM_ALIASES = {"lambda": "lam"}


def build_problem(name: str, **params) -> Problem:
    """Construct a registered problem, coercing string parameters to their types."""
    key = PROBLEM_ALIASES.get(name, name)
    if key not in REGISTRY:
        raise UsageError(f"unknown problem {name!r}; known: {', '.join(sorted(REGISTRY))}")
    factory, types = REGISTRY[key]
    kwargs = {}
    for pname, value in params.items():
        pname = PARAM_ALIASES.get(pname, pname)
        if pname not in types:
            known = ", ".join(types) or "none"
            raise UsageError(f"problem {key!r} has no parameter {pname!r}; known: {known}")
        try:
            kwargs[pname] = types[pname](value)
        except (TypeError, ValueError):
            raise UsageError(f"bad value {value!r} for {key}.{pname}") from None
    return factory(**kwargs)
