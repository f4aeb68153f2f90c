"""Inner-product-space kernels shared by the vector and matrix settings.

An *element* is a plain ``numpy.ndarray``: 1-D for the Euclidean case,
2-D (n x p) for the Frobenius case. Every routine here only uses
``inner`` and axpy-style updates, so the same code serves both kinds and
the block (global Krylov) methods come for free.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from typing import NamedTuple, Sequence

import numpy as np

from .errors import BreakdownError, UsageError

#: relative threshold below which an orthogonalized direction counts as lost
BREAKDOWN_TOL = 1e-14


class ConditionWarning(RuntimeWarning):
    """Emitted when a small least-squares problem is numerically rank deficient."""


def check_same(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise UsageError(f"element shape mismatch: {a.shape} vs {b.shape}")


def inner(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean (vector) or Frobenius (matrix) inner product."""
    check_same(a, b)
    return float(np.vdot(a, b))


def norm(a: np.ndarray) -> float:
    return math.sqrt(max(float(np.vdot(a, a)), 0.0))


class BlockBasis:
    """Truncated window of at most ``capacity`` elements plus restart weights.

    Appending to a full window evicts the oldest column together with its
    weight.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise UsageError("basis capacity must be >= 1")
        self.capacity = int(capacity)
        self.columns: deque[np.ndarray] = deque(maxlen=self.capacity)
        self.weights: deque[float] = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self.columns)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.columns[i]

    def __iter__(self):
        return iter(self.columns)

    @property
    def full(self) -> bool:
        return len(self.columns) == self.capacity

    def append(self, column: np.ndarray, weight: float = 0.0) -> None:
        if self.columns:
            check_same(self.columns[0], column)
        self.columns.append(column)
        self.weights.append(float(weight))

    def drop_oldest(self) -> None:
        if self.columns:
            self.columns.popleft()
            self.weights.popleft()

    def clear(self) -> None:
        self.columns.clear()
        self.weights.clear()

    def gram(self) -> np.ndarray:
        """Matrix of pairwise inner products."""
        cols = list(self.columns)
        return np.array([[inner(a, b) for b in cols] for a in cols])


def diamond(U: BlockBasis | Sequence[np.ndarray], gamma) -> np.ndarray:
    """Return ``sum_i gamma_i * U_i`` (basis-times-coefficients)."""
    cols = list(U)
    gamma = np.asarray(gamma, dtype=float).ravel()
    if len(cols) != gamma.size:
        raise UsageError(f"{gamma.size} coefficients for {len(cols)} columns")
    if not cols:
        raise UsageError("diamond product of an empty basis has no shape")
    out = np.zeros_like(cols[0], dtype=float)
    for g, u in zip(gamma, cols):
        out += g * u
    return out


def block_inner(U: BlockBasis | Sequence[np.ndarray], W: np.ndarray) -> np.ndarray:
    """Coordinates ``[<U_1, W>, ..., <U_n, W>]``; equals ``V.T @ r`` for vectors."""
    return np.array([inner(u, W) for u in U], dtype=float)


class GramSchmidtResult(NamedTuple):
    betas: np.ndarray
    norm: float


def gram_schmidt_append(
    P: BlockBasis, V: BlockBasis, p_hat: np.ndarray, v_hat: np.ndarray
) -> GramSchmidtResult:
    """Orthogonalize ``v_hat`` against ``V`` (modified Gram-Schmidt), mirror the
    coefficients on ``p_hat``, normalize both by the final norm of ``v_hat`` and
    append them.

    A full window first drops its oldest pair, so the new column is
    orthogonalized against the ``capacity - 1`` most recent ones and
    ``betas`` refers to those. The inputs are not modified.
    The appended V column gets weight 0; callers tracking restart weights
    overwrite ``V.weights[-1]``.
    """
    if len(P) != len(V):
        raise UsageError("P and V windows differ in length")
    if len(V):
        check_same(V[0], v_hat)
        check_same(P[0], p_hat)
    if P.full:
        P.drop_oldest()
        V.drop_oldest()
    p = np.array(p_hat, dtype=float, copy=True)
    v = np.array(v_hat, dtype=float, copy=True)
    pre = norm(v)
    betas = np.zeros(len(V))
    for i, (pi, vi) in enumerate(zip(P, V)):
        b = inner(v, vi)
        betas[i] = b
        v -= b * vi
        p -= b * pi
    post = norm(v)
    if not np.isfinite(post) or post <= BREAKDOWN_TOL * pre or post == 0.0:
        raise BreakdownError(f"direction lost in Gram-Schmidt ({post:.3e} of {pre:.3e})")
    P.append(p / post)
    V.append(v / post)
    return GramSchmidtResult(betas, post)


class GivensLeastSquares:
    """Incremental solver for ``min ||beta e1 - H gamma||`` with H upper Hessenberg.

    Columns are added one at a time; each new column is reduced with the
    stored plane rotations plus one fresh rotation, and the attained residual
    norm falls out as ``|g[j+1]|``.
    """

    def __init__(self, beta: float, max_cols: int):
        self.H = np.zeros((max_cols + 1, max_cols))
        self.R = np.zeros((max_cols + 1, max_cols))
        self.g = np.zeros(max_cols + 1)
        self.g[0] = beta
        self.cs = np.zeros(max_cols)
        self.sn = np.zeros(max_cols)
        self.ncols = 0

    def add_column(self, h) -> float:
        j = self.ncols
        h = np.asarray(h, dtype=float)
        if h.size != j + 2:
            raise UsageError(f"column {j} of a Hessenberg matrix needs {j + 2} entries")
        self.H[: j + 2, j] = h
        col = h.copy()
        for i in range(j):
            a, b = col[i], col[i + 1]
            col[i] = self.cs[i] * a + self.sn[i] * b
            col[i + 1] = -self.sn[i] * a + self.cs[i] * b
        a, b = col[j], col[j + 1]
        d = math.hypot(a, b)
        c, s = (1.0, 0.0) if d == 0.0 else (a / d, b / d)
        self.cs[j], self.sn[j] = c, s
        col[j], col[j + 1] = d, 0.0
        g0, g1 = self.g[j], self.g[j + 1]
        self.g[j] = c * g0 + s * g1
        self.g[j + 1] = -s * g0 + c * g1
        self.R[: j + 2, j] = col
        self.ncols = j + 1
        return abs(self.g[j + 1])

    @property
    def residual_norm(self) -> float:
        return abs(self.g[self.ncols])

    def solve(self) -> np.ndarray:
        j = self.ncols
        R = self.R[:j, :j]
        diag = np.abs(np.diag(R))
        scale = max(np.abs(R).max(initial=0.0), 1e-300)
        if j and diag.min() <= BREAKDOWN_TOL * scale:
            warnings.warn(
                "rank-deficient Hessenberg least squares; using minimum-norm solution",
                ConditionWarning,
                stacklevel=2,
            )
            rhs = np.zeros(j + 1)
            rhs[0] = self.g_beta
            return np.linalg.lstsq(self.H[: j + 1, :j], rhs, rcond=None)[0]
        gamma = np.zeros(j)
        for i in range(j - 1, -1, -1):
            gamma[i] = (self.g[i] - R[i, i + 1 :] @ gamma[i + 1 :]) / R[i, i]
        return gamma

    @property
    def g_beta(self) -> float:
        # recover beta from the rotated rhs; rotations preserve the norm
        return float(np.linalg.norm(self.g[: self.ncols + 1]))


class HessenbergLS(NamedTuple):
    H: np.ndarray
    beta: float


def hessenberg_lstsq(ls: HessenbergLS) -> tuple[np.ndarray, float]:
    """Solve ``min ||beta e1 - H gamma||`` by plane rotations.

    Returns ``(gamma, residual_norm)``. A numerically rank-deficient ``H``
    yields the minimum-norm minimizer and a :class:`ConditionWarning`.
    """
    H = np.atleast_2d(np.asarray(ls.H, dtype=float))
    rows, m = H.shape
    if m < 1 or rows != m + 1:
        raise UsageError(f"expected an (m+1) x m matrix, got {H.shape}")
    if ls.beta < 0:
        raise UsageError("beta must be nonnegative")
    if np.any(np.tril(H, -2)):
        raise UsageError("matrix is not upper Hessenberg")
    solver = GivensLeastSquares(ls.beta, m)
    for j in range(m):
        solver.add_column(H[: j + 2, j])
    gamma = solver.solve()
    rhs = np.zeros(m + 1)
    rhs[0] = ls.beta
    residual = float(np.linalg.norm(rhs - H @ gamma))
    return gamma, residual
