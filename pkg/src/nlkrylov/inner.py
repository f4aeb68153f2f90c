"""Inner Krylov subroutines: GMRES(m), augmented GMRES and GCRO's deflated solve.

All three take a :class:`~nlkrylov.operators.LinearAction` and work for
vector- and matrix-valued elements alike (the matrix case is global GMRES).
Each returns the approximate solution ``p_hat`` of ``J p = b`` together with
``v_hat = J p_hat`` recovered from the Arnoldi relation, so no extra operator
application is spent on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import UsageError
from .ip_space import (
    BREAKDOWN_TOL,
    BlockBasis,
    GivensLeastSquares,
    block_inner,
    diamond,
    inner,
    norm,
)
from .operators import LinearAction, deflated_apply


@dataclass
class InnerResult:
    p_hat: np.ndarray
    v_hat: np.ndarray
    inner_residual_norm: float
    fevals_used: int = 0
    residual_history: list = field(default_factory=list)
    steps: int = 0
    degenerate: bool = False


def _zero_result(b: np.ndarray, degenerate: bool = False) -> InnerResult:
    z = np.zeros_like(b, dtype=float)
    return InnerResult(z, z.copy(), 0.0, 0, [0.0], 0, degenerate)


def _arnoldi(
    apply: Callable[[np.ndarray], tuple],
    b: np.ndarray,
    beta: float,
    m: int,
    rtol: float,
):
    """m steps of Arnoldi/MGS with incremental least squares.

    ``apply(q)`` returns ``(w, extra)``; the extras are collected per step.
    """
    Q = [b / beta]
    ls = GivensLeastSquares(beta, m)
    history = [beta]
    extras = []
    for j in range(m):
        w, extra = apply(Q[j])
        w = np.array(w, dtype=float, copy=True)
        extras.append(extra)
        h = np.zeros(j + 2)
        for i in range(j + 1):
            h[i] = inner(w, Q[i])
            w -= h[i] * Q[i]
        h[j + 1] = norm(w)
        history.append(ls.add_column(h))
        if h[j + 1] <= BREAKDOWN_TOL * beta:
            break
        Q.append(w / h[j + 1])
        if history[-1] <= rtol * beta:
            break
    return Q, ls, history, extras


def _recover(Q, ls: GivensLeastSquares):
    n = ls.ncols
    gamma = ls.solve()
    Hg = ls.H[: n + 1, :n] @ gamma
    # after a happy breakdown Q holds only n vectors and Hg[n] is negligible
    v = diamond(Q[: n + 1], Hg[: len(Q[: n + 1])])
    return gamma, v


def _counter_total(op: LinearAction) -> int:
    return op.problem.counter_for(op.charge).total


def gmres(op: LinearAction, b: np.ndarray, m: int, rtol: float = 0.0) -> InnerResult:
    """``m`` steps of GMRES for ``op(p) = b`` from the zero initial guess.

    Stops early on a happy breakdown or once the residual drops below
    ``rtol * ||b||``.
    """
    if m < 1:
        raise UsageError("GMRES depth m must be >= 1")
    beta = norm(b)
    if beta == 0.0:
        return _zero_result(b)
    start = _counter_total(op)
    Q, ls, history, _ = _arnoldi(lambda q: (op(q), None), b, beta, m, rtol)
    gamma, v = _recover(Q, ls)
    p = diamond(Q[: ls.ncols], gamma)
    return InnerResult(p, v, history[-1], _counter_total(op) - start, history, ls.ncols)


def agmres(
    op: LinearAction,
    b: np.ndarray,
    m: int,
    k: int,
    P: BlockBasis,
    linear_mode_V: Optional[BlockBasis] = None,
) -> InnerResult:
    """GMRES on the Krylov space of ``b`` augmented by the columns of ``P``.

    Builds ``m + k - s`` standard Arnoldi vectors (``s = len(P)``) and then
    one column per ``P`` entry, whose image is ``op(p_i)`` or, when
    ``linear_mode_V`` is given, the stored ``v_i`` (no operator application).
    """
    s = len(P)
    if m < 1:
        raise UsageError("AGMRES depth m must be >= 1")
    if s > k:
        raise UsageError(f"augmentation basis has {s} > k={k} columns")
    if linear_mode_V is not None and len(linear_mode_V) != s:
        raise UsageError("linear-mode V must match P column for column")
    beta = norm(b)
    if beta == 0.0:
        return _zero_result(b)
    start = _counter_total(op)
    total = m + k
    m_s = m + (k - s)
    Q = [b / beta]
    H = np.zeros((total + 1, total))
    ncols = 0
    for i in range(total):
        if i < m_s:
            w = op(Q[i])
        elif linear_mode_V is not None:
            w = linear_mode_V[i - m_s]
        else:
            w = op(P[i - m_s])
        w = np.array(w, dtype=float, copy=True)
        for l in range(i + 1):
            H[l, i] = inner(w, Q[l])
            w -= H[l, i] * Q[l]
        H[i + 1, i] = norm(w)
        ncols = i + 1
        if H[i + 1, i] <= BREAKDOWN_TOL * beta:
            break
        Q.append(w / H[i + 1, i])
    Z = Q[: min(ncols, m_s)] + [P[i] for i in range(max(ncols - m_s, 0))]
    Hn = H[: ncols + 1, :ncols]
    rhs = np.zeros(ncols + 1)
    rhs[0] = beta
    gamma = np.linalg.lstsq(Hn, rhs, rcond=None)[0]
    Hg = Hn @ gamma
    p = diamond(Z, gamma)
    v = diamond(Q[: ncols + 1], Hg[: len(Q[: ncols + 1])])
    res = float(np.linalg.norm(rhs - Hg))
    return InnerResult(p, v, res, _counter_total(op) - start, [beta, res], ncols)


def gcro_inner(op_deflated: LinearAction, P: BlockBasis, r: np.ndarray, m: int) -> InnerResult:
    """GMRES on ``(I - V V^T) J`` with right-hand side ``(I - V V^T) r``.

    ``V`` is ``op_deflated.deflate``. The coordinates ``B = V^T J Q`` of the
    undeflated images are collected on the way and used to return
    ``p_hat = (Q - P B) gamma`` and ``v_hat = Q H gamma``, both already
    orthogonal to ``V`` up to roundoff. A right-hand side lying entirely in
    ``span(V)`` gives a zero result flagged ``degenerate``.
    """
    if m < 1:
        raise UsageError("GMRES depth m must be >= 1")
    V = op_deflated.deflate
    if V is None:
        return gmres(op_deflated, r, m)
    if len(P) != len(V):
        raise UsageError("P and V windows differ in length")
    rnorm = norm(r)
    if rnorm == 0.0:
        return _zero_result(r)
    r_t = r - diamond(V, block_inner(V, r))
    beta = norm(r_t)
    if beta <= BREAKDOWN_TOL * rnorm:
        return _zero_result(r, degenerate=True)
    start = _counter_total(op_deflated)

    def apply(q):
        w, _, coeffs = deflated_apply(op_deflated, q)
        return w, coeffs

    Q, ls, history, coeffs = _arnoldi(apply, r_t, beta, m, 0.0)
    gamma, v = _recover(Q, ls)
    n = ls.ncols
    B = np.column_stack(coeffs[:n])
    p = diamond(Q[:n], gamma) - diamond(P, B @ gamma)
    return InnerResult(p, v, history[-1], _counter_total(op_deflated) - start, history, n)
