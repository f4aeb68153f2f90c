"""Matrix-free problem handles, Jacobian actions and evaluation accounting."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NumericalDomainError, UsageError
from .ip_space import BlockBasis, block_inner, check_same, diamond, norm

SQRT_EPS = math.sqrt(np.finfo(float).eps)
_TINY = np.finfo(float).tiny


@dataclass
class EvalCounter:
    """Monotone tally of function evaluations.

    ``residuals`` counts calls of ``f``; ``jvps`` counts finite-difference
    derivative actions (each costs one call of ``f`` at a shifted point).
    Analytic derivative actions are free.
    """

    residuals: int = 0
    jvps: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def total(self) -> int:
        return self.residuals + self.jvps

    def add(self, residuals: int = 0, jvps: int = 0) -> None:
        with self._lock:
            self.residuals += residuals
            self.jvps += jvps


def fd_step(x: np.ndarray, q: np.ndarray) -> float:
    """Finite-difference step ``sqrt(eps) * max(1, ||x||) / ||q||``."""
    return SQRT_EPS * max(1.0, norm(x)) / max(norm(q), _TINY)


def _check_finite(y: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(y)
    if bad.any():
        idx = int(np.flatnonzero(bad.ravel())[0])
        raise NumericalDomainError(f"{what} produced a non-finite entry at index {idx}", idx)


class Problem:
    """Matrix-free root-finding problem ``f(x) = 0``.

    Parameters
    ----------
    f : callable
        Residual function; must preserve the shape of its argument.
    jvp : callable, optional
        Analytic derivative action ``(x, q) -> J_f(x) q`` (the Frechet
        derivative for matrix-valued problems). Finite differences are used
        when omitted.
    x0 : ndarray, optional
        Default initial guess.

    Solver-required evaluations go to ``counter``; evaluations made only for
    diagnostics go to ``diag_counter`` so reported cost curves stay honest.
    """

    def __init__(
        self,
        f: Callable[[np.ndarray], np.ndarray],
        jvp: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
        x0: Optional[np.ndarray] = None,
        name: str = "problem",
    ):
        self.f = f
        self.jvp = jvp
        self.x0 = None if x0 is None else np.asarray(x0, dtype=float)
        self.name = name
        self.counter = EvalCounter()
        self.diag_counter = EvalCounter()

    @property
    def shape(self):
        return None if self.x0 is None else self.x0.shape

    def counter_for(self, charge: str) -> EvalCounter:
        return self.diag_counter if charge == "diag" else self.counter

    def evaluate(self, x: np.ndarray, charge: str = "solver") -> np.ndarray:
        if self.x0 is not None:
            check_same(self.x0, x)
        y = np.asarray(self.f(x), dtype=float)
        self.counter_for(charge).add(residuals=1)
        if y.shape != x.shape:
            raise UsageError(f"f changed the shape {x.shape} -> {y.shape}")
        _check_finite(y, "f")
        return y

    def residual(self, x: np.ndarray, charge: str = "solver") -> np.ndarray:
        """``-f(x)``, charged one evaluation."""
        return -self.evaluate(x, charge)

    def without_jvp(self) -> "Problem":
        """Copy that forgets the analytic derivative (fresh counters)."""
        return Problem(self.f, None, self.x0, self.name)

    def with_fresh_counters(self) -> "Problem":
        return Problem(self.f, self.jvp, self.x0, self.name)


def apply_jvp(
    problem: Problem,
    x: np.ndarray,
    q: np.ndarray,
    r_at_x: Optional[np.ndarray],
    charge: str = "solver",
) -> np.ndarray:
    """Jacobian action ``J_f(x) q``.

    Uses the analytic derivative when available; otherwise the one-sided
    difference ``(f(x + eps q) + r_at_x) / eps`` with the cached residual
    ``r_at_x = -f(x)``, costing exactly one evaluation.
    """
    check_same(x, q)
    if not np.any(q):
        return np.zeros_like(q, dtype=float)
    if problem.jvp is not None:
        out = np.asarray(problem.jvp(x, q), dtype=float)
        _check_finite(out, "jvp")
        return out
    if r_at_x is None:
        raise UsageError("finite-difference jvp needs the residual at x")
    eps = fd_step(x, q)
    fq = np.asarray(problem.f(x + eps * q), dtype=float)
    problem.counter_for(charge).add(jvps=1)
    _check_finite(fq, "f")
    return (fq + r_at_x) / eps


def frechet(
    problem: Problem,
    X: np.ndarray,
    D: np.ndarray,
    R_at_X: Optional[np.ndarray],
    charge: str = "solver",
) -> np.ndarray:
    """Frechet derivative ``L_F(X, D)`` of a matrix-valued problem."""
    if np.ndim(X) != 2:
        raise UsageError("frechet expects matrix-valued elements")
    return apply_jvp(problem, X, D, R_at_X, charge)


class LinearAction:
    """Jacobian of ``problem`` frozen at ``x``, optionally deflated by ``V``.

    ``r_at_x`` is the cached residual ``-f(x)``. It may be omitted (for
    instance when the outer solver is running on linearized residuals); a
    finite-difference action then evaluates it once, lazily.
    """

    def __init__(
        self,
        problem: Problem,
        x: np.ndarray,
        r_at_x: Optional[np.ndarray] = None,
        deflate: Optional[BlockBasis] = None,
        charge: str = "solver",
    ):
        self.problem = problem
        self.x = x
        self._r = r_at_x
        self.deflate = deflate if deflate is not None and len(deflate) else None
        self.charge = charge

    @property
    def r_at_x(self) -> np.ndarray:
        if self._r is None:
            self._r = self.problem.residual(self.x, self.charge)
        return self._r

    def plain(self, q: np.ndarray) -> np.ndarray:
        if self.problem.jvp is not None or not np.any(q):
            return apply_jvp(self.problem, self.x, q, self._r, self.charge)
        return apply_jvp(self.problem, self.x, q, self.r_at_x, self.charge)

    def __call__(self, q: np.ndarray) -> np.ndarray:
        if self.deflate is None:
            return self.plain(q)
        return deflated_apply(self, q)[0]

    def undeflated(self) -> "LinearAction":
        return LinearAction(self.problem, self.x, self._r, None, self.charge)

    def deflated(self, V: BlockBasis) -> "LinearAction":
        return LinearAction(self.problem, self.x, self._r, V, self.charge)


def deflated_apply(op: LinearAction, q: np.ndarray):
    """Apply ``(I - V V^T) J``.

    Returns ``(w, jq, coeffs)``: the projected image, the raw image ``J q``
    and its coordinates ``V^T J q``.
    """
    jq = op.plain(q)
    V = op.deflate
    if V is None:
        return jq, jq, np.zeros(0)
    coeffs = block_inner(V, jq)
    return jq - diamond(V, coeffs), jq, coeffs
