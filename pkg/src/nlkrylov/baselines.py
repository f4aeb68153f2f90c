"""Reference nonlinear solvers: Newton-Krylov, nonlinear Orthomin and Anderson mixing.

All three report through the same :class:`~nlkrylov.solver.SolveResult` and
:class:`~nlkrylov.solver.IterationRecord` types as the nonlinear Krylov
driver, and charge evaluations to the same counters.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import UsageError
from .inner import gmres
from .ip_space import inner, norm
from .operators import LinearAction, Problem, apply_jvp
from .solver import (
    IterationRecord,
    LineSearchConfig,
    SolveResult,
    line_search,
    next_alpha0,
)

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0
ETA_MIN = 1e-6


@dataclass
class NewtonKrylovConfig:
    m_max: int = 100
    tol: float = 1e-10
    max_iter: int = 50
    eta0: float = 1.0 / 3.0
    linesearch: Optional[LineSearchConfig] = field(default_factory=LineSearchConfig)

    def __post_init__(self):
        _check_common(self.tol, self.max_iter)
        if self.m_max < 1:
            raise UsageError("m_max must be >= 1")
        if not 0.0 < self.eta0 <= 1.0:
            raise UsageError("eta0 must lie in (0, 1]")


@dataclass
class OrthominConfig:
    k: int = 10
    gn_max: int = 20
    tol: float = 1e-10
    max_iter: int = 200

    def __post_init__(self):
        _check_common(self.tol, self.max_iter)
        if self.k < 1:
            raise UsageError("k must be >= 1")
        if self.gn_max < 1:
            raise UsageError("gn_max must be >= 1")


@dataclass
class AndersonConfig:
    k_aa: int = 10
    beta: float = 1.0
    tol: float = 1e-10
    max_iter: int = 200

    def __post_init__(self):
        _check_common(self.tol, self.max_iter)
        if self.k_aa < 0:
            raise UsageError("k_aa must be >= 0")
        if self.beta == 0.0:
            raise UsageError("beta must be nonzero")


def _check_common(tol, max_iter):
    if not 0.0 < tol < 1.0:
        raise UsageError("tol must lie in (0, 1)")
    if max_iter < 0:
        raise UsageError("max_iter must be >= 0")


@dataclass
class ForcingState:
    """Eisenstat-Walker forcing term ``eta_j = (||r_j|| / ||r_{j-1}||)^golden``."""

    eta: float = 1.0 / 3.0
    prev_resnorm: Optional[float] = None

    def update(self, resnorm: float) -> float:
        if self.prev_resnorm is not None and self.prev_resnorm > 0.0:
            self.eta = forcing_term(resnorm / self.prev_resnorm)
        self.prev_resnorm = resnorm
        return self.eta


def forcing_term(ratio: float) -> float:
    """``ratio^golden`` clamped to ``[1e-6, 1]``."""
    return min(1.0, max(ETA_MIN, ratio**GOLDEN))


class _Run:
    """Bookkeeping shared by the baseline loops."""

    def __init__(self, problem: Problem, x0, tol: float):
        if x0 is None:
            x0 = problem.x0
        if x0 is None:
            raise UsageError("no initial guess")
        self.problem = problem
        self.x = np.array(x0, dtype=float, copy=True)
        if not np.all(np.isfinite(self.x)):
            raise UsageError("initial guess is not finite")
        self.f0 = problem.counter.total
        self.r = problem.residual(self.x)
        self.r0 = norm(self.r)
        self.target = tol * self.r0
        self.history: list[IterationRecord] = []

    @property
    def fevals(self) -> int:
        return self.problem.counter.total - self.f0

    def record(self, it, alpha, callback, **extras) -> bool:
        resn = norm(self.r)
        rec = IterationRecord(it, resn, self.fevals, alpha, "nonlinear", False, None, extras)
        self.history.append(rec)
        if callback is not None:
            callback(self.x, rec)
        return resn <= self.target

    def result(self, converged: bool, termination: str) -> SolveResult:
        return SolveResult(
            self.x, converged, self.history, termination, self.r0, self.fevals, 0
        )


def newton_krylov_solve(
    problem: Problem,
    cfg: NewtonKrylovConfig,
    x0: Optional[np.ndarray] = None,
    callback: Optional[Callable] = None,
) -> SolveResult:
    """Inexact Newton with GMRES inner solves to relative tolerance ``eta_j``."""
    run = _Run(problem, x0, cfg.tol)
    if run.r0 == 0.0:
        return run.result(True, "tolerance")
    forcing = ForcingState(cfg.eta0)
    forcing.update(run.r0)
    alpha0 = 1.0
    for it in range(1, cfg.max_iter + 1):
        eta = forcing.eta
        op = LinearAction(problem, run.x, run.r)
        sol = gmres(op, run.r, cfg.m_max, rtol=eta)
        if not np.any(sol.p_hat):
            return run.result(False, "breakdown")
        ls = cfg.linesearch
        if ls is not None:
            step = line_search(problem, run.x, sol.p_hat, run.r, ls.c1, alpha0, ls.max_backtracks)
            alpha0 = next_alpha0(alpha0, step.backtracks)
            alpha, run.x, run.r = step.alpha, step.x_new, -step.f_new
        else:
            alpha = 1.0
            run.x = run.x + sol.p_hat
            run.r = problem.residual(run.x)
        done = run.record(
            it,
            alpha,
            callback,
            eta=eta,
            inner_steps=sol.steps,
            inner_residual=sol.inner_residual_norm / norm(op.r_at_x),
        )
        if done:
            return run.result(True, "tolerance")
        forcing.update(run.history[-1].resnorm)
    return run.result(False, "max_iter")


def _jacobian_columns(problem, x, cols, r_at_x):
    return [apply_jvp(problem, x, c, r_at_x) for c in cols]


def gauss_newton_coefficients(
    problem: Problem,
    x: np.ndarray,
    P: list,
    gn_max: int = 20,
    f_at_x: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Approximate ``argmin_y ||f(x + P y)||`` by Gauss-Newton from ``y = 0``.

    Each iteration costs ``len(P)`` Jacobian actions and one evaluation of
    ``f``. Returns the best coefficients seen, the residual ``-f`` there and
    the number of iterations used.
    """
    n = len(P)
    y = np.zeros(n)
    f = problem.evaluate(x) if f_at_x is None else f_at_x
    best = (norm(f), y.copy(), f)
    steps = 0
    for steps in range(1, gn_max + 1):
        z = x + sum(yi * pi for yi, pi in zip(y, P))
        Js = _jacobian_columns(problem, z, P, -f)
        G = np.array([[inner(a, b) for b in Js] for a in Js])
        g = np.array([inner(a, f) for a in Js])
        try:
            dy = np.linalg.solve(G, -g)
        except np.linalg.LinAlgError:
            dy = np.linalg.solve(G + 1e-12 * np.eye(n), -g)
        y = y + dy
        f = problem.evaluate(x + sum(yi * pi for yi, pi in zip(y, P)))
        fn = norm(f)
        if fn < best[0]:
            best = (fn, y.copy(), f)
        if norm(dy) <= 1e-12 * (1.0 + norm(y)):
            break
    return best[1], -best[2], steps


def nl_orthomin_solve(
    problem: Problem,
    cfg: OrthominConfig,
    x0: Optional[np.ndarray] = None,
    callback: Optional[Callable] = None,
) -> SolveResult:
    """Nonlinear Orthomin(k): Gauss-Newton coefficients along a window of directions.

    New directions are made conjugate with respect to the current Jacobian,
    ``p_new = r - sum_i beta_i p_i`` with
    ``beta_i = <J r, J p_i> / ||J p_i||^2``.
    """
    run = _Run(problem, x0, cfg.tol)
    if run.r0 == 0.0:
        return run.result(True, "tolerance")
    P: deque = deque([run.r.copy()], maxlen=cfg.k)
    for it in range(1, cfg.max_iter + 1):
        cols = list(P)
        y, r_new, gn_steps = gauss_newton_coefficients(
            problem, run.x, cols, cfg.gn_max, f_at_x=-run.r
        )
        run.x = run.x + sum(yi * pi for yi, pi in zip(y, cols))
        run.r = r_new
        if run.record(it, 1.0, callback, gn_steps=gn_steps):
            return run.result(True, "tolerance")
        Jp = _jacobian_columns(problem, run.x, cols, run.r)
        Jr = apply_jvp(problem, run.x, run.r, run.r)
        p_new = run.r.copy()
        for pi, jpi in zip(cols, Jp):
            den = inner(jpi, jpi)
            if den > 0.0:
                p_new -= (inner(Jr, jpi) / den) * pi
        if not np.any(p_new):
            return run.result(False, "breakdown")
        P.append(p_new)
    return run.result(False, "max_iter")


def anderson_solve(
    problem: Problem,
    cfg: AndersonConfig,
    x0: Optional[np.ndarray] = None,
    callback: Optional[Callable] = None,
) -> SolveResult:
    """Type-II Anderson acceleration of ``g(x) = x + beta f(x)``.

    The mixing coefficients minimize ``||F_j - dF gamma||`` over the window
    of residual differences, with ``F_j = beta f(x_j)``. A rank-deficient
    window falls back to the plain damped step. ``extras['mixing_residual']``
    holds the attained least-squares residual norm.
    """
    run = _Run(problem, x0, cfg.tol)
    if run.r0 == 0.0:
        return run.result(True, "tolerance")
    beta = cfg.beta
    dX: deque = deque(maxlen=max(cfg.k_aa, 1))
    dF: deque = deque(maxlen=max(cfg.k_aa, 1))
    F = -beta * run.r
    for it in range(1, cfg.max_iter + 1):
        x_new = run.x + F
        mixing = norm(F)
        fallback = False
        if cfg.k_aa > 0 and dF:
            A = np.column_stack([d.ravel() for d in dF])
            gamma, _, rank, _ = np.linalg.lstsq(A, F.ravel(), rcond=None)
            if rank < A.shape[1]:
                fallback = True
            else:
                mixing = float(np.linalg.norm(F.ravel() - A @ gamma))
                for gi, dx, df in zip(gamma, dX, dF):
                    x_new = x_new - gi * (dx + df)
        r_new = problem.residual(x_new)
        F_new = -beta * r_new
        if cfg.k_aa > 0:
            dX.append(x_new - run.x)
            dF.append(F_new - F)
        run.x, run.r, F = x_new, r_new, F_new
        if run.record(it, 1.0, callback, mixing_residual=mixing, fallback=fallback):
            return run.result(True, "tolerance")
    return run.result(False, "max_iter")
