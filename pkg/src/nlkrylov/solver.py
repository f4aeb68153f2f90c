"""Outer nonlinear Krylov driver.

The iteration keeps a window of search directions ``P`` and their
(approximate) Jacobian images ``V`` with ``V`` orthonormal. Each step takes
the quasi-Newton update ``x + P V^T r`` (globalized by a backtracking line
search), then asks an inner subroutine for a new direction ``p_hat``
approximately solving ``J p = r`` and appends it after Gram-Schmidt.

Supported subroutines:

``nlGCR``     ``p_hat = r`` (one Jacobian action per step)
``nlGMRESR``  ``m`` steps of GMRES
``nlGCRO``    GMRES on the Jacobian deflated by the current ``V``
``nlLGMRESO`` GMRES on the Krylov space augmented by ``P``

Elements may be vectors or matrices (Frobenius inner product), so the
global-Krylov variants need no separate code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import BreakdownError, NumericalDomainError, UsageError
from .inner import InnerResult, agmres, gcro_inner, gmres
from .ip_space import BlockBasis, block_inner, diamond, gram_schmidt_append, inner, norm
from .operators import LinearAction, Problem, apply_jvp

METHODS = ("nlGCR", "nlGMRESR", "nlGCRO", "nlLGMRESO")
_BY_LOWER = {name.lower(): name for name in METHODS}


def canonical_method(name: str) -> str:
    try:
        return _BY_LOWER[str(name).lower()]
    except KeyError:
        raise UsageError(f"unknown method {name!r}; known: {', '.join(METHODS)}") from None


@dataclass
class LineSearchConfig:
    c1: float = 1e-3
    max_backtracks: int = 20

    def __post_init__(self):
        if not 0.0 < self.c1 < 1.0:
            raise UsageError("c1 must lie in (0, 1)")
        if self.max_backtracks < 0:
            raise UsageError("max_backtracks must be >= 0")


@dataclass
class AdaptiveConfig:
    theta: float = 1e-3
    recheck_period: int = 5

    def __post_init__(self):
        if not self.theta > 0.0:
            raise UsageError("theta must be positive")
        if self.recheck_period < 1:
            raise UsageError("recheck_period must be >= 1")


@dataclass
class RestartConfig:
    C: float = 1.0
    tau: float = 1e3

    def __post_init__(self):
        if not self.tau > 0.0:
            raise UsageError("tau must be positive")
        if self.C < 0.0:
            raise UsageError("C must be nonnegative")


@dataclass
class SolverConfig:
    """Outer solver settings.

    ``k=None`` keeps every direction (untruncated window; not allowed for
    ``nlLGMRESO``, whose inner space depends on ``k``). ``linesearch=None``
    takes full steps, ``restart=None`` disables the conditioning monitor
    and ``adaptive=None`` always evaluates true residuals.
    """

    method: str = "nlGCR"
    k: Optional[int] = 10
    m: int = 10
    tol: float = 1e-10
    max_iter: int = 200
    adaptive: Optional[AdaptiveConfig] = None
    restart: Optional[RestartConfig] = field(default_factory=RestartConfig)
    linesearch: Optional[LineSearchConfig] = field(default_factory=LineSearchConfig)
    diagnostics: bool = False
    gcro_orthogonalize: bool = True

    def __post_init__(self):
        self.method = canonical_method(self.method)
        if not 0.0 < self.tol < 1.0:
            raise UsageError("tol must lie in (0, 1)")
        if self.k is not None and self.k < 1:
            raise UsageError("k must be >= 1")
        if self.k is None and self.method == "nlLGMRESO":
            raise UsageError("nlLGMRESO needs a finite window k")
        if self.m < 1:
            raise UsageError("m must be >= 1")
        if self.max_iter < 0:
            raise UsageError("max_iter must be >= 0")

    @property
    def capacity(self) -> int:
        return self.k if self.k is not None else self.max_iter + 1


@dataclass
class Diagnostics:
    mu: float
    eta: float
    c: float
    theta_ratio: float


@dataclass
class IterationRecord:
    iter: int
    resnorm: float
    fevals: int
    alpha: float
    mode: str
    restarted: bool = False
    diag: Optional[Diagnostics] = None
    extras: dict = field(default_factory=dict)


@dataclass
class SolveResult:
    x_final: np.ndarray
    converged: bool
    history: list
    termination: str
    r0_norm: float
    fevals: int = 0
    diag_fevals: int = 0

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def resnorms(self) -> np.ndarray:
        """Residual norms including the initial one."""
        return np.array([self.r0_norm] + [rec.resnorm for rec in self.history])


@dataclass
class LineSearchResult:
    alpha: float
    x_new: np.ndarray
    f_new: np.ndarray
    negated: bool
    zeta: float
    exhausted: bool
    backtracks: int


def line_search(
    problem: Problem,
    x: np.ndarray,
    d: np.ndarray,
    r: np.ndarray,
    c1: float = 1e-3,
    alpha0: float = 1.0,
    max_backtracks: int = 20,
) -> LineSearchResult:
    """Backtracking Armijo-Goldstein search along ``d`` from ``x``.

    ``r = -f(x)``. The directional slope ``<r, J d>`` is estimated from the
    trial point itself, ``zeta = (||r||^2 + <r, f(x + alpha d)>) / alpha``,
    so each trial costs one evaluation. An ascent estimate flips ``d``.
    After ``max_backtracks`` halvings the last (smallest) step is accepted
    and ``exhausted`` is set.
    """
    if not np.any(d):
        raise UsageError("line search along a zero direction")
    rr = inner(r, r)
    alpha = float(alpha0)

    def trial(direction):
        xn = x + alpha * direction
        fn = problem.evaluate(xn)
        return xn, fn, (rr + inner(r, fn)) / alpha

    x_new, f_new, zeta = trial(d)
    negated = False
    if zeta < 0.0:
        d = -d
        negated = True
        x_new, f_new, zeta = trial(d)
    backtracks = 0
    exhausted = False
    while inner(f_new, f_new) > rr - c1 * alpha * zeta:
        if backtracks == max_backtracks:
            exhausted = True
            break
        alpha *= 0.5
        backtracks += 1
        x_new, f_new, zeta = trial(d)
    return LineSearchResult(alpha, x_new, f_new, negated, zeta, exhausted, backtracks)


def linear_model_step(
    r: np.ndarray, Vy: np.ndarray, c1: float, alpha0: float, max_backtracks: int
) -> tuple[float, int]:
    """Armijo-Goldstein backtracking on the linear model ``r - alpha V y``.

    Costs no evaluations. Returns the accepted step and the number of halvings.
    """
    rr = inner(r, r)
    zeta = inner(r, Vy)
    alpha, backtracks = float(alpha0), 0
    while backtracks < max_backtracks:
        res = r - alpha * Vy
        if inner(res, res) <= rr - c1 * alpha * zeta:
            break
        alpha *= 0.5
        backtracks += 1
    return alpha, backtracks


def next_alpha0(alpha0: float, backtracks: int) -> float:
    """Initial step for the following search: grow after a clean accept, else shrink."""
    return min(1.0, 2.0 * alpha0) if backtracks == 0 else 0.5 * alpha0


def misalignment(r_nl: np.ndarray, r_lin: np.ndarray) -> float:
    """``1 - cos`` of the angle between true and linearized residuals.

    Returns ``inf`` when either is zero, which never triggers a switch.
    """
    a, b = norm(r_nl), norm(r_lin)
    if a == 0.0 or b == 0.0:
        return math.inf
    return 1.0 - inner(r_nl, r_lin) / (a * b)


def _inf_norm(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if a.size else 0.0


def restart_weight(betas, old_weights, p_inf: float, v_norm: float, C: float) -> float:
    """Propagated error weight of a freshly appended direction."""
    acc = C * p_inf + float(np.dot(np.abs(betas), np.asarray(old_weights, dtype=float)))
    return acc / v_norm


def seed_basis(P: BlockBasis, V: BlockBasis, p_hat, v_hat, C: float = 1.0) -> None:
    """Clear the window and start it from the normalized pair ``(p_hat, v_hat)``."""
    nv = norm(v_hat)
    if not np.isfinite(nv) or nv == 0.0:
        raise BreakdownError("cannot seed from a zero image")
    P.clear()
    V.clear()
    P.append(p_hat / nv)
    V.append(v_hat / nv, C * _inf_norm(p_hat) / nv)


def append_direction(
    P: BlockBasis,
    V: BlockBasis,
    p_hat: np.ndarray,
    v_hat: np.ndarray,
    restart: Optional[RestartConfig],
    orthogonalize: bool = True,
) -> bool:
    """Append a new pair, restarting the window if it is ill-conditioned.

    A Gram-Schmidt breakdown or a weight above ``restart.tau`` re-seeds the
    window from the raw pair. Returns whether a restart happened.
    """
    C = restart.C if restart is not None else 1.0
    # weights of the columns that survive the window eviction
    old = list(V.weights)[1:] if V.full else list(V.weights)
    if not orthogonalize:
        nv = norm(v_hat)
        if nv == 0.0:
            seed_basis(P, V, p_hat, v_hat, C)
            return True
        if P.full:
            P.drop_oldest()
            V.drop_oldest()
        P.append(p_hat / nv)
        V.append(v_hat / nv)
        betas, post = np.zeros(len(old)), nv
    else:
        try:
            betas, post = gram_schmidt_append(P, V, p_hat, v_hat)
        except BreakdownError:
            seed_basis(P, V, p_hat, v_hat, C)
            return True
    w = restart_weight(betas, old, _inf_norm(p_hat), post, C)
    V.weights[-1] = w
    if restart is not None and w > restart.tau:
        seed_basis(P, V, p_hat, v_hat, C)
        return True
    return False


def _gcr_direction(op: LinearAction, r: np.ndarray) -> InnerResult:
    start = op.problem.counter_for(op.charge).total
    v = op.plain(r)
    used = op.problem.counter_for(op.charge).total - start
    return InnerResult(r.copy(), v, 0.0, used, [], 1)


def subroutine_dispatch(
    method: str,
    r: np.ndarray,
    op: LinearAction,
    P: BlockBasis,
    V: BlockBasis,
    m: int,
    k: Optional[int],
    mode: str = "nonlinear",
) -> InnerResult:
    """New search direction for the current residual ``r`` and Jacobian ``op``."""
    method = canonical_method(method)
    if method == "nlGCR":
        return _gcr_direction(op, r)
    if method == "nlGMRESR":
        return gmres(op, r, m)
    if method == "nlGCRO":
        return gcro_inner(op.deflated(V), P, r, m)
    return agmres(op, r, m, k, P, V if mode == "linear" else None)


def seed_direction(method: str, r: np.ndarray, op: LinearAction, m: int, k: Optional[int]) -> InnerResult:
    """First direction of a fresh window (no stored basis to deflate or augment)."""
    method = canonical_method(method)
    if method == "nlGCR":
        return _gcr_direction(op, r)
    if method == "nlLGMRESO":
        return gmres(op, r, m + k)
    return gmres(op, r, m)


def bound_diagnostics(
    problem: Problem, x: np.ndarray, r: np.ndarray, P: BlockBasis, V: BlockBasis, y: np.ndarray
) -> Diagnostics:
    """Inexact-Newton quantities of the undamped step ``P y`` at ``x``.

    ``mu = ||J P y - V y|| / ||f||``, ``eta = ||f + V y|| / ||f||``,
    ``c = mu + eta`` and ``theta_ratio = ||J P y + f|| / ||f||``. One
    Jacobian action, charged to the diagnostics counter.
    """
    rn = norm(r)
    if rn == 0.0:
        return Diagnostics(0.0, 0.0, 0.0, 0.0)
    d = diamond(P, y)
    Vy = diamond(V, y)
    Jd = apply_jvp(problem, x, d, r, charge="diag")
    mu = norm(Jd - Vy) / rn
    eta = norm(r - Vy) / rn
    return Diagnostics(mu, eta, mu + eta, norm(Jd - r) / rn)


def solve(
    problem: Problem,
    cfg: SolverConfig,
    x0: Optional[np.ndarray] = None,
    callback: Optional[Callable[[np.ndarray, IterationRecord], None]] = None,
) -> SolveResult:
    """Solve ``f(x) = 0`` with the configured nonlinear Krylov method.

    Convergence means ``||f(x)|| <= tol * ||f(x0)||`` for a true residual.
    ``callback(x, record)`` is invoked after every outer step.
    """
    if x0 is None:
        x0 = problem.x0
    if x0 is None:
        raise UsageError("no initial guess")
    x = np.array(x0, dtype=float, copy=True)
    if not np.all(np.isfinite(x)):
        raise UsageError("initial guess is not finite")
    counter, dcounter = problem.counter, problem.diag_counter
    f0, d0 = counter.total, dcounter.total

    r = problem.residual(x)
    r0 = norm(r)
    history: list[IterationRecord] = []

    def result(converged, termination):
        return SolveResult(
            x, converged, history, termination, r0, counter.total - f0, dcounter.total - d0
        )

    if r0 == 0.0:
        return result(True, "tolerance")
    target = cfg.tol * r0
    P, V = BlockBasis(cfg.capacity), BlockBasis(cfg.capacity)
    C = cfg.restart.C if cfg.restart is not None else 1.0
    ortho = cfg.method != "nlGCRO" or cfg.gcro_orthogonalize

    def reseed(op: LinearAction, rr: np.ndarray) -> bool:
        res = seed_direction(cfg.method, rr, op, cfg.m, cfg.k)
        try:
            seed_basis(P, V, res.p_hat, res.v_hat, C)
        except BreakdownError:
            if cfg.method == "nlGMRESR":
                return False
            # fall back to a plain GMRES direction
            res = gmres(op, rr, cfg.m)
            try:
                seed_basis(P, V, res.p_hat, res.v_hat, C)
            except BreakdownError:
                return False
        return True

    if not reseed(LinearAction(problem, x, r), r):
        return result(False, "breakdown")

    mode = "nonlinear"
    alpha0 = 1.0
    since_check = 0
    adaptive = cfg.adaptive
    ls = cfg.linesearch

    for it in range(1, cfg.max_iter + 1):
        y = block_inner(V, r)
        d = diamond(P, y)
        Vy = diamond(V, y)
        diag = None
        if cfg.diagnostics and mode == "nonlinear":
            diag = bound_diagnostics(problem, x, r, P, V, y)
        extras: dict = {}
        restarted = False
        true_residual = True
        alpha = 1.0

        if mode == "nonlinear":
            if not np.any(d):
                x_new, f_new, sign = x, -r, 1.0
            elif ls is not None:
                step = line_search(problem, x, d, r, ls.c1, alpha0, ls.max_backtracks)
                alpha, x_new, f_new = step.alpha, step.x_new, step.f_new
                sign = -1.0 if step.negated else 1.0
                alpha0 = next_alpha0(alpha0, step.backtracks)
                extras.update(
                    backtracks=step.backtracks, negated=step.negated, ls_exhausted=step.exhausted
                )
            else:
                x_new, sign = x + d, 1.0
                f_new = problem.evaluate(x_new)
            r_nl = -f_new
            if adaptive is not None:
                r_lin = r - (sign * alpha) * Vy
                theta = misalignment(r_nl, r_lin)
                extras["misalignment"] = theta
                if theta < adaptive.theta:
                    mode = "linear"
                    since_check = 0
            x, r = x_new, r_nl
        else:
            if ls is not None and np.any(Vy):
                alpha, bt = linear_model_step(r, Vy, ls.c1, alpha0, ls.max_backtracks)
                alpha0 = next_alpha0(alpha0, bt)
            x = x + alpha * d
            r_lin = r - alpha * Vy
            since_check += 1
            if since_check >= adaptive.recheck_period or norm(r_lin) <= target:
                since_check = 0
                r_nl = problem.residual(x)
                theta = misalignment(r_nl, r_lin)
                extras["misalignment"] = theta
                r = r_nl
                if theta >= adaptive.theta:
                    mode = "nonlinear"
                    restarted = True
            else:
                r, true_residual = r_lin, False

        resn = norm(r)
        if not np.isfinite(resn):
            raise NumericalDomainError("non-finite residual norm")
        converged = true_residual and resn <= target

        termination = None
        if not converged:
            op = LinearAction(problem, x, r if true_residual else None)
            if restarted:
                if not reseed(op, r):
                    termination = "breakdown"
            else:
                res = subroutine_dispatch(cfg.method, r, op, P, V, cfg.m, cfg.k, mode)
                if res.degenerate:
                    restarted = True
                    if not reseed(op.undeflated(), r):
                        termination = "breakdown"
                else:
                    try:
                        restarted = append_direction(
                            P, V, res.p_hat, res.v_hat, cfg.restart, ortho
                        )
                    except BreakdownError:
                        restarted = True
                        if not reseed(op, r):
                            termination = "breakdown"
                extras["inner_fevals"] = res.fevals_used

        rec = IterationRecord(it, resn, counter.total - f0, alpha, mode, restarted, diag, extras)
        history.append(rec)
        if callback is not None:
            callback(x, rec)
        if converged:
            return result(True, "tolerance")
        if termination is not None:
            return result(False, termination)
    return result(False, "max_iter")
