"""Nonlinear Krylov solvers (nlGCR, nlGMRESR, nlGCRO, nlLGMRESO) for f(x) = 0.

Elements may be vectors or matrices; the matrix case uses the trace inner
product, which turns every method into its global counterpart.
"""

from .baselines import (
    AndersonConfig,
    NewtonKrylovConfig,
    OrthominConfig,
    anderson_solve,
    newton_krylov_solve,
    nl_orthomin_solve,
)
from .errors import BreakdownError, NumericalDomainError, UsageError
from .inner import InnerResult, agmres, gcro_inner, gmres
from .ip_space import BlockBasis, block_inner, diamond, gram_schmidt_append, inner, norm
from .operators import EvalCounter, LinearAction, Problem, apply_jvp, frechet
from .problems import (
    build_problem,
    make_bratu,
    make_hequation,
    make_lennard_jones,
    make_linear,
    make_nare,
    make_singular2d,
    random_linear,
)
from .solver import (
    METHODS,
    AdaptiveConfig,
    IterationRecord,
    LineSearchConfig,
    RestartConfig,
    SolveResult,
    SolverConfig,
    solve,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptiveConfig", "AndersonConfig", "BlockBasis", "BreakdownError", "EvalCounter",
    "InnerResult", "IterationRecord", "LineSearchConfig", "LinearAction", "METHODS",
    "NewtonKrylovConfig", "NumericalDomainError", "OrthominConfig", "Problem",
    "RestartConfig", "SolveResult", "SolverConfig", "UsageError", "agmres",
    "anderson_solve", "apply_jvp", "block_inner", "build_problem", "diamond", "frechet",
    "gcro_inner", "gmres", "gram_schmidt_append", "inner", "make_bratu", "make_hequation",
    "make_lennard_jones", "make_linear", "make_nare", "make_singular2d",
    "newton_krylov_solve", "nl_orthomin_solve", "norm", "random_linear", "solve",
]
