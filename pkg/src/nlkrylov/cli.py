"""Command-line experiment runner.

Subcommands
-----------
run              one CSV history per method plus a summary table
compare          one long-format CSV covering all methods
convergence-map  grid of starting points for the singular 2-D problem
bounds           per-step inexact-Newton diagnostics of a single method

Configuration is flat ``key = value`` text. Keys before any section header
belong to ``[experiment]``; the problem lives in ``[problem]`` and each
method in ``[method.LABEL]``. Every key can also be given on the command line
as ``--section.key=value`` (``--key=value`` for experiment keys), and flags
override the file.

Exit codes: 0 on success (including non-converged runs), 2 on usage errors,
3 on numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .baselines import (
    AndersonConfig,
    NewtonKrylovConfig,
    OrthominConfig,
    anderson_solve,
    newton_krylov_solve,
    nl_orthomin_solve,
)
from .errors import BreakdownError, NumericalDomainError, UsageError
from .problems import PROBLEM_ALIASES, REGISTRY, ProblemSpec
from .solver import (
    METHODS,
    AdaptiveConfig,
    LineSearchConfig,
    RestartConfig,
    SolveResult,
    SolverConfig,
    canonical_method,
    solve,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

BASELINES = ("newton_krylov", "nl_orthomin", "anderson")
EXPERIMENT_KEYS = (
    "output",
    "diagnostics",
    "seed",
    "tol",
    "max_iter",
    "methods",
    "x1_range",
    "x2_range",
    "n_grid",
)
KRYLOV_KEYS = (
    "solver", "k", "m", "tol", "max_iter", "diagnostics", "gcro_orthogonalize",
    "adaptive", "theta", "recheck_period", "restart", "C", "tau",
    "linesearch", "c1", "max_backtracks",
)
BASELINE_KEYS = {
    "newton_krylov": ("solver", "m_max", "tol", "max_iter", "eta0", "linesearch", "c1", "max_backtracks"),
    "nl_orthomin": ("solver", "k", "gn_max", "tol", "max_iter"),
    "anderson": ("solver", "k_aa", "beta", "tol", "max_iter"),
}
RUN_HEADER = ["iter", "resnorm", "rel_resnorm", "fevals", "alpha", "mode", "restarted"]
DIAG_HEADER = ["mu", "eta", "c", "theta_ratio"]


def fmt(value) -> str:
    """Deterministic CSV rendering: floats with 17 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.16e}"
    return str(value)


def parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def _parse_int_or_none(text: str) -> Optional[int]:
    t = str(text).strip().lower()
    if t in ("inf", "none", "unbounded"):
        return None
    return int(t)


def _parse_range(text: str) -> tuple[float, float]:
    parts = [p for p in str(text).replace(":", ",").split(",") if p.strip()]
    if len(parts) != 2:
        raise UsageError(f"expected a range 'lo,hi', got {text!r}")
    lo, hi = float(parts[0]), float(parts[1])
    if not lo < hi:
        raise UsageError(f"range {text!r} must satisfy lo < hi")
    return lo, hi


@dataclass
class MethodSpec:
    """A labelled solver with its raw keyword settings."""

    label: str
    solver: str
    options: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    problem: ProblemSpec
    methods: list
    output_path: Path = Path("results")
    emit_diagnostics: bool = False
    seed: int = 0
    tol: float = 1e-10
    max_iter: int = 200
    x1_range: tuple = (-0.1, 0.1)
    x2_range: tuple = (-0.1, 0.1)
    n_grid: int = 200


def read_config_text(text: str) -> dict[str, dict[str, str]]:
    """Parse flat ``key = value`` text; keys before any header go to ``experiment``."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string("[experiment]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"malformed config: {exc}") from None
    return {name: dict(parser[name]) for name in parser.sections()}


def parse_overrides(tokens: list[str]) -> list[tuple[str, str, str]]:
    """``--section.key=value`` tokens as ``(section, key, value)`` triples."""
    out = []
    for tok in tokens:
        if not tok.startswith("--") or "=" not in tok:
            raise UsageError(f"unrecognized argument {tok!r}; use --section.key=value")
        lhs, value = tok[2:].split("=", 1)
        if "." not in lhs:
            section, key = "experiment", lhs
        else:
            section, key = lhs.rsplit(".", 1)
        if section == "experiment" and key == "problem":
            section, key = "problem", "name"
        if not key:
            raise UsageError(f"empty key in {tok!r}")
        out.append((section, key, value))
    return out


def merge_sections(base: dict, overrides: list[tuple[str, str, str]]) -> dict:
    merged = {name: dict(body) for name, body in base.items()}
    for section, key, value in overrides:
        merged.setdefault(section, {})[key] = value
    return merged


def _canonical_solver(name: str) -> str:
    low = name.lower()
    if low in BASELINES:
        return low
    if low in ("newton", "nk"):
        return "newton_krylov"
    if low in ("orthomin", "nlorthomin"):
        return "nl_orthomin"
    if low in ("aa",):
        return "anderson"
    try:
        return canonical_method(name)
    except UsageError:
        known = ", ".join(METHODS + BASELINES)
        raise UsageError(f"unknown method {name!r}; known: {known}") from None


def build_experiment(sections: dict) -> ExperimentConfig:
    exp = dict(sections.get("experiment", {}))
    for key in exp:
        if key not in EXPERIMENT_KEYS:
            raise UsageError(
                f"unknown experiment key {key!r}; known: {', '.join(EXPERIMENT_KEYS)}"
            )
    unknown = [
        s for s in sections if s not in ("experiment", "problem") and not s.startswith("method.")
    ]
    if unknown:
        raise UsageError(f"unknown section {unknown[0]!r}; use [problem] or [method.LABEL]")

    prob = dict(sections.get("problem", {}))
    name = prob.pop("name", "singular2d")
    x0_rule = prob.pop("x0", "default")
    try:
        seed = int(exp.get("seed", 0))
        tol = float(exp.get("tol", 1e-10))
        max_iter = int(exp.get("max_iter", 200))
        n_grid = int(exp.get("n_grid", 200))
    except ValueError as exc:
        raise UsageError(f"bad experiment value: {exc}") from None
    key = PROBLEM_ALIASES.get(name, name)
    if key in REGISTRY and "seed" in REGISTRY[key][1] and "seed" not in prob:
        prob["seed"] = str(seed)

    defined = {}
    for section, body in sections.items():
        if not section.startswith("method."):
            continue
        label = section[len("method."):]
        if not label:
            raise UsageError("empty method label in [method.]")
        defined[label] = MethodSpec(label, _canonical_solver(body.get("solver", label)), dict(body))
    # an explicit list picks labels (or plain method names) in order, repeats allowed
    listed = [e.strip() for e in exp.get("methods", "").split(",") if e.strip()]
    if listed:
        methods = [defined.get(e) or MethodSpec(e, _canonical_solver(e), {}) for e in listed]
    else:
        methods = list(defined.values())
    return ExperimentConfig(
        problem=ProblemSpec(name, prob, x0_rule),
        methods=methods,
        output_path=Path(exp.get("output", "results")),
        emit_diagnostics=parse_bool(exp.get("diagnostics", "false")),
        seed=seed,
        tol=tol,
        max_iter=max_iter,
        x1_range=_parse_range(exp.get("x1_range", "-0.1,0.1")),
        x2_range=_parse_range(exp.get("x2_range", "-0.1,0.1")),
        n_grid=n_grid,
    )


def _check_keys(spec: MethodSpec, allowed) -> None:
    for key in spec.options:
        if key not in allowed:
            raise UsageError(
                f"method {spec.label!r} ({spec.solver}) has no option {key!r}; "
                f"known: {', '.join(allowed)}"
            )


def _linesearch_from(opts: dict, default_on: bool = True) -> Optional[LineSearchConfig]:
    if not parse_bool(opts.get("linesearch", str(default_on))):
        return None
    return LineSearchConfig(
        c1=float(opts.get("c1", 1e-3)), max_backtracks=int(opts.get("max_backtracks", 20))
    )


def make_solver_config(spec: MethodSpec, exp: ExperimentConfig, force_diag: bool = False):
    """Turn a method's string options into its configuration dataclass."""
    opts = spec.options
    tol = float(opts.get("tol", exp.tol))
    max_iter = int(opts.get("max_iter", exp.max_iter))
    try:
        if spec.solver == "newton_krylov":
            _check_keys(spec, BASELINE_KEYS["newton_krylov"])
            return NewtonKrylovConfig(
                m_max=int(opts.get("m_max", 100)),
                tol=tol,
                max_iter=max_iter,
                eta0=float(opts.get("eta0", 1.0 / 3.0)),
                linesearch=_linesearch_from(opts),
            )
        if spec.solver == "nl_orthomin":
            _check_keys(spec, BASELINE_KEYS["nl_orthomin"])
            return OrthominConfig(
                k=int(opts.get("k", 10)), gn_max=int(opts.get("gn_max", 20)), tol=tol, max_iter=max_iter
            )
        if spec.solver == "anderson":
            _check_keys(spec, BASELINE_KEYS["anderson"])
            return AndersonConfig(
                k_aa=int(opts.get("k_aa", 10)), beta=float(opts.get("beta", 1.0)), tol=tol, max_iter=max_iter
            )
        _check_keys(spec, KRYLOV_KEYS)
        adaptive = None
        if parse_bool(opts.get("adaptive", "theta" in opts)):
            adaptive = AdaptiveConfig(
                theta=float(opts.get("theta", 1e-3)),
                recheck_period=int(opts.get("recheck_period", 5)),
            )
        restart = None
        if parse_bool(opts.get("restart", "true")):
            restart = RestartConfig(C=float(opts.get("C", 1.0)), tau=float(opts.get("tau", 1e3)))
        return SolverConfig(
            method=spec.solver,
            k=_parse_int_or_none(opts.get("k", "10")),
            m=int(opts.get("m", 10)),
            tol=tol,
            max_iter=max_iter,
            adaptive=adaptive,
            restart=restart,
            linesearch=_linesearch_from(opts),
            diagnostics=force_diag or exp.emit_diagnostics or parse_bool(opts.get("diagnostics", "false")),
            gcro_orthogonalize=parse_bool(opts.get("gcro_orthogonalize", "true")),
        )
    except ValueError as exc:
        raise UsageError(f"bad option for method {spec.label!r}: {exc}") from None


def run_method(spec: MethodSpec, exp: ExperimentConfig, force_diag: bool = False,
               x0: Optional[np.ndarray] = None, callback: Optional[Callable] = None) -> SolveResult:
    """Build a fresh problem and run one method on it."""
    cfg = make_solver_config(spec, exp, force_diag)
    problem = exp.problem.build()
    if x0 is None:
        x0 = initial_guess(exp.problem, problem, exp.seed)
    if spec.solver == "newton_krylov":
        return newton_krylov_solve(problem, cfg, x0, callback)
    if spec.solver == "nl_orthomin":
        return nl_orthomin_solve(problem, cfg, x0, callback)
    if spec.solver == "anderson":
        return anderson_solve(problem, cfg, x0, callback)
    return solve(problem, cfg, x0, callback)


def initial_guess(pspec: ProblemSpec, problem, seed: int) -> np.ndarray:
    """``default`` keeps the problem's own guess; ``zeros``, ``ones`` and
    ``random`` (seeded standard normal) replace it."""
    base = problem.x0
    rule = pspec.x0_rule
    if rule == "default":
        return base
    if rule == "zeros":
        return np.zeros_like(base)
    if rule == "ones":
        return np.ones_like(base)
    if rule == "random":
        return np.random.default_rng(seed).standard_normal(base.shape)
    raise UsageError(f"unknown x0 rule {rule!r}; known: default, zeros, ones, random")


def history_rows(result: SolveResult, with_diag: bool) -> list[list[str]]:
    rows = []
    r0 = result.r0_norm
    for rec in result.history:
        rel = rec.resnorm / r0 if r0 > 0 else 0.0
        row = [rec.iter, rec.resnorm, rel, rec.fevals, float(rec.alpha), rec.mode, rec.restarted]
        if with_diag:
            d = rec.diag
            row += [math.nan] * 4 if d is None else [d.mu, d.eta, d.c, d.theta_ratio]
        rows.append([fmt(v) for v in row])
    return rows


def write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from None


def _summary_line(label: str, res: SolveResult) -> str:
    rel = res.history[-1].resnorm / res.r0_norm if res.history and res.r0_norm > 0 else 0.0
    return (
        f"{label:<16} converged={str(res.converged).lower():<5} iters={res.iterations:<5d} "
        f"fevals={res.fevals:<7d} rel_resnorm={rel:.3e} termination={res.termination}"
    )


def _require_methods(exp: ExperimentConfig, minimum: int) -> None:
    if len(exp.methods) < minimum:
        raise UsageError(
            f"need at least {minimum} method(s); add [method.LABEL] sections or --methods=a,b"
        )


def run_cmd(exp: ExperimentConfig, out=sys.stdout) -> int:
    """One CSV per method under the output directory and a summary table."""
    _require_methods(exp, 1)
    labels = set()
    for spec in exp.methods:
        label = spec.label
        n = 2
        while label in labels:
            label = f"{spec.label}_{n}"
            n += 1
        labels.add(label)
        res = run_method(spec, exp)
        with_diag = spec.solver in METHODS and make_solver_config(spec, exp).diagnostics
        header = RUN_HEADER + (DIAG_HEADER if with_diag else [])
        write_csv(exp.output_path / f"{label}.csv", header, history_rows(res, with_diag))
        print(_summary_line(label, res), file=out)
    return EXIT_OK


def compare_cmd(exp: ExperimentConfig, out=sys.stdout) -> int:
    """Long-format ``method,iter,resnorm,fevals`` CSV at ``output/compare.csv``."""
    _require_methods(exp, 2)
    rows = []
    for spec in exp.methods:
        res = run_method(spec, exp)
        for rec in res.history:
            rows.append([spec.label, fmt(rec.iter), fmt(rec.resnorm), fmt(rec.fevals)])
        print(_summary_line(spec.label, res), file=out)
    write_csv(exp.output_path / "compare.csv", ["method", "iter", "resnorm", "fevals"], rows)
    return EXIT_OK


def mean_contraction(result: SolveResult) -> float:
    """Geometric mean of successive residual ratios over the run."""
    if result.iterations == 0 or result.r0_norm == 0.0:
        return 0.0
    final = result.history[-1].resnorm
    if final == 0.0:
        return 0.0
    return float((final / result.r0_norm) ** (1.0 / result.iterations))


def convergence_map_rows(spec: MethodSpec, exp: ExperimentConfig) -> list[list[str]]:
    if exp.n_grid < 2:
        raise UsageError("n_grid must be >= 2")
    x1s = np.linspace(*exp.x1_range, exp.n_grid)
    x2s = np.linspace(*exp.x2_range, exp.n_grid)
    rows = []
    for x2 in x2s:
        for x1 in x1s:
            try:
                res = run_method(spec, exp, x0=np.array([x1, x2]))
                iters, conv, mc = res.iterations, res.converged, mean_contraction(res)
            except (NumericalDomainError, BreakdownError):
                iters, conv, mc = 0, False, math.nan
            rows.append([fmt(float(x1)), fmt(float(x2)), fmt(iters), fmt(conv), fmt(mc)])
    return rows


def convergence_map_cmd(exp: ExperimentConfig, out=sys.stdout) -> int:
    """Grid sweep of starting points for the singular 2-D problem."""
    _require_methods(exp, 1)
    if exp.problem.name != "singular2d":
        raise UsageError("convergence-map supports only problem singular2d")
    for spec in exp.methods:
        rows = convergence_map_rows(spec, exp)
        name = "convergence_map.csv" if len(exp.methods) == 1 else f"convergence_map_{spec.label}.csv"
        write_csv(exp.output_path / name, ["x1", "x2", "iters", "converged", "mean_contraction"], rows)
        nconv = sum(r[3] == "1" for r in rows)
        print(f"{spec.label:<16} grid={exp.n_grid}x{exp.n_grid} converged={nconv}/{len(rows)}", file=out)
    return EXIT_OK


def bounds_rows(res: SolveResult) -> tuple[list[list[str]], float]:
    """Rows ``iter,mu,eta,c_j,theta_ratio,c_uniform`` and the fraction with
    ``theta_ratio <= c_j``."""
    diags = [(rec.iter, rec.diag) for rec in res.history if rec.diag is not None]
    if not diags:
        return [], 1.0
    c_uniform = max(d.c for _, d in diags)
    rows = [
        [fmt(it), fmt(d.mu), fmt(d.eta), fmt(d.c), fmt(d.theta_ratio), fmt(c_uniform)]
        for it, d in diags
    ]
    ok = sum(d.theta_ratio <= d.c + 1e-10 for _, d in diags)
    return rows, ok / len(diags)


def bounds_cmd(exp: ExperimentConfig, out=sys.stdout) -> int:
    """Diagnostics trace of a single nonlinear Krylov method."""
    if len(exp.methods) != 1:
        raise UsageError("bounds takes exactly one method")
    spec = exp.methods[0]
    if spec.solver not in METHODS:
        raise UsageError(f"bounds needs a nonlinear Krylov method, got {spec.solver!r}")
    res = run_method(spec, exp, force_diag=True)
    rows, frac = bounds_rows(res)
    write_csv(
        exp.output_path / "bounds.csv",
        ["iter", "mu", "eta", "c_j", "theta_ratio", "c_uniform"],
        rows,
    )
    print(_summary_line(spec.label, res), file=out)
    print(f"theta_ratio <= c_j on {frac:.3f} of {len(rows)} steps", file=out)
    return EXIT_OK


COMMANDS = {
    "run": run_cmd,
    "compare": compare_cmd,
    "convergence-map": convergence_map_cmd,
    "bounds": bounds_cmd,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlkrylov",
        allow_abbrev=False,
        description="Run nonlinear Krylov experiments and write CSV histories.",
        epilog=(
            "Settings: --config FILE and/or --section.key=value flags, e.g. "
            "--problem.name=bratu --problem.N=50 --method.gmresr.solver=nlGMRESR "
            "--method.gmresr.m=20 --output=out."
        ),
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, help="flat key = value config file")
    return parser


def main(argv: Optional[list[str]] = None, out=sys.stdout) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args, rest = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        base = {}
        if args.config is not None:
            try:
                text = args.config.read_text()
            except OSError as exc:
                raise UsageError(f"cannot read config: {exc}") from None
            base = read_config_text(text)
        exp = build_experiment(merge_sections(base, parse_overrides(rest)))
        return COMMANDS[args.command](exp, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalDomainError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
