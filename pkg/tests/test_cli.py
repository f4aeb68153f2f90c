import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from _oracles import gmres_residuals, well_conditioned
from nlkrylov.cli import (
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_USAGE,
    RUN_HEADER,
    build_experiment,
    fmt,
    main,
    merge_sections,
    parse_overrides,
    read_config_text,
)


def run(argv):
    out = io.StringIO()
    code = main(argv, out=out)
    return code, out.getvalue()


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestFormatting:
    def test_float_digits(self):
        assert fmt(0.1) == "1.0000000000000001e-01"
        assert float(fmt(np.pi)) == np.pi

    def test_int_and_bool(self):
        assert fmt(3) == "3" and fmt(True) == "1" and fmt(np.int64(4)) == "4"


class TestConfigParsing:
    def test_implicit_experiment_section(self):
        sections = read_config_text("tol = 1e-8\n[problem]\nname = bratu\nN = 4\n")
        assert sections["experiment"]["tol"] == "1e-8"
        assert sections["problem"] == {"name": "bratu", "N": "4"}

    def test_override_forms(self):
        got = parse_overrides(["--tol=1e-6", "--problem=bratu", "--method.a.k=3"])
        assert got == [("experiment", "tol", "1e-6"), ("problem", "name", "bratu"),
                       ("method.a", "k", "3")]

    @pytest.mark.parametrize("token", ["tol=1", "--tol", "--=3"])
    def test_bad_override(self, token):
        assert run(["run", token])[0] == EXIT_USAGE

    def test_flags_override_file(self, tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text(f"output = {tmp_path / 'a'}\n[problem]\nname = bratu\nN = 3\n"
                       "[method.g]\nsolver = nlGCR\nk = 2\n")
        code, _ = run(["run", "--config", str(cfg), f"--output={tmp_path / 'b'}",
                       "--problem.N=4"])
        assert code == EXIT_OK
        assert not (tmp_path / "a").exists()
        exp = build_experiment(merge_sections(read_config_text(cfg.read_text()),
                                              parse_overrides(["--problem.N=4"])))
        assert exp.problem.params["N"] == "4" and exp.methods[0].options["k"] == "2"

    def test_methods_list_resolves_sections(self):
        exp = build_experiment({"experiment": {"methods": "a, nlGMRESR, a"},
                                "method.a": {"solver": "nlGCR", "k": "2"}})
        assert [m.label for m in exp.methods] == ["a", "nlGMRESR", "a"]
        assert exp.methods[0].solver == "nlGCR" and exp.methods[1].solver == "nlGMRESR"


class TestExitCodes:
    def test_unknown_problem(self, tmp_path, capsys):
        code, _ = run(["run", "--problem=nope", "--methods=nlGCR", f"--output={tmp_path}"])
        assert code == EXIT_USAGE
        assert "bratu" in capsys.readouterr().err

    def test_unknown_method(self, tmp_path, capsys):
        code, _ = run(["run", "--methods=magic", f"--output={tmp_path}"])
        assert code == EXIT_USAGE
        assert "nlGMRESR" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "argv",
        [["frobnicate"], ["run"], ["run", "--colour=red", "--methods=nlGCR"],
         ["run", "--section.x.y=1", "--methods=nlGCR"], ["run", "--methods=nlGCR", "--method.nlGCR.zz=1"],
         ["run", "--config", "/nonexistent/cfg"], ["compare", "--methods=nlGCR"],
         ["bounds", "--methods=anderson"], ["convergence-map", "--problem=bratu", "--methods=nlGCR"],
         ["run", "--methods=nlGCR", "--problem.x0=sideways"]],
    )
    def test_usage_errors(self, argv, tmp_path):
        assert run(argv + [f"--output={tmp_path}"])[0] == EXIT_USAGE

    def test_numerical_failure(self, tmp_path):
        code, _ = run(["run", "--problem=lj", "--problem.cells=1", "--problem.x0=zeros",
                       "--methods=nlGCR", f"--output={tmp_path}"])
        assert code == EXIT_NUMERICAL

    def test_not_converged_is_success(self, tmp_path):
        code, out = run(["run", "--problem=bratu", "--problem.N=6", "--methods=nlGCR",
                         "--max_iter=2", f"--output={tmp_path}"])
        assert code == EXIT_OK and "converged=false" in out

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "nlkrylov", "run", "--methods=nlGCR", f"--output={tmp_path}"],
            capture_output=True, text=True,
        )
        assert proc.returncode == EXIT_OK
        assert (tmp_path / "nlGCR.csv").exists()


class TestRun:
    def test_header_rows_and_summary(self, tmp_path):
        code, out = run(["run", "--problem=bratu", "--problem.N=6", "--methods=nlGCR,nlGMRESR",
                         f"--output={tmp_path}"])
        assert code == EXIT_OK
        for label in ("nlGCR", "nlGMRESR"):
            rows = read_rows(tmp_path / f"{label}.csv")
            assert rows[0] == RUN_HEADER
            iters = int(out.split(f"{label} ")[1].split("iters=")[1].split()[0])
            assert len(rows) - 1 == iters

    @pytest.mark.filterwarnings("ignore::nlkrylov.ip_space.ConditionWarning")
    def test_byte_deterministic(self, tmp_path):
        argv = ["run", "--problem=linear", "--problem.n=12", "--seed=3", "--methods=nlLGMRESO"]
        run(argv + [f"--output={tmp_path / 'a'}"])
        run(argv + [f"--output={tmp_path / 'b'}"])
        a = (tmp_path / "a" / "nlLGMRESO.csv").read_bytes()
        assert a == (tmp_path / "b" / "nlLGMRESO.csv").read_bytes()

    def test_duplicate_labels_deduplicated(self, tmp_path):
        run(["run", "--methods=nlGCR,nlGCR", f"--output={tmp_path}"])
        a = read_rows(tmp_path / "nlGCR.csv")
        assert a == read_rows(tmp_path / "nlGCR_2.csv")

    def test_linear_matches_gmres_oracle(self, tmp_path):
        code, _ = run(["run", "--problem=linear", "--problem.n=30", "--seed=21",
                       "--method.g.solver=nlGCR", "--method.g.k=inf", "--method.g.linesearch=false",
                       "--tol=1e-7", f"--output={tmp_path}"])
        assert code == EXIT_OK
        rows = read_rows(tmp_path / "g.csv")[1:]
        rel = np.array([float(r[2]) for r in rows])
        A, b = well_conditioned(30, 21)
        np.testing.assert_allclose(rel, gmres_residuals(A, b, 30)[: rel.size], rtol=1e-8)

    def test_diagnostics_do_not_change_trajectory(self, tmp_path):
        base = ["run", "--problem=bratu", "--problem.N=6", "--methods=nlGMRESR"]
        run(base + [f"--output={tmp_path / 'plain'}"])
        run(base + ["--diagnostics=true", f"--output={tmp_path / 'diag'}"])
        plain = read_rows(tmp_path / "plain" / "nlGMRESR.csv")
        diag = read_rows(tmp_path / "diag" / "nlGMRESR.csv")
        assert diag[0][-4:] == ["mu", "eta", "c", "theta_ratio"]
        assert [r[:7] for r in diag] == plain

    def test_baselines_run(self, tmp_path):
        code, _ = run(["run", "--problem=hequation", "--problem.n=30", "--problem.omega=0.5",
                       "--methods=newton_krylov,nl_orthomin,anderson",
                       "--method.anderson.beta=1.0", f"--output={tmp_path}"])
        assert code == EXIT_OK
        for label in ("newton_krylov", "nl_orthomin", "anderson"):
            assert read_rows(tmp_path / f"{label}.csv")[0] == RUN_HEADER


class TestCompare:
    def test_long_format_and_repeats(self, tmp_path):
        code, _ = run(["compare", "--problem=hequation", "--problem.n=40",
                       "--methods=nlGCR,newton_krylov,nlGCR", f"--output={tmp_path}"])
        assert code == EXIT_OK
        rows = read_rows(tmp_path / "compare.csv")
        assert rows[0] == ["method", "iter", "resnorm", "fevals"]
        blocks = {}
        for r in rows[1:]:
            blocks.setdefault(r[0], []).append(r)
        gcr = blocks["nlGCR"]
        half = len(gcr) // 2
        assert gcr[:half] == gcr[half:]
        assert "newton_krylov" in blocks


class TestConvergenceMap:
    def test_grid_rows(self, tmp_path):
        code, _ = run(["convergence-map", "--methods=nlGCR", "--method.nlGCR.k=2", "--n_grid=3",
                       f"--output={tmp_path}"])
        assert code == EXIT_OK
        rows = read_rows(tmp_path / "convergence_map.csv")
        assert rows[0] == ["x1", "x2", "iters", "converged", "mean_contraction"]
        assert len(rows) == 10
        centre = rows[1 + 4]
        assert float(centre[0]) == 0.0 and float(centre[1]) == 0.0
        assert centre[2] == "0" and centre[3] == "1"

    def test_axis_directions(self, tmp_path):
        run(["convergence-map", "--methods=nlGCR", "--method.nlGCR.k=2", "--n_grid=3",
             f"--output={tmp_path}"])
        rows = read_rows(tmp_path / "convergence_map.csv")[1:]
        # x2 runs in the outer loop over [-0.1, 0, 0.1]
        on_x1 = rows[3 * 1 + 2]
        on_x2 = rows[3 * 2 + 1]
        assert [float(v) for v in on_x1[:2]] == [0.1, 0.0]
        assert [float(v) for v in on_x2[:2]] == [0.0, 0.1]
        assert int(on_x1[2]) < int(on_x2[2])

    def test_small_grid_rejected(self, tmp_path):
        assert run(["convergence-map", "--methods=nlGCR", "--n_grid=1",
                    f"--output={tmp_path}"])[0] == EXIT_USAGE


class TestBounds:
    def test_bratu_bounds(self, tmp_path):
        code, out = run(["bounds", "--problem=bratu", "--problem.N=8", "--methods=g",
                         "--method.g.solver=nlGMRESR", "--method.g.m=8", "--method.g.k=10",
                         f"--output={tmp_path}"])
        assert code == EXIT_OK
        rows = read_rows(tmp_path / "bounds.csv")
        assert rows[0] == ["iter", "mu", "eta", "c_j", "theta_ratio", "c_uniform"]
        vals = np.array([[float(v) for v in r] for r in rows[1:]])
        assert np.all(vals[:, 4] <= vals[:, 3] + 1e-10)
        assert np.all(vals[:, 5] == vals[:, 3].max())
        assert "on 1.000 of" in out

    def test_linear_mu_zero(self, tmp_path):
        run(["bounds", "--problem=linear", "--problem.n=10", "--methods=nlGCR",
             "--method.nlGCR.linesearch=false", f"--output={tmp_path}"])
        rows = read_rows(tmp_path / "bounds.csv")[1:]
        # zero up to roundoff in forming the paired image basis
        assert rows and all(float(r[1]) <= 1e-12 for r in rows)

    def test_needs_single_method(self, tmp_path):
        assert run(["bounds", "--methods=nlGCR,nlGMRESR", f"--output={tmp_path}"])[0] == EXIT_USAGE
