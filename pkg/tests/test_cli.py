import os
import subprocess
import sys

import numpy as np
import pytest

from stiefel_opt.cli import main
from stiefel_opt.linalg import write_matrix, make_rng


def run_cli(args, tmp_path=None):
    """Invoke the CLI in-process, capturing stdout."""
    import contextlib
    import io

    out = io.StringIO()
    err = io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(args)
    return code, out.getvalue(), err.getvalue()


def read_rows(path, drop_wall=True):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("iter"):
                continue
            parts = line.split(",")
            rows.append(tuple(parts[:5] if drop_wall else parts))
    return rows


def read_comments(path):
    return [l.strip() for l in open(path) if l.startswith("#")]


class TestLev:
    def test_zero_iterations_single_row(self, tmp_path):
        out = tmp_path / "t.csv"
        code, stdout, _ = run_cli(["lev", "--n", "30", "--m", "3", "--iters", "0", "--out", str(out)])
        assert code == 0
        rows = read_rows(out)
        assert len(rows) == 1 and rows[0][0] == "0"

    def test_header_pinned(self, tmp_path):
        out = tmp_path / "t.csv"
        run_cli(["lev", "--n", "20", "--m", "2", "--iters", "5", "--out", str(out)])
        with open(out) as fh:
            assert fh.readline().strip() == "iter,objective,feas,skew,perp,wall_ns"

    def test_deterministic_traces_modulo_wall_clock(self, tmp_path):
        args = ["lev", "--n", "40", "--m", "4", "--seed", "9", "--iters", "100", "--trace-every", "10"]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run_cli(args + ["--out", str(a)])[0] == 0
        assert run_cli(args + ["--out", str(b)])[0] == 0
        assert read_rows(a) == read_rows(b)
        assert read_comments(a) == read_comments(b)

    def test_oracle_gap_comment_in_final_file(self, tmp_path):
        out = tmp_path / "t.csv"
        run_cli(["lev", "--n", "30", "--m", "3", "--iters", "800", "--out", str(out)])
        comments = read_comments(out)
        assert len(comments) == 1 and comments[0].startswith("# oracle_gap ")
        gap = float(comments[0].split()[-1])
        assert -1e-9 <= gap <= 1e-8

    def test_structure_columns_bounded(self, tmp_path):
        out = tmp_path / "t.csv"
        run_cli(["lev", "--n", "50", "--m", "5", "--iters", "500", "--trace-every", "25", "--out", str(out)])
        for row in read_rows(out):
            _, _, feas, skew, perp = row
            assert float(feas) <= 1e-10
            assert float(skew) <= 1e-12
            assert float(perp) <= 1e-10

    def test_adam_and_baseline_kinds(self, tmp_path):
        for opt in ("adam", "cayley-gd"):
            code, stdout, _ = run_cli(
                ["lev", "--n", "20", "--m", "2", "--iters", "50", "--opt", opt]
            )
            assert code == 0 and f"opt={opt}" in stdout

    def test_square_frame_kinds_require_square(self):
        code, _, err = run_cli(["lev", "--n", "10", "--m", "3", "--opt", "son-sgd"])
        assert code == 2
        code, _, _ = run_cli(["lev", "--n", "5", "--m", "5", "--opt", "son-sgd", "--iters", "10"])
        assert code == 0

    def test_timing_sweep_mode(self):
        code, stdout, _ = run_cli(["lev", "--m", "4", "--time-sweep", "100,200"])
        assert code == 0
        assert "loglog_slope=" in stdout

    def test_reference_run_reaches_oracle(self, tmp_path):
        # n=100, m=10, seed 7: the momentum defaults close the oracle gap
        # within 3000 iterations while staying feasible throughout
        out = tmp_path / "ref.csv"
        code, stdout, _ = run_cli(
            ["lev", "--n", "100", "--m", "10", "--seed", "7", "--iters", "3000",
             "--trace-every", "100", "--out", str(out)]
        )
        assert code == 0
        gap = float(read_comments(out)[0].split()[-1])
        assert gap <= 1e-6
        assert all(float(r[2]) <= 1e-10 for r in read_rows(out))

    def test_bad_output_path_is_io_error(self):
        code, _, err = run_cli(
            ["lev", "--n", "10", "--m", "2", "--iters", "1", "--out", "/nonexistent-dir/x.csv"]
        )
        assert code == 4


class TestConfigFiles:
    def test_config_equals_flags(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("n = 30\nm = 3\nseed = 4\niters = 60\ntrace_every = 20\n")
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run_cli(["lev", "--config", str(cfg), "--out", str(a)])[0] == 0
        assert (
            run_cli(
                ["lev", "--n", "30", "--m", "3", "--seed", "4", "--iters", "60",
                 "--trace-every", "20", "--out", str(b)]
            )[0]
            == 0
        )
        assert read_rows(a) == read_rows(b)

    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("n = 30\nm = 3\niters = 5\n")
        code, stdout, _ = run_cli(["lev", "--config", str(cfg), "--iters", "7"])
        assert code == 0 and "iters=7" in stdout

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("frobnicate = 1\n")
        code, _, err = run_cli(["lev", "--config", str(cfg)])
        assert code == 2 and "unknown config key" in err

    def test_malformed_line_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("n 30\n")
        assert run_cli(["lev", "--config", str(cfg)])[0] == 2

    def test_comments_and_blank_lines(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# a comment\n\nn = 20  # trailing\nm = 2\niters = 3\n")
        assert run_cli(["lev", "--config", str(cfg)])[0] == 0


class TestPrwCli:
    def test_synthetic_run(self, tmp_path):
        out = tmp_path / "p.csv"
        code, stdout, _ = run_cli(
            ["prw", "--npoints", "40", "--d", "6", "--iters", "8", "--reg", "1.0", "--out", str(out)]
        )
        assert code == 0
        rows = read_rows(out)
        assert len(rows) == 8
        assert "max_marginal_residual=" in stdout

    def test_degenerate_single_point(self):
        code, stdout, _ = run_cli(["prw", "--npoints", "1", "--d", "3", "--iters", "2", "--reg", "1.0"])
        assert code == 0

    def test_file_loaded_clouds_reproducible(self, tmp_path):
        rng = make_rng(3)
        xs = rng.standard_normal((12, 4))
        ys = rng.standard_normal((12, 4)) + 2.0
        fx, fy = tmp_path / "xs.txt", tmp_path / "ys.txt"
        write_matrix(fx, xs)
        write_matrix(fy, ys)
        outs = []
        for name in ("a", "b"):
            out = tmp_path / f"{name}.csv"
            code, _, _ = run_cli(
                ["prw", "--xs", str(fx), "--ys", str(fy), "--k", "2", "--iters", "5",
                 "--reg", "1.0", "--seed", "5", "--out", str(out)]
            )
            assert code == 0
            outs.append(read_rows(out))
        assert outs[0] == outs[1]

    def test_requires_both_files(self, tmp_path):
        fx = tmp_path / "xs.txt"
        write_matrix(fx, np.zeros((3, 2)))
        assert run_cli(["prw", "--xs", str(fx)])[0] == 2

    def test_missing_file_is_io_error(self):
        code, _, _ = run_cli(["prw", "--xs", "/no/such.txt", "--ys", "/no/such2.txt"])
        assert code == 4

    def test_rejects_square_frame_optimizer(self):
        assert run_cli(["prw", "--opt", "son-sgd"])[0] == 2


class TestOdeCheckCli:
    def test_default_sizes_pass(self):
        code, stdout, _ = run_cli(
            ["ode-check", "--n", "12", "--m", "3", "--t-final", "1.0", "--gamma", "1"]
        )
        assert code == 0
        assert "estimated_order=" in stdout
        order = float(stdout.split("estimated_order=")[1].split()[0])
        assert 0.8 <= order <= 1.2

    def test_zero_friction_rejected(self):
        code, _, err = run_cli(["ode-check", "--gamma", "0"])
        assert code == 2

    def test_negative_friction_rejected(self):
        assert run_cli(["ode-check", "--gamma", "1,-2"])[0] == 2


class TestSweepCli:
    def test_grid_runs_and_reports(self, tmp_path):
        out_dir = tmp_path / "grid"
        code, stdout, _ = run_cli(
            ["sweep", "--n", "20", "--m", "2", "--iters", "40", "--a-list", "0,0.5",
             "--phi1-list", "euler,cayley,expm", "--out-dir", str(out_dir)]
        )
        assert code == 0
        files = sorted(os.listdir(out_dir))
        assert len(files) == 6
        header = stdout.splitlines()[0]
        assert header == "a,phi1,phi2,final_objective,oracle_gap,iters_to_tol"
        for path in files:
            for row in read_rows(out_dir / path):
                assert float(row[2]) <= 1e-10  # feasibility column

    def test_single_cell_matches_lev_run(self, tmp_path):
        lev_out = tmp_path / "lev.csv"
        args = ["--n", "30", "--m", "3", "--seed", "11", "--iters", "80", "--trace-every", "10"]
        assert run_cli(["lev", *args, "--out", str(lev_out)])[0] == 0
        out_dir = tmp_path / "grid"
        assert (
            run_cli(
                ["sweep", *args, "--a-list", "0.5", "--phi1-list", "euler",
                 "--phi2-list", "euler", "--out-dir", str(out_dir)]
            )[0]
            == 0
        )
        cell = out_dir / "trace_a0.5_phi1-euler_phi2-euler.csv"
        assert read_rows(lev_out) == read_rows(cell)
        assert read_comments(lev_out) == read_comments(cell)

    def test_empty_grid_rejected(self, tmp_path):
        assert run_cli(["sweep", "--a-list", "", "--out-dir", str(tmp_path / "x")])[0] == 2

    def test_parallel_matches_sequential(self, tmp_path, monkeypatch):
        args = ["sweep", "--n", "20", "--m", "2", "--iters", "30",
                "--a-list", "0,0.5", "--phi1-list", "euler,cayley"]
        seq_dir = tmp_path / "seq"
        par_dir = tmp_path / "par"
        monkeypatch.setenv("STIEFEL_OPT_THREADS", "1")
        code, seq_stdout, _ = run_cli(args + ["--out-dir", str(seq_dir)])
        assert code == 0
        monkeypatch.setenv("STIEFEL_OPT_THREADS", "4")
        code, par_stdout, _ = run_cli(args + ["--out-dir", str(par_dir)])
        assert code == 0
        assert seq_stdout == par_stdout
        for name in os.listdir(seq_dir):
            assert read_rows(seq_dir / name) == read_rows(par_dir / name)


class TestEntryPoint:
    def test_module_invocation(self):
        result = subprocess.run(
            [sys.executable, "-m", "stiefel_opt.cli", "lev", "--n", "10", "--m", "2", "--iters", "2"],
            capture_output=True,
            text=True,
        )
        assert result.returncode == 0

    def test_unknown_command(self):
        assert run_cli(["bogus"])[0] == 2

    def test_no_args_prints_usage(self):
        assert run_cli([])[0] == 2
