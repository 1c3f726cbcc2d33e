"""Command line driver: subcommands, exit codes, output locations."""

import csv

import numpy as np
import pytest
import yaml

from panelhte.cli import OUTDIR_ENV, cli_main
from panelhte.config import config_to_mapping, load_config, parse_config
from panelhte.harness import read_sweep_csv
from panelhte.linalg import svd_dense
from panelhte.model import load_matrix_csv
from panelhte.presets import preset_config


def small_config_file(tmp_path, name="cli-exp", sizes=None, replications=2,
                      **signal_overrides):
    mapping = {
        "name": name,
        "seed": 424242,
        "replications": replications,
        "sizes": sizes or {"n": [20, 40], "aspect_ratio": 1.5},
        "design": {"family": "row_homogeneous", "p_low": 0.35, "p_high": 0.65},
        "signal": {"rank": 2, **signal_overrides},
        "noise": {"entry_bound": 0.5},
        "estimator": {"rank_cap": 4,
                      "threshold": {"kind": "theory", "multiplier": 0.015}},
    }
    path = tmp_path / f"{name}.yaml"
    path.write_text(yaml.safe_dump(mapping), encoding="utf-8")
    return path


class TestUsageErrors:
    def test_no_command(self, capsys):
        assert cli_main([]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_command(self, capsys):
        assert cli_main(["frobnicate"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag(self, capsys):
        assert cli_main(["run", "--bogus"]) == 1
        err = capsys.readouterr().err
        assert "usage" in err and "--bogus" in err

    def test_run_needs_a_config_source(self, capsys):
        assert cli_main(["run"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_config_and_preset_conflict(self, tmp_path, capsys):
        path = small_config_file(tmp_path)
        assert cli_main(["run", str(path), "--preset", "row-homogeneous"]) == 1
        assert "not both" in capsys.readouterr().err

    def test_bad_preset_name(self, capsys):
        assert cli_main(["preset", "unheard-of"]) == 1
        assert "usage" in capsys.readouterr().err


class TestPreset:
    def test_prints_yaml_to_stdout(self, capsys):
        assert cli_main(["preset", "row-homogeneous"]) == 0
        out = capsys.readouterr().out
        parsed = parse_config(yaml.safe_load(out))
        assert parsed == preset_config("row-homogeneous")

    def test_nu_flag_changes_nonuniform_preset(self, capsys):
        assert cli_main(["preset", "spectral-nonuniform", "--nu", "1.0"]) == 0
        parsed = parse_config(yaml.safe_load(capsys.readouterr().out))
        assert parsed.design_params["nu"] == 1.0
        assert parsed.name == "spectral-nonuniform-nu1"

    def test_out_writes_loadable_file(self, tmp_path, capsys):
        path = tmp_path / "preset.yaml"
        assert cli_main(["preset", "harsh-overlap", "--out", str(path)]) == 0
        assert load_config(path) == preset_config("harsh-overlap")
        assert "wrote" in capsys.readouterr().out


class TestTrial:
    def test_stdout_is_deterministic(self, capsys):
        args = ["trial", "--preset", "row-homogeneous", "--seed", "7",
                "--n", "100"]
        assert cli_main(args) == 0
        first = capsys.readouterr().out
        assert cli_main(args) == 0
        second = capsys.readouterr().out
        assert first == second
        assert first.startswith("# schema=")
        lines = first.strip().splitlines()
        assert len(lines) == 3  # schema, header, one row

    def test_seed_override_changes_output(self, capsys):
        base = ["trial", "--preset", "row-homogeneous", "--n", "100"]
        assert cli_main(base + ["--seed", "1"]) == 0
        one = capsys.readouterr().out
        assert cli_main(base + ["--seed", "2"]) == 0
        two = capsys.readouterr().out
        assert one != two

    def test_explicit_m_and_out_file(self, tmp_path, capsys):
        out = tmp_path / "cell.csv"
        assert cli_main(["trial", "--preset", "row-homogeneous", "--n", "50",
                         "--m", "60", "--out", str(out)]) == 0
        assert "wrote" in capsys.readouterr().out
        table = read_sweep_csv(out)
        assert len(table.rows) == 1
        assert int(table.rows[0]["n"]) == 50
        assert int(table.rows[0]["m"]) == 60

    def test_from_config_file(self, tmp_path, capsys):
        path = small_config_file(tmp_path)
        assert cli_main(["trial", str(path), "--trial", "1"]) == 0
        out = capsys.readouterr().out
        table = read_sweep_csv(__import__("io").StringIO(out))
        assert int(table.rows[0]["n"]) == 20
        assert int(table.rows[0]["trial"]) == 1


class TestRunAndSlope:
    def test_sweep_then_slope(self, tmp_path, capsys):
        config = small_config_file(
            tmp_path, name="rate", replications=5,
            sizes={"n": [100, 200, 400], "aspect_ratio": 2.0})
        out_csv = tmp_path / "rate.csv"
        assert cli_main(["run", str(config), "--threads", "4",
                         "--out", str(out_csv)]) == 0
        run_out = capsys.readouterr().out
        assert f"wrote 15 rows to {out_csv} (0 failed cells)" in run_out
        assert "slope=" in run_out

        assert cli_main(["slope", str(out_csv)]) == 0
        slope_out = capsys.readouterr().out
        slope_line = [l for l in slope_out.splitlines()
                      if l.startswith("slope=")][0]
        slope = float(slope_line.split()[0].split("=")[1])
        # sanity window only: 5 replications over 3 sizes is a noisy fit;
        # the tight rate band is certified at full protocol scale elsewhere
        assert -0.90 <= slope <= -0.20
        assert len([l for l in slope_out.splitlines()
                    if l.startswith("n=")]) == 3

    def test_default_out_respects_env_dir(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv(OUTDIR_ENV, str(tmp_path))
        config = small_config_file(tmp_path, name="envtest")
        assert cli_main(["run", str(config), "--threads", "1"]) == 0
        capsys.readouterr()
        produced = tmp_path / "envtest.csv"
        assert produced.exists()
        assert len(read_sweep_csv(produced).rows) == 4

    def test_slope_missing_column(self, tmp_path, capsys):
        config = small_config_file(tmp_path, name="col")
        out_csv = tmp_path / "col.csv"
        assert cli_main(["run", str(config), "--threads", "1",
                         "--out", str(out_csv)]) == 0
        capsys.readouterr()
        assert cli_main(["slope", str(out_csv), "--column", "nope"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_slope_on_missing_file_is_runtime_failure(self, capsys):
        assert cli_main(["slope", "/nonexistent/sweep.csv"]) == 2
        assert "runtime failure" in capsys.readouterr().err

    def test_slope_rejects_schemaless_csv(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("n,m\n1,2\n")
        assert cli_main(["slope", str(bad)]) == 1
        assert "schema" in capsys.readouterr().err


class TestValidate:
    def test_feasible_preset(self, capsys):
        assert cli_main(["validate", "--preset", "row-homogeneous"]) == 0
        out = capsys.readouterr().out
        assert "design=row_homogeneous" in out
        # one line per configured size, each with overlap and SNR fields
        size_lines = [l for l in out.splitlines() if l.startswith("n=")]
        assert len(size_lines) == 4
        for line in size_lines:
            assert "r_p=1" in line
            assert "p_op=(0,0)" in line
            assert "snr=ok" in line
            assert "tau=(" in line

    def test_infeasible_floor(self, tmp_path, capsys):
        config = small_config_file(tmp_path, name="toofloored",
                                   snr_floor_multiplier=1000.0)
        assert cli_main(["validate", str(config)]) == 1
        out = capsys.readouterr().out
        assert "INFEASIBLE" in out
        assert "infeasible:" in out

    def test_nonuniform_reports_realized_nu(self, capsys):
        assert cli_main(["validate", "--preset", "spectral-nonuniform",
                         "--nu", "0.5"]) == 0
        out = capsys.readouterr().out
        assert "nu_target=0.5" in out
        assert "nu_realized=" in out


class TestFixtures:
    def test_emits_manifest_and_matrices(self, tmp_path, capsys):
        out_dir = tmp_path / "fx"
        assert cli_main(["fixtures", "--out", str(out_dir)]) == 0
        assert "manifest.csv" in capsys.readouterr().out
        with open(out_dir / "manifest.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 15
        names = {r["name"] for r in rows}
        assert {"zeros_4x6", "ones_3x3", "diag_5x5"} <= names
        for row in rows:
            matrix = load_matrix_csv(out_dir / f"{row['name']}.csv")
            assert matrix.shape == (int(row["rows"]), int(row["cols"]))
            listed = np.array([float(v) for v in
                               row["singular_values"].split(";")])
            dense = svd_dense(matrix).s
            scale = max(float(listed[0]), 1.0) if listed.size else 1.0
            np.testing.assert_allclose(listed, dense, atol=1e-9 * scale)

    def test_deterministic_given_seed(self, tmp_path, capsys):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        assert cli_main(["fixtures", "--out", str(a_dir), "--seed", "3"]) == 0
        assert cli_main(["fixtures", "--out", str(b_dir), "--seed", "3"]) == 0
        capsys.readouterr()
        a_text = (a_dir / "manifest.csv").read_bytes()
        assert a_text == (b_dir / "manifest.csv").read_bytes()

    def test_default_out_respects_env_dir(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv(OUTDIR_ENV, str(tmp_path))
        assert cli_main(["fixtures"]) == 0
        capsys.readouterr()
        assert (tmp_path / "fixtures" / "manifest.csv").exists()


class TestReport:
    def test_renders_figures_and_summary(self, tmp_path, capsys):
        config = small_config_file(
            tmp_path, name="rep", replications=3,
            sizes={"n": [30, 60], "aspect_ratio": 1.5})
        out_csv = tmp_path / "rep.csv"
        assert cli_main(["run", str(config), "--threads", "1",
                         "--out", str(out_csv)]) == 0
        capsys.readouterr()
        report_dir = tmp_path / "figures"
        assert cli_main(["report", str(out_csv), "--out", str(report_dir)]) == 0
        listed = capsys.readouterr().out
        for name in ("error_vs_n", "rank_selection", "error_distribution",
                     "summary"):
            assert name in listed
        for png in ("error_vs_n.png", "rank_selection.png",
                    "error_distribution.png"):
            path = report_dir / png
            assert path.exists() and path.stat().st_size > 1000
        summary = (report_dir / "summary.csv").read_text().splitlines()
        assert summary[0].startswith("# summary")
        assert summary[1].startswith("# fit")
        assert summary[2].startswith("n,m,trials,failures")
        assert len(summary) == 5  # two data rows after the header
