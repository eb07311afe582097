"""End-to-end command-line behavior: file outputs, config layering, exit codes."""

import os

import numpy as np
import pytest

from dsgcqr.cli import main


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture()
def dataset_dir(tmp_path):
    out = tmp_path / "ds"
    code = run_cli("generate", "--n", "240", "--p", "6", "--m", "3",
                   "--tau", "0.25", "--seed", "3", "--with-truth",
                   "--out", str(out))
    assert code == 0
    return out


class TestGenerate:
    def test_files_and_row_counts(self, tmp_path):
        out = tmp_path / "ds"
        assert run_cli("generate", "--n", "30", "--p", "5", "--m", "2",
                       "--out", str(out)) == 0
        names = {p.name for p in out.iterdir()}
        assert {"machine_1.csv", "machine_2.csv", "response.csv",
                "manifest.txt"} <= names
        for name in ("machine_1.csv", "machine_2.csv", "response.csv"):
            assert len((out / name).read_text().splitlines()) == 31

    def test_rerun_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            run_cli("generate", "--n", "25", "--p", "4", "--m", "2",
                    "--seed", "9", "--out", str(tmp_path / sub))
        for name in ("machine_1.csv", "machine_2.csv", "response.csv",
                     "manifest.txt"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()

    def test_reference_grid_shape(self, tmp_path):
        out = tmp_path / "wide"
        run_cli("generate", "--n", "12", "--p", "60", "--m", "15",
                "--out", str(out))
        files = sorted(out.glob("machine_*.csv"))
        assert len(files) == 15
        assert files[0].read_text().splitlines()[0] == "x1,x2,x3,x4"


class TestFit:
    def test_outputs(self, dataset_dir, tmp_path):
        fit_dir = tmp_path / "fit"
        code = run_cli("fit", "--data", str(dataset_dir), "--out", str(fit_dir),
                       "--topology", "complete", "--kappa0", "1",
                       "--eta", "0.2", "--max-iter", "400", "--tol", "1e-7",
                       "--with-reference")
        assert code == 0
        assert (fit_dir / "beta_hat.csv").exists()
        assert (fit_dir / "z_final.csv").exists()
        assert (fit_dir / "trace.csv").exists()
        summary = (fit_dir / "fit_summary.txt").read_text()
        assert "iterations = " in summary and "converged = " in summary
        rows = (fit_dir / "beta_hat.csv").read_text().splitlines()
        assert rows[0] == "node,coef_index,value"
        assert len(rows) == 1 + 6  # one per coefficient

    def test_rule_of_thumb_bandwidth_recorded(self, dataset_dir, tmp_path):
        from dsgcqr import rule_of_thumb_bandwidth
        fit_dir = tmp_path / "fit"
        run_cli("fit", "--data", str(dataset_dir), "--out", str(fit_dir),
                "--topology", "complete", "--eta", "0.2", "--max-iter", "50",
                "--h-mult", "1.5")
        summary = (fit_dir / "fit_summary.txt").read_text()
        h_line = [ln for ln in summary.splitlines() if ln.startswith("h = ")][0]
        want = rule_of_thumb_bandwidth(6, 240, 0.25, 1.5)
        assert float(h_line.split("=")[1]) == pytest.approx(want, rel=1e-12)

    def test_privacy_recipe_flag(self, dataset_dir, tmp_path):
        code = run_cli("fit", "--data", str(dataset_dir),
                       "--out", str(tmp_path / "fitpp"),
                       "--topology", "complete", "--eta", "0.2",
                       "--max-iter", "100", "--privacy-eps-bar", "0.5")
        assert code == 0
        summary = (tmp_path / "fitpp" / "fit_summary.txt").read_text()
        assert "privacy = on" in summary

    def test_trace_plot(self, dataset_dir, tmp_path):
        fit_dir = tmp_path / "fit"
        code = run_cli("fit", "--data", str(dataset_dir), "--out", str(fit_dir),
                       "--topology", "line", "--eta", "0.2",
                       "--max-iter", "60", "--plot")
        assert code == 0
        assert (fit_dir / "trace.png").exists()


class TestInfer:
    @pytest.fixture()
    def fit_dir(self, dataset_dir, tmp_path):
        out = tmp_path / "fit"
        run_cli("fit", "--data", str(dataset_dir), "--out", str(out),
                "--topology", "complete", "--eta", "0.2",
                "--max-iter", "600", "--tol", "1e-8")
        return out

    def test_both_modes(self, dataset_dir, fit_dir, tmp_path):
        out = tmp_path / "infer"
        code = run_cli("infer", "--data", str(dataset_dir),
                       "--fit", str(fit_dir), "--out", str(out),
                       "--mode", "both")
        assert code == 0
        hr = (out / "intervals_hr.csv").read_text().splitlines()
        hs = (out / "intervals_hs.csv").read_text().splitlines()
        assert len(hr) == len(hs) == 7
        assert hr[0] == "node,coef_index,estimate,lower,upper,mode,level"
        assert hr[1].endswith(",hr,0.95")  # default level

    def test_single_coefficient_machines(self, tmp_path):
        ds = tmp_path / "ds1"
        run_cli("generate", "--n", "200", "--p", "3", "--m", "3",
                "--tau", "0.5", "--out", str(ds))
        fit = tmp_path / "fit1"
        run_cli("fit", "--data", str(ds), "--out", str(fit),
                "--topology", "complete", "--eta", "0.3", "--max-iter", "400")
        out = tmp_path / "infer1"
        assert run_cli("infer", "--data", str(ds), "--fit", str(fit),
                       "--out", str(out), "--mode", "hr") == 0
        rows = (out / "intervals_hr.csv").read_text().splitlines()
        assert len(rows) == 4  # header + one coefficient per machine


class TestExperiment:
    def test_summary_columns_and_determinism(self, tmp_path):
        args = ("experiment", "--kind", "error", "--methods",
                "dsg_cqr,glb_cqr", "--n", "240", "--p", "6", "--m", "3",
                "--tau", "0.25", "--topology", "complete", "--eta", "0.2",
                "--max-iter", "300", "--tol", "1e-6", "--h", "0.3",
                "--replications", "2", "--seed", "4")
        assert run_cli(*args, "--out", str(tmp_path / "e1")) == 0
        assert run_cli(*args, "--out", str(tmp_path / "e2")) == 0
        s1 = (tmp_path / "e1" / "summary.csv").read_bytes()
        assert s1 == (tmp_path / "e2" / "summary.csv").read_bytes()
        header = s1.decode().splitlines()[0]
        assert header.startswith("method,mean_test_loss,sd_test_loss")
        methods = [ln.split(",")[0]
                   for ln in s1.decode().splitlines()[1:]]
        assert methods == ["dsg_cqr", "glb_cqr"]

    def test_thread_count_invariance(self, tmp_path, monkeypatch):
        args = ("experiment", "--kind", "error", "--methods", "dsg_cqr",
                "--n", "200", "--p", "4", "--m", "2", "--topology", "complete",
                "--eta", "0.2", "--max-iter", "200", "--tol", "1e-6",
                "--h", "0.3", "--replications", "3", "--seed", "8")
        monkeypatch.setenv("DSGCQR_THREADS", "1")
        run_cli(*args, "--out", str(tmp_path / "t1"))
        monkeypatch.setenv("DSGCQR_THREADS", "2")
        run_cli(*args, "--out", str(tmp_path / "t2"))
        for name in ("replications.csv", "summary.csv"):
            assert (tmp_path / "t1" / name).read_bytes() == \
                (tmp_path / "t2" / name).read_bytes()

    def test_error_kind_plot(self, tmp_path):
        out = tmp_path / "exp"
        code = run_cli("experiment", "--kind", "error", "--methods",
                       "dsg_cqr,glb_cqr", "--n", "200", "--p", "4", "--m", "2",
                       "--topology", "complete", "--eta", "0.2",
                       "--max-iter", "150", "--tol", "1e-6", "--h", "0.3",
                       "--replications", "2", "--seed", "3",
                       "--out", str(out), "--plot")
        assert code == 0
        assert (out / "summary.png").exists()

    def test_coverage_kind_with_plot(self, tmp_path):
        out = tmp_path / "cov"
        code = run_cli("experiment", "--kind", "coverage", "--n", "400",
                       "--p", "4", "--m", "2", "--covariance", "block_ar",
                       "--topology", "complete", "--eta", "0.3",
                       "--max-iter", "300", "--tol", "1e-6", "--h", "0.25",
                       "--replications", "2", "--seed", "5",
                       "--modes", "hr,hs", "--out", str(out), "--plot")
        assert code == 0
        header = (out / "summary.csv").read_text().splitlines()[0]
        assert header == "machine,coef_index,mode,aecp,avg_width,n_reps,n_failed"
        assert (out / "summary.png").exists()


class TestTopologyInfo:
    def test_prints_alpha_and_kappa(self, capsys, tmp_path):
        edges = tmp_path / "g.txt"
        code = run_cli("topology-info", "--topology", "line", "--m", "3",
                       "--eta", "1.0", "--a-ul", "1.0", "--a-l", "0.2",
                       "--f-bar", "0.01", "--sigma-u", "1.0",
                       "--write-edges", str(edges))
        assert code == 0
        out = capsys.readouterr().out
        assert "alpha = 0.666666666" in out
        assert "kappa0_opt = " in out
        assert edges.read_text().splitlines()[0] == "3"

    def test_loads_edge_list(self, capsys, tmp_path):
        edges = tmp_path / "g.txt"
        edges.write_text("3\n1 2\n2 3\n")
        assert run_cli("topology-info", "--edges", str(edges)) == 0
        assert "m = 3" in capsys.readouterr().out


class TestConfigFile:
    def test_config_supplies_and_cli_overrides(self, dataset_dir, tmp_path):
        conf = tmp_path / "run.ini"
        conf.write_text(
            "[fit]\ndata = {}\ntopology = complete\neta = 0.25\n"
            "max-iter = 40\nno-traces = true\n".format(dataset_dir))
        fit_a = tmp_path / "fa"
        assert run_cli("fit", "--config", str(conf), "--out", str(fit_a)) == 0
        text_a = (fit_a / "fit_summary.txt").read_text()
        assert "eta = 0.25" in text_a
        assert not (fit_a / "trace.csv").exists()
        fit_b = tmp_path / "fb"
        assert run_cli("fit", "--config", str(conf), "--out", str(fit_b),
                       "--eta", "0.125") == 0
        assert "eta = 0.125" in (fit_b / "fit_summary.txt").read_text()

    def test_missing_config_file(self, tmp_path):
        assert run_cli("generate", "--config", str(tmp_path / "no.ini")) == 2


class TestExitCodes:
    def test_config_error_is_two(self, dataset_dir, tmp_path):
        code = run_cli("fit", "--data", str(dataset_dir),
                       "--out", str(tmp_path / "x"), "--tau", "1.5",
                       "--topology", "complete")
        assert code == 2

    def test_numerical_error_is_three(self, dataset_dir, tmp_path):
        code = run_cli("fit", "--data", str(dataset_dir),
                       "--out", str(tmp_path / "x"), "--topology", "complete",
                       "--eta", "1e13", "--max-iter", "50")
        assert code == 3

    def test_io_error_is_four(self, tmp_path):
        code = run_cli("fit", "--data", str(tmp_path / "missing"),
                       "--out", str(tmp_path / "x"), "--topology", "complete")
        assert code == 4


class TestPlotCommand:
    def test_dispatch_on_header(self, dataset_dir, tmp_path):
        fit_dir = tmp_path / "fit"
        run_cli("fit", "--data", str(dataset_dir), "--out", str(fit_dir),
                "--topology", "complete", "--eta", "0.2", "--max-iter", "60")
        png = tmp_path / "custom.png"
        assert run_cli("plot", "--input", str(fit_dir / "trace.csv"),
                       "--out", str(png)) == 0
        assert png.exists() and png.stat().st_size > 0

    def test_unrecognized_schema(self, tmp_path):
        bad = tmp_path / "odd.csv"
        bad.write_text("a,b\n1,2\n")
        assert run_cli("plot", "--input", str(bad)) == 2
