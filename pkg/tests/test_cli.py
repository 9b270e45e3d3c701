import json
import os

import numpy as np
import pandas as pd
import pytest
import yaml

from ricci_lab.cli import EXIT_CHECK_FAILED, EXIT_INPUT, EXIT_OK, EXIT_RUNTIME, main
from ricci_lab.config import DEFAULT_CONFIG_FILE, OUTPUT_ENV
from ricci_lab.export import read_run_csv, run_columns, write_table


def _write_config(path, data):
    with open(path, "w") as f:
        yaml.safe_dump(data, f)
    return str(path)


@pytest.fixture
def flat_config(tmp_path):
    return _write_config(tmp_path / "flat.yaml", {
        "metric": {"nx": 16, "ny": 16, "initial": "flat"},
        "flow": {"T": 0.002},
        "spectral": {"ks": [1.0]},
    })


@pytest.fixture
def run_csv(tmp_path):
    t = np.linspace(0.0, 0.1, 11)
    df = pd.DataFrame({name: np.full(t.size, np.nan) for name in run_columns([1.0, 2.0])})
    df["t"] = t
    df["t_bar"] = t
    df["s"] = 0.0
    df["volume"] = 4.0 * np.pi * (1.0 - 2.0 * t)
    df["lambda_k1"] = 2.0 / (1.0 - 2.0 * t)
    df["lambda_k2"] = 4.0 / (1.0 - 2.0 * t)
    df["lambda_bar_k1"] = 8.0 * np.pi
    df["lambda_bar_k2"] = 16.0 * np.pi
    return write_table(df, str(tmp_path / "run.csv"))


def test_help_all(capsys):
    assert main(["--help-all"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "EXIT CODES" in out
    assert "rescale_closed_forms" in out


def test_no_command_prints_usage(capsys):
    assert main([]) == EXIT_OK
    assert "usage" in capsys.readouterr().out


def test_template_yaml(tmp_path, capsys):
    path = str(tmp_path / "cfg.yaml")
    assert main(["template", "-o", path]) == EXIT_OK
    with open(path) as f, open(DEFAULT_CONFIG_FILE) as g:
        assert f.read() == g.read()
    assert "Config template saved to:" in capsys.readouterr().out


def test_run_writes_csv_and_manifest(flat_config, tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", flat_config, "--output-dir", str(out), "--plot"]) == EXIT_OK
    df = pd.read_csv(out / "run.csv")
    assert list(df.columns) == run_columns([1.0])
    np.testing.assert_allclose(df["lambda_k1"], 0.0, atol=1e-9)
    with open(out / "manifest.json") as f:
        manifest = json.load(f)
    assert isinstance(manifest["config"]["flow"]["dt"], float)
    assert manifest["trajectory"]["flow_kind"] == "ricci"
    assert manifest["trajectory"]["steps"] == len(df) - 1
    assert "numpy" in manifest["versions"]
    assert (out / "run.svg").exists()


def test_run_uses_output_env(flat_config, tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv(OUTPUT_ENV, str(target))
    assert main(["run", "-c", flat_config]) == EXIT_OK
    assert (target / "run.csv").exists()


def test_run_blow_up_keeps_partial_csv(tmp_path, capsys):
    config = _write_config(tmp_path / "sphere.yaml", {
        "metric": {"family": "sphere"},
        "flow": {"T": 0.6, "dt": 0.01},
        "spectral": {"ks": [1.0]},
    })
    out = tmp_path / "out"
    assert main(["run", "-c", config, "--output-dir", str(out)]) == EXIT_RUNTIME
    df = pd.read_csv(out / "run.csv")
    assert 2 <= len(df) <= 51
    assert df["t"].iloc[-1] < 0.5
    with open(out / "manifest.json") as f:
        assert json.load(f)["trajectory"]["truncated"]
    assert "error:" in capsys.readouterr().err


def test_missing_config(tmp_path, capsys):
    code = main(["run", "-c", str(tmp_path / "absent.yaml")])
    assert code == EXIT_INPUT
    assert "absent.yaml" in capsys.readouterr().err


def test_invalid_config(tmp_path, capsys):
    config = _write_config(tmp_path / "bad.yaml", {"metric": {"colour": "red"}})
    assert main(["run", "-c", config]) == EXIT_INPUT
    assert "metric.colour" in capsys.readouterr().err


def test_written_run_table_reads_back(run_csv):
    df = read_run_csv(run_csv)
    assert list(df.columns) == run_columns([1.0, 2.0])
    t = np.linspace(0.0, 0.1, 11)
    np.testing.assert_allclose(df["lambda_k2"], 4.0 / (1.0 - 2.0 * t), rtol=1e-15)
    assert df["tau"].isna().all()

def test_plot_is_deterministic(run_csv, tmp_path):
    first = str(tmp_path / "a.svg")
    second = str(tmp_path / "b.svg")
    assert main(["plot", "-i", run_csv, "-o", first]) == EXIT_OK
    assert main(["plot", "-i", run_csv, "-o", second]) == EXIT_OK
    with open(first, "rb") as f, open(second, "rb") as g:
        data = f.read()
        assert data == g.read()
    assert data.startswith(b"<?xml")


@pytest.mark.parametrize("content, message", [
    ("", "cannot parse"),
    ("t,t_bar,tau\n0,0,1\n", "no lambda_k"),
    (",".join(run_columns([1.0])) + "\n", "no data rows"),
    (",".join(run_columns([1.0])[:-1]) + "\n", "unexpected header"),
])
def test_plot_rejects_malformed_csv(tmp_path, capsys, content, message):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    assert main(["plot", "-i", str(path), "-o", str(tmp_path / "x.svg")]) == EXIT_INPUT
    assert message in capsys.readouterr().err


def test_plot_names_non_numeric_cell(run_csv, tmp_path, capsys):
    df = pd.read_csv(run_csv)
    df["volume"] = df["volume"].astype(object)
    df.loc[3, "volume"] = "oops"
    path = str(tmp_path / "bad.csv")
    df.to_csv(path, index=False)
    assert main(["plot", "-i", path, "-o", str(tmp_path / "x.svg")]) == EXIT_INPUT
    err = capsys.readouterr().err
    assert "'volume'" in err and "data row 4" in err


def test_verify_filtered_suite(tmp_path):
    config = _write_config(tmp_path / "verify.yaml", {
        "metric": {"family": "sphere"},
        "flow": {"T": 0.04},
        "spectral": {"ks": [1.0]},
        "checks": {"enabled": ["sphere_eigenvalue_law", "rescale_closed_forms"]},
    })
    report_path = tmp_path / "report.json"
    assert main(["verify", "-c", config, "-o", str(report_path), "--workers", "2"]) == EXIT_OK
    with open(report_path) as f:
        report = json.load(f)
    assert report["passed"]
    assert report["config"]["run"]["workers"] == 2


def test_verify_runtime_failure(tmp_path, capsys):
    config = _write_config(tmp_path / "unstable.yaml", {
        "metric": {"nx": 16, "ny": 16},
        "flow": {"T": 0.01, "dt": 1.0},
        "checks": {"enabled": ["gauss_bonnet"]},
        "sweep": {"s_values": [0.0]},
    })
    code = main(["verify", "-c", config, "--output-dir", str(tmp_path)])
    assert code == EXIT_RUNTIME
    assert "FAIL gauss_bonnet[ricci]" in capsys.readouterr().out
    assert os.path.exists(tmp_path / "report.json")


def test_verify_check_failure_exit_code(tmp_path, monkeypatch):
    from ricci_lab import cli
    from ricci_lab.harness import CheckResult, RunReport

    def failing_suite(config):
        return RunReport({}, [CheckResult("monotone[M1,ricci,k=1]", False, -1.0, 0.0, 1e-7)])

    monkeypatch.setattr(cli, "run_suite", failing_suite)
    config = _write_config(tmp_path / "any.yaml", {"metric": {"family": "sphere"}})
    assert main(["verify", "-c", config, "--output-dir", str(tmp_path)]) == EXIT_CHECK_FAILED


def test_sweep_writes_one_directory_per_pair(tmp_path, capsys):
    config = _write_config(tmp_path / "sweep.yaml", {
        "metric": {"family": "sphere"},
        "flow": {"T": 0.02},
        "run": {"workers": 2},
        "sweep": {"ks": [1.0, 2.0], "s_values": [0.0, -1.0]},
    })
    out = tmp_path / "sweep"
    assert main(["sweep", "-c", config, "--output-dir", str(out)]) == EXIT_OK
    for name in ("k1_s0", "k1_s-1", "k2_s0", "k2_s-1"):
        df = pd.read_csv(out / name / "run.csv")
        assert len(df) == 201
    df = pd.read_csv(out / "k2_s-1" / "run.csv")
    assert list(df.columns) == run_columns([2.0])
    np.testing.assert_allclose(df["s"], -1.0)
    assert capsys.readouterr().out.count("Wrote k=") == 4
