import json

import numpy as np
import pytest

from ricci_lab import (
    AverageScalar,
    ConfigInvalid,
    ConformalTorus,
    Constant,
    EigenNormalized,
    RoundSphere,
    TestFunction,
)
from ricci_lab.config import (
    OUTPUT_ENV,
    config_from_dict,
    default_config,
    load_config,
    rng_for,
    save_config_template,
)
from ricci_lab.harness import ALL_CHECKS


def test_default_config():
    config = default_config()
    assert config.source.endswith("default.yaml")
    assert config.checks.enabled == ALL_CHECKS
    metric = config.initial_metric()
    assert isinstance(metric, ConformalTorus)
    assert metric.shape == (32, 32)
    assert config.flow.dt == pytest.approx(0.5 * metric.cfl_bound())
    assert config.metric.modes == ((1, 0), (0, 1))


def test_sphere_step_defaults_to_fraction_of_duration():
    config = config_from_dict({"metric": {"family": "sphere", "r2": 2.0}, "flow": {"T": 0.1}})
    assert config.flow.dt == pytest.approx(0.1 / 200)
    assert config.initial_metric() == RoundSphere(2, 2.0)


@pytest.mark.parametrize("data, field", [
    ({"bogus": {}}, "bogus"),
    ({"metric": {"colour": 1}}, "metric.colour"),
    ({"metric": {"nx": 4}}, "metric.nx"),
    ({"metric": {"nx": 16.5}}, "metric.nx"),
    ({"metric": {"Lx": 0}}, "metric.Lx"),
    ({"metric": {"family": "klein"}}, "metric.family"),
    ({"metric": {"modes": [[1, 0, 2]]}}, "metric.modes"),
    ({"metric": {"initial": "file"}}, "metric.u_file"),
    ({"flow": {"kind": "heat"}}, "flow.kind"),
    ({"flow": {"T": -1.0}}, "flow.T"),
    ({"flow": {"dt": "fast"}}, "flow.dt"),
    ({"flow": {"tau0": 0.0}}, "flow.tau0"),
    ({"spectral": {"ks": [0.5]}}, "spectral.ks"),
    ({"spectral": {"ks": []}}, "spectral.ks"),
    ({"run": {"workers": 0}}, "run.workers"),
    ({"checks": {"enabled": ["nope"]}}, "checks.enabled"),
    ({"checks": {"eps_seq": [1e-3]}}, "checks.eps_seq"),
    ({"checks": {"oracle_grid": 65}}, "checks.oracle_grid"),
    ({"checks": {"oracle_sinusoid_grid": 80}}, "checks.oracle_sinusoid_grid"),
    ({"sweep": {"s_values": ["x"]}}, "sweep.s_values"),
    ({"metric": [1, 2]}, "metric"),
    ([1, 2], "<root>"),
])
def test_invalid_values_name_the_field(data, field):
    with pytest.raises(ConfigInvalid) as excinfo:
        config_from_dict(data)
    assert excinfo.value.field == field


def test_missing_and_unsupported_files(tmp_path):
    with pytest.raises(ConfigInvalid) as excinfo:
        load_config(str(tmp_path / "nope.yaml"))
    assert excinfo.value.field == "<file>"
    ini = tmp_path / "cfg.ini"
    ini.write_text("[metric]\n")
    with pytest.raises(ConfigInvalid):
        load_config(str(ini))
    broken = tmp_path / "broken.yaml"
    broken.write_text("metric: [\n")
    with pytest.raises(ConfigInvalid):
        load_config(str(broken))


def test_json_template_round_trip(tmp_path):
    path = save_config_template(str(tmp_path / "cfg.json"))
    with open(path) as f:
        assert json.load(f)["flow"]["dt"] == "auto"
    config = load_config(path)
    default = default_config()
    assert config.metric == default.metric
    assert config.flow == default.flow
    assert config.checks == default.checks


def test_output_dir_from_environment(monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, "/tmp/ricci_out")
    assert config_from_dict({}).run.output_dir == "/tmp/ricci_out"
    monkeypatch.delenv(OUTPUT_ENV)
    assert config_from_dict({}).run.output_dir == "ricci_lab_output"


def test_named_generators_are_reproducible():
    a = rng_for(1, "solver_oracle").standard_normal(4)
    b = rng_for(1, "solver_oracle").standard_normal(4)
    c = rng_for(1, "form_agreement").standard_normal(4)
    d = rng_for(2, "solver_oracle").standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    assert not np.allclose(a, d)


@pytest.mark.parametrize("flow, expected", [
    ({"kind": "ricci"}, type(None)),
    ({"kind": "normalized"}, AverageScalar),
    ({"kind": "rescaled", "provider": "constant", "s0": -2.0}, Constant),
    ({"kind": "rescaled", "provider": "average_scalar"}, AverageScalar),
    ({"kind": "rescaled", "provider": "eigen_normalized", "provider_k": 2.0}, EigenNormalized),
    ({"kind": "rescaled", "provider": "test_function"}, TestFunction),
])
def test_provider_selection(flow, expected):
    config = config_from_dict({"metric": {"nx": 16, "ny": 16}, "flow": flow})
    assert isinstance(config.provider(), expected)


def test_random_initial_metric_is_seeded():
    data = {"metric": {"nx": 16, "ny": 16, "initial": "random", "amplitude": 0.2}}
    first = config_from_dict(data).initial_metric()
    second = config_from_dict(data).initial_metric()
    np.testing.assert_array_equal(first.u, second.u)
    assert np.abs(first.u).max() > 0


def test_identity_metric_uses_identity_grid():
    config = config_from_dict({"metric": {"nx": 16, "ny": 16}, "checks": {"identity_grid": 24}})
    assert config.identity_metric().shape == (24, 24)
    sphere = config_from_dict({"metric": {"family": "sphere"}})
    assert sphere.identity_metric() == sphere.initial_metric()


@pytest.mark.parametrize("suffix", [".npy", ".csv"])
def test_conformal_factor_from_file(tmp_path, suffix):
    u = 0.05 * np.arange(100, dtype=float).reshape(10, 10) / 100.0
    path = tmp_path / f"u{suffix}"
    if suffix == ".npy":
        np.save(path, u)
    else:
        np.savetxt(path, u, delimiter=",", fmt="%.17g")
    config = config_from_dict({"metric": {"initial": "file", "u_file": str(path), "Lx": 2.0}})
    metric = config.initial_metric()
    np.testing.assert_array_equal(metric.u, u)
    assert metric.Lx == 2.0


def test_unreadable_conformal_factor_file(tmp_path):
    with pytest.raises(ConfigInvalid) as excinfo:
        config_from_dict({"metric": {"initial": "file", "u_file": str(tmp_path / "u.npy")}})
    assert excinfo.value.field == "metric.u_file"
