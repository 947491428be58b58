"""Config grammar: typed keys, defaults, rejection of unknowns."""

import pytest

from follmer.config import (load_config, parse_widths, resolve_config,
                            steps_from_dt)
from follmer.errors import ConfigError


def write_cfg(tmp_path, text):
    path = tmp_path / "exp.ini"
    path.write_text(text)
    return str(path)


MINIMAL = """
[model]
name = conjugate_gaussian

[method]
name = nsfs
"""


def test_defaults_materialized(tmp_path):
    cfg = load_config(write_cfg(tmp_path, MINIMAL))
    assert cfg.model["prior_var"] == 1.0
    assert cfg.model["n_data"] == 8
    assert cfg.method["estimator"] == "stl"
    assert cfg.method["s_paths"] == 128
    assert cfg.method["include_ito"] is True
    assert cfg.run["seed"] == 0
    assert cfg.run["out"] == "runs/out"
    assert cfg.eval["n_bins"] == 10
    echo = cfg.echo()
    assert echo["method"]["dt_train"] == 0.05
    assert echo["suite"]["seeds"] == "0"


def test_values_parsed_and_typed(tmp_path):
    cfg = load_config(write_cfg(tmp_path, """
[model]
name = step_bnn
widths = 1,8,1
noise_sd = 0.2

[method]
name = nsfs
iterations = 40        # inline comment
gamma = 0.0025
include_ito = false

[run]
seed = 7
out = somewhere
"""))
    assert cfg.model["widths"] == "1,8,1"
    assert cfg.model["noise_sd"] == 0.2
    assert cfg.method["iterations"] == 40
    assert cfg.method["gamma"] == 0.0025
    assert cfg.method["include_ito"] is False
    assert cfg.run["seed"] == 7


@pytest.mark.parametrize("text,fragment", [
    (MINIMAL + "turbo = 3\n", "method.turbo"),
    (MINIMAL.replace("[method]", "turbo = 3\n\n[method]"), "model.turbo"),
    (MINIMAL + "\n[run]\nturbo = 3\n", "run.turbo"),
])
def test_unknown_keys_rejected_with_path(tmp_path, text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        load_config(write_cfg(tmp_path, text))


def test_unknown_section_rejected(tmp_path):
    with pytest.raises(ConfigError, match="junk"):
        load_config(write_cfg(tmp_path, MINIMAL + "\n[junk]\nx = 1\n"))


def test_type_error_names_key(tmp_path):
    with pytest.raises(ConfigError, match="method.gamma"):
        load_config(write_cfg(tmp_path, MINIMAL + "gamma = fast\n"))


@pytest.mark.parametrize("line", [
    "gamma = -1.0", "gamma = 0", "s_paths = 0", "lr = 0",
    "estimator = magic", "dt_train = 0.3", "dt_test = 0",
])
def test_invalid_method_values_rejected(tmp_path, line):
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, MINIMAL + line + "\n"))


def test_model_name_required_and_checked(tmp_path):
    with pytest.raises(ConfigError, match="model.name"):
        load_config(write_cfg(tmp_path, "[model]\nprior_var = 1\n"))
    with pytest.raises(ConfigError, match="model.name"):
        load_config(write_cfg(tmp_path, "[model]\nname = mystery\n"))


def test_keys_of_other_model_rejected(tmp_path):
    # prior_scale belongs to logreg_a9a, not conjugate_gaussian
    with pytest.raises(ConfigError, match="model.prior_scale"):
        load_config(write_cfg(tmp_path, MINIMAL.replace(
            "[method]", "prior_scale = 2.0\n\n[method]")))


def test_schedule_exponent_range():
    base = {"model": {"name": "conjugate_gaussian"},
            "method": {"name": "sgld", "schedule_exponent": "0.51"}}
    assert resolve_config(base).method["schedule_exponent"] == 0.51
    base["method"]["schedule_exponent"] = "0.5"
    with pytest.raises(ConfigError, match="schedule_exponent"):
        resolve_config(base)


def test_bool_forms():
    raw = {"model": {"name": "ica", "include_det": "off"}}
    assert resolve_config(raw).model["include_det"] is False
    raw["model"]["include_det"] = "maybe"
    with pytest.raises(ConfigError, match="include_det"):
        resolve_config(raw)


def test_widths_validation():
    assert parse_widths("1,100,100,1") == (1, 100, 100, 1)
    with pytest.raises(ConfigError, match="widths"):
        parse_widths("1,a,1")
    with pytest.raises(ConfigError, match="widths"):
        parse_widths("7")
    with pytest.raises(ConfigError, match="model.widths"):
        resolve_config({"model": {"name": "step_bnn", "widths": "1,-3,1"}})


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(OSError):
        load_config(str(tmp_path / "absent.ini"))


def test_malformed_ini_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, "no section header\n"))


def test_steps_from_dt():
    assert steps_from_dt(0.05) == 20
    assert steps_from_dt(0.01) == 100
    assert steps_from_dt(1.0) == 1
