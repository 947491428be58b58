"""Experiment configuration: INI-style sections with flat typed keys.

Grammar: standard INI as read by configparser, '#'/';' comments, one
[section] per concern: [model], [method], [run], and optionally [eval] and
[suite]. Every key is declared in a schema with a type, a default, and a
validity predicate; unknown sections or keys are rejected with their full
key path. The resolved configuration (all defaults materialized) is echoed
into every output artifact.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

from .errors import ConfigError

MODEL_NAMES = ("conjugate_gaussian", "step_bnn", "logreg_a9a", "ica",
               "hierarchical")
METHOD_NAMES = ("nsfs", "sfs", "sgld", "sgd")
ESTIMATOR_NAMES = ("stl", "relative_entropy")


def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _fraction_step(x):
    # a step size that tiles [0,1] into an integer number of steps
    if not 0 < x <= 1:
        return False
    k = round(1.0 / x)
    return k >= 1 and abs(k * x - 1.0) < 1e-9


def _in_unit(x):
    return 0 <= x <= 1


def _exponent_range(x):
    return 0.5 < x <= 1.0


def _any(x):
    return True


# key -> (type tag, default, predicate, description-of-constraint)
_MODEL_COMMON = {
    "name": ("str", None, lambda s: s in MODEL_NAMES,
             f"one of {MODEL_NAMES}"),
}
_MODEL_KEYS = {
    "conjugate_gaussian": {
        "prior_mean": ("float", 0.0, _any, ""),
        "prior_var": ("float", 1.0, _positive, "> 0"),
        "noise_var": ("float", 1.0, _positive, "> 0"),
        "n_data": ("int", 8, _nonneg, ">= 0"),
        "data_seed": ("int", 0, _nonneg, ">= 0"),
        "true_theta": ("float", 1.0, _any, ""),
    },
    "step_bnn": {
        "widths": ("str", "1,100,100,1", _any, "comma-separated ints"),
        "prior_sd": ("float", 0.3, _positive, "> 0"),
        "noise_sd": ("float", 0.1, _positive, "> 0"),
        "data_seed": ("int", 0, _nonneg, ">= 0"),
    },
    "logreg_a9a": {
        "train_path": ("str", "data/a9a", _any, ""),
        "test_path": ("str", "data/a9a.t", _any, ""),
        "prior_scale": ("float", 1.0, _positive, "> 0"),
    },
    "ica": {
        "ica_dim": ("int", 4, _positive, "> 0"),
        "n_data": ("int", 1000, _positive, "> 0"),
        "data_seed": ("int", 0, _nonneg, ">= 0"),
        "prior_sd": ("float", 1.0, _positive, "> 0"),
        "include_det": ("bool", True, _any, ""),
    },
    "hierarchical": {
        "sigma_x": ("float", 1.0, _positive, "> 0"),
        "n_data": ("int", 5, _positive, "> 0"),
        "data_seed": ("int", 11, _nonneg, ">= 0"),
    },
}

_METHOD_COMMON = {
    "name": ("str", None, lambda s: s in METHOD_NAMES,
             f"one of {METHOD_NAMES}"),
    "gamma": ("float", 1.0, _positive, "> 0"),
    "posterior_samples": ("int", 100, _positive, "> 0"),
    "dt_test": ("float", 0.01, _fraction_step, "1/integer in (0, 1]"),
}
_METHOD_KEYS = {
    "nsfs": {
        "iterations": ("int", 1000, _nonneg, ">= 0"),
        "s_paths": ("int", 128, _positive, "> 0"),
        "data_batch": ("int", 0, _nonneg, ">= 0 (0 = full batch)"),
        "dt_train": ("float", 0.05, _fraction_step, "1/integer in (0, 1]"),
        "estimator": ("str", "stl", lambda s: s in ESTIMATOR_NAMES,
                      f"one of {ESTIMATOR_NAMES}"),
        "include_ito": ("bool", True, _any, ""),
        "lr": ("float", 1e-3, _positive, "> 0"),
        "net_width": ("int", 20, _positive, "> 0"),
        "net_blocks": ("int", 4, _positive, "> 0"),
        "checkpoint": ("str", "", _any, ""),
    },
    "sfs": {
        "mc_points": ("int", 1000, lambda x: x >= 2, ">= 2"),
    },
    "sgld": {
        "iterations": ("int", 10000, _positive, "> 0"),
        "data_batch": ("int", 32, _positive, "> 0"),
        "schedule_a": ("float", 1e-3, _positive, "> 0"),
        "schedule_b": ("float", 10.0, _positive, "> 0"),
        "schedule_exponent": ("float", 0.55, _exponent_range, "in (0.5, 1]"),
        "burn_in": ("int", -1, lambda x: x >= -1, ">= 0, or -1 for auto"),
        "thin": ("int", 0, _nonneg, ">= 1, or 0 for auto"),
    },
    "sgd": {
        "iterations": ("int", 1000, _positive, "> 0"),
        "data_batch": ("int", 32, _positive, "> 0"),
        "step_size": ("float", 0.01, _positive, "> 0"),
    },
}

_RUN_KEYS = {
    "seed": ("int", 0, _nonneg, ">= 0"),
    "out": ("str", "runs/out", _any, ""),
    "threads": ("int", 0, _nonneg, ">= 0 (0 = default)"),
    "wall_time_limit": ("float", 0.0, _nonneg, ">= 0 seconds (0 = off)"),
}

_EVAL_KEYS = {
    "samples": ("str", "", _any, ""),
    "n_bins": ("int", 10, _positive, "> 0"),
    "plot_points": ("int", 256, lambda x: x >= 2, ">= 2"),
}

_SUITE_KEYS = {
    "configs": ("str", "", _any, "semicolon-separated paths"),
    "seeds": ("str", "0", _any, "comma-separated integers"),
}


@dataclass
class ExperimentConfig:
    model: dict
    method: dict
    run: dict
    eval: dict
    suite: dict

    def echo(self) -> dict:
        """Fully materialized configuration for embedding in artifacts."""
        return {
            "model": dict(self.model),
            "method": dict(self.method),
            "run": dict(self.run),
            "eval": dict(self.eval),
            "suite": dict(self.suite),
        }


def _coerce(path: str, raw: str, kind: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{path}: cannot parse {raw!r} as {kind}") from None


def _resolve_section(name: str, raw: dict, schema: dict) -> dict:
    out = {}
    for key, (kind, default, pred, constraint) in schema.items():
        if key in raw:
            val = _coerce(f"{name}.{key}", raw[key], kind)
        elif default is None:
            raise ConfigError(f"{name}.{key} is required")
        else:
            val = default
        if not pred(val):
            raise ConfigError(
                f"{name}.{key}: value {val!r} invalid (must be {constraint})")
        out[key] = val
    unknown = set(raw) - set(schema)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown key {name}.{key}")
    return out


def _named_section(section: str, raw: dict, common: dict, by_name: dict):
    name = raw.get("name")
    if name is None:
        raise ConfigError(f"{section}.name is required")
    name = name.strip()
    if name not in by_name:
        raise ConfigError(
            f"{section}.name: {name!r} invalid (must be one of "
            f"{tuple(by_name)})")
    schema = dict(common)
    schema.update(by_name[name])
    return _resolve_section(section, raw, schema)


def parse_widths(spec: str) -> tuple:
    try:
        widths = tuple(int(w) for w in spec.split(","))
    except ValueError:
        raise ConfigError(
            f"model.widths: cannot parse {spec!r} as comma-separated ints"
        ) from None
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ConfigError("model.widths: need >= 2 positive layer widths")
    return widths


def resolve_config(raw_sections: dict) -> ExperimentConfig:
    """Validate raw {section: {key: str}} text values against the schema."""
    known = {"model", "method", "run", "eval", "suite"}
    unknown = set(raw_sections) - known
    if unknown:
        raise ConfigError(f"unknown section [{sorted(unknown)[0]}]")
    model = _named_section("model", raw_sections.get("model", {}),
                           _MODEL_COMMON, _MODEL_KEYS) \
        if "model" in raw_sections else {}
    method = _named_section("method", raw_sections.get("method", {}),
                            _METHOD_COMMON, _METHOD_KEYS) \
        if "method" in raw_sections else {}
    run = _resolve_section("run", raw_sections.get("run", {}), _RUN_KEYS)
    ev = _resolve_section("eval", raw_sections.get("eval", {}), _EVAL_KEYS)
    suite = _resolve_section("suite", raw_sections.get("suite", {}),
                             _SUITE_KEYS)
    if model.get("name") == "step_bnn":
        parse_widths(model["widths"])  # fail early on malformed widths
    return ExperimentConfig(model, method, run, ev, suite)


def load_config(path: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                       interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError:
        raise  # I/O failure, surfaced as exit code 4 by the CLI
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    raw = {s: dict(parser.items(s)) for s in parser.sections()}
    return resolve_config(raw)


def steps_from_dt(dt: float) -> int:
    return round(1.0 / dt)
