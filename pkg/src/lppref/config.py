"""Experiment configuration (JSON).

Schema, with defaults::

    {
      "seed": 0,                      master seed for every random draw
      "out": "results",               output directory
      "data": {
        "source": "synthetic",        "synthetic" or "csv"
        "checkins": null,             checkins.csv path (source "csv")
        "prefs": null,                prefs.csv path (source "csv")
        "m_users": 100,               synthetic trajectory users
        "n_pref_users": 20,           synthetic preference users
        "granularity": 6,             hours per slot for gen-data/train
        "density": 0.5,               fraction of items each user visits
        "truth_hours": 6,             time scale of the synthetic preferences
        "rank": 2                     rank of the synthetic preferences
      },
      "model": {
        "d": 3, "lambda_u": 0.001, "lambda_v": 0.001,
        "gamma0": 1.0, "decay": 0.0, "k": 200,
        "init_scale": 0.1,
        "max_norm": 1.0,              null disables factor projection
        "normalization": "users"      "users" or "ratings" (plain mode only)
      },
      "noise": {
        "epsilon": 0.01,              "inf" for the noiseless limit
        "epsilon_split": 0.5,         share of epsilon spent on visit bits
        "clip_bound": 1.0,            "inf" disables clipping
        "seed": null                  client-noise seed; defaults to master seed
      },
      "eval": {
        "fixed": {"time": 6, "epsilon": 0.01, "unknown_rate": 0.1},
        "sweeps": {
          "time": [2, 3, 4, 6, 8, 12],
          "epsilon": [0.0001, 0.0003, 0.001, 0.005, 0.01],
          "unknown_rate": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
        },
        "repetitions": 100, "folds": 10,
        "score": "masked"             "masked" or "full"
      }
    }

Numbers may be written as strings ("inf", "1e-3").
"""

from __future__ import annotations

import copy
import json
import math
from pathlib import Path

from ._validation import VALID_GRANULARITIES
from .evaluation import AXES, ExperimentParams
from .ldp import NoiseConfig

DEFAULTS = {
    "seed": 0,
    "out": "results",
    "data": {
        "source": "synthetic",
        "checkins": None,
        "prefs": None,
        "m_users": 100,
        "n_pref_users": 20,
        "granularity": 6,
        "density": 0.5,
        "truth_hours": 6,
        "rank": 2,
    },
    "model": {
        "d": 3,
        "lambda_u": 1e-3,
        "lambda_v": 1e-3,
        "gamma0": 1.0,
        "decay": 0.0,
        "k": 200,
        "init_scale": 0.1,
        "max_norm": 1.0,
        "normalization": "users",
    },
    "noise": {"epsilon": 0.01, "epsilon_split": 0.5, "clip_bound": 1.0, "seed": None},
    "eval": {
        "fixed": {"time": 6, "epsilon": 0.01, "unknown_rate": 0.1},
        "sweeps": {
            "time": [2, 3, 4, 6, 8, 12],
            "epsilon": [0.0001, 0.0003, 0.001, 0.005, 0.01],
            "unknown_rate": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        },
        "repetitions": 100,
        "folds": 10,
        "score": "masked",
    },
}

PROFILES = {"ci": 10, "full": 100}


class ConfigError(ValueError):
    """The configuration is malformed or out of range."""


def _merge(base, override, path=""):
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and key != "sweeps":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            _merge(base[key], value, where + ".")
        elif key == "sweeps":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            for axis, values in value.items():
                if axis not in AXES:
                    raise ConfigError(f"unknown sweep axis {axis!r}")
                base[key][axis] = values
        else:
            base[key] = value


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg, assignment):
    """Apply ``a.b.c=value`` to ``cfg`` in place; the value is parsed as JSON if possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    dotted, _, raw = assignment.partition("=")
    keys = dotted.strip().split(".")
    node = {}
    cursor = node
    for k in keys[:-1]:
        cursor[k] = {}
        cursor = cursor[k]
    cursor[keys[-1]] = _parse_value(raw)
    _merge(cfg, node)


def _float(value, where):
    if value is None:
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where} must be a number, got {value!r}") from None


def _int(value, where):
    f = _float(value, where)
    if f is None or not f.is_integer():
        raise ConfigError(f"{where} must be an integer, got {value!r}")
    return int(f)


def _check_epsilon(value, where):
    eps = _float(value, where)
    if eps is None or math.isnan(eps) or eps <= 0:
        raise ConfigError(f"{where} must be > 0, got {value!r}")
    return eps


def _check_rate(value, where):
    rate = _float(value, where)
    if rate is None or not 0 < rate <= 1:
        raise ConfigError(f"{where} must lie in (0, 1], got {value!r}")
    return rate


def _check_granularity(value, where):
    g = _int(value, where)
    if g not in VALID_GRANULARITIES:
        raise ConfigError(f"{where} must be one of {VALID_GRANULARITIES}, got {value!r}")
    return g


def validate(cfg, need_files=True):
    """Normalize types and range-check every field; returns the config."""
    cfg["seed"] = _int(cfg["seed"], "seed")
    data = cfg["data"]
    if data["source"] not in ("synthetic", "csv"):
        raise ConfigError(f"data.source must be 'synthetic' or 'csv', got {data['source']!r}")
    if data["source"] == "csv" and need_files:
        for key in ("checkins", "prefs"):
            if not data[key]:
                raise ConfigError(f"data.{key} is required when data.source is 'csv'")
            if not Path(data[key]).is_file():
                raise FileNotFoundError(f"data.{key}: no such file: {data[key]}")
    data["m_users"] = _int(data["m_users"], "data.m_users")
    data["n_pref_users"] = _int(data["n_pref_users"], "data.n_pref_users")
    data["rank"] = _int(data["rank"], "data.rank")
    data["granularity"] = _check_granularity(data["granularity"], "data.granularity")
    data["truth_hours"] = _check_granularity(data["truth_hours"], "data.truth_hours")
    data["density"] = _check_rate(data["density"], "data.density")

    model = cfg["model"]
    model["d"] = _int(model["d"], "model.d")
    model["k"] = _int(model["k"], "model.k")
    if model["d"] < 1 or model["k"] < 0:
        raise ConfigError("model.d must be >= 1 and model.k >= 0")
    for key in ("lambda_u", "lambda_v", "gamma0", "decay", "init_scale"):
        model[key] = _float(model[key], f"model.{key}")
        if model[key] is None or model[key] < 0:
            raise ConfigError(f"model.{key} must be >= 0")
    model["max_norm"] = _float(model["max_norm"], "model.max_norm")
    if model["max_norm"] is not None and model["max_norm"] <= 0:
        raise ConfigError("model.max_norm must be > 0 or null")
    if model["normalization"] not in ("users", "ratings"):
        raise ConfigError("model.normalization must be 'users' or 'ratings'")

    noise = cfg["noise"]
    noise["epsilon"] = _check_epsilon(noise["epsilon"], "noise.epsilon")
    noise["epsilon_split"] = _float(noise["epsilon_split"], "noise.epsilon_split")
    if not 0 < noise["epsilon_split"] < 1:
        raise ConfigError("noise.epsilon_split must lie strictly inside (0, 1)")
    noise["clip_bound"] = _check_epsilon(noise["clip_bound"], "noise.clip_bound")
    if noise["seed"] is not None:
        noise["seed"] = _int(noise["seed"], "noise.seed")

    ev = cfg["eval"]
    fixed = ev["fixed"]
    fixed["time"] = _check_granularity(fixed["time"], "eval.fixed.time")
    fixed["epsilon"] = _check_epsilon(fixed["epsilon"], "eval.fixed.epsilon")
    fixed["unknown_rate"] = _check_rate(fixed["unknown_rate"], "eval.fixed.unknown_rate")
    checks = {"time": _check_granularity, "epsilon": _check_epsilon, "unknown_rate": _check_rate}
    for axis, values in ev["sweeps"].items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"eval.sweeps.{axis} must be a nonempty list")
        ev["sweeps"][axis] = [checks[axis](v, f"eval.sweeps.{axis}") for v in values]
    ev["repetitions"] = _int(ev["repetitions"], "eval.repetitions")
    ev["folds"] = _int(ev["folds"], "eval.folds")
    if ev["repetitions"] < 1 or ev["folds"] < 2:
        raise ConfigError("eval.repetitions must be >= 1 and eval.folds >= 2")
    if ev["score"] not in ("masked", "full"):
        raise ConfigError("eval.score must be 'masked' or 'full'")
    return cfg


def load_config(path=None, overrides=(), need_files=True):
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        _merge(cfg, user)
    for assignment in overrides:
        apply_override(cfg, assignment)
    return validate(cfg, need_files=need_files)


def noise_config(cfg):
    n = cfg["noise"]
    return NoiseConfig(
        epsilon=n["epsilon"],
        dim=cfg["model"]["d"],
        epsilon_split=n["epsilon_split"],
        clip_bound=n["clip_bound"],
        seed=cfg["seed"] if n["seed"] is None else n["seed"],
    )


def experiment_params(cfg, mode="plain"):
    m, n, ev = cfg["model"], cfg["noise"], cfg["eval"]
    return ExperimentParams(
        time=ev["fixed"]["time"],
        epsilon=ev["fixed"]["epsilon"],
        unknown_rate=ev["fixed"]["unknown_rate"],
        mode=mode,
        folds=ev["folds"],
        n_components=m["d"],
        lambda_u=m["lambda_u"],
        lambda_v=m["lambda_v"],
        gamma0=m["gamma0"],
        decay=m["decay"],
        n_rounds=m["k"],
        init_scale=m["init_scale"],
        normalization=m["normalization"],
        max_norm=m["max_norm"],
        epsilon_split=n["epsilon_split"],
        clip_bound=n["clip_bound"],
        score=ev["score"],
    )


def dump_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
