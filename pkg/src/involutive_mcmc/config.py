"""Run configuration: YAML file plus ``section.key=value`` overrides.

Every section has a fixed schema given by :data:`DEFAULTS`; unknown keys and
type mismatches raise :class:`~involutive_mcmc.errors.ConfigError` before
any output is written.
"""
from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .errors import ConfigError

__all__ = ["DEFAULTS", "load_config", "apply_overrides", "resolve", "dump_config"]

DEFAULTS: dict = {
    "seed": 0,
    "train": {
        "target": "mix2",
        "target_params": {},
        "aux_dim": 31,
        "hidden_mult": 8,
        "b": 4,
        "training_steps": 5000,
        "batch": 64,
        "lr": 5e-5,
        "decay": 0.9,
        "eps": 1e-8,
        "clip": 0.01,
        "disc_hidden": 64,
        "init_sd": 2.0,
        "checkpoint_every": 500,
    },
    "sample": {
        "model": None,
        "steps": 1000,
        "chains": 16,
        "init_sd": None,
        "start_chain": 0,
        "monitor_rate": 0.01,
    },
    "diagnose": {
        "samples": None,
        "target": "mix2",
        "target_params": {},
        "bins": 200,
        "max_lag": 50,
        "burn_in": 0,
        "coordinate": 0,
    },
    "verify": {
        "networks": 50,
        "inputs": 10_000,
        "steps": 100_000,
    },
    "universality": {
        "n": 1,
        "eps": [0.5, 0.1, 0.02, 0.01],
        "samples": 10_000,
        "test_phi": 0.0,
    },
}

# keys whose default is None accept these types
_OPTIONAL_TYPES = {("sample", "model"): str, ("sample", "init_sd"): float,
                   ("diagnose", "samples"): str}


def _type_ok(value, default, path) -> bool:
    if default is None:
        want = _OPTIONAL_TYPES.get(path)
        return value is None or isinstance(value, want) or (want is float and _is_number(value))
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, float):
        return _is_number(value)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, list):
        return isinstance(value, list) and all(_is_number(v) for v in value)
    if isinstance(default, dict):
        return isinstance(value, dict)
    return isinstance(value, type(default))


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _merge(base: dict, update: dict, prefix=()) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        path = prefix + (key,)
        dotted = ".".join(path)
        if key not in base:
            raise ConfigError(f"unknown config key {dotted!r}")
        default = base[key]
        free_form = path[-1] == "target_params"
        if isinstance(default, dict) and not free_form:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {dotted!r} must be a mapping")
            out[key] = _merge(default, value, path)
            continue
        if not _type_ok(value, default, path):
            raise ConfigError(f"config key {dotted!r} has invalid value {value!r}")
        if isinstance(default, float) and value is not None:
            value = float(value)
        out[key] = copy.deepcopy(value)
    return out


def load_config(path=None) -> dict:
    """Defaults merged with the YAML file at ``path`` (if given)."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    return _merge(DEFAULTS, data)


def apply_overrides(config: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as YAML scalars."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: {exc}") from exc
        keys = dotted.strip().split(".")
        update = value
        for key in reversed(keys):
            update = {key: update}
        config = _merge(config, update) if keys[0] in DEFAULTS else _fail(dotted)
    return config


def _fail(dotted):
    raise ConfigError(f"unknown config key {dotted!r}")


def resolve(path=None, overrides=(), seed=None) -> dict:
    config = apply_overrides(load_config(path), overrides)
    if seed is not None:
        config["seed"] = int(seed)
    return config


def dump_config(config: dict, path) -> None:
    Path(path).write_text(yaml.safe_dump(config, sort_keys=True))
