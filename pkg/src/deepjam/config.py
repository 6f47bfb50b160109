"""Flat JSON configuration files with schema validation, plus named presets."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .jam import ANCHOR_RULES, TEMPLATE_MODES, JamConfig
from .simgen import SimConfig
from .sphere import KarcherConfig
from .warpnet import NetConfig


class ConfigError(ValueError):
    """A configuration file or value failed validation."""


# key -> (type, validator, description)
TRAIN_SCHEMA = {
    "num_periods": (int, lambda v: v >= 1, "number of periods K"),
    "outer_iterations": (int, lambda v: v >= 1, "outer DeepJAM iterations"),
    "epochs_per_iteration": (int, lambda v: v >= 1, "network epochs per outer iteration"),
    "num_layers": (int, lambda v: v >= 1, "convolutional layers including the output layer"),
    "filters": (int, lambda v: v >= 1, "filters per hidden layer"),
    "kernel_size": (int, lambda v: v >= 1, "convolution kernel width"),
    "learning_rate": (float, lambda v: v > 0, "Adam learning rate"),
    "beta1": (float, lambda v: 0 <= v < 1, "Adam first-moment decay"),
    "beta2": (float, lambda v: 0 <= v < 1, "Adam second-moment decay"),
    "epsilon": (float, lambda v: v > 0, "Adam denominator offset"),
    "batch_size": (int, lambda v: v >= 1, "mini-batch size"),
    "seed": (int, lambda v: v >= 0, "seed for initialization and shuffling"),
    "karcher_tol": (float, lambda v: v > 0, "Karcher stopping threshold on the mean tangent norm"),
    "karcher_max_iter": (int, lambda v: v >= 1, "Karcher iteration cap"),
    "karcher_step_size": (float, lambda v: 0 < v <= 1, "Karcher step size"),
    "template_anchor": (str, lambda v: v in ANCHOR_RULES, f"one of {ANCHOR_RULES}"),
    "subject_template_mode": (str, lambda v: v in TEMPLATE_MODES, f"one of {TEMPLATE_MODES}"),
    "split": (str, lambda v: True, "dataset split to train on (ignored when the dataset has no split)"),
}

TRAIN_DEFAULTS = {
    "num_periods": 3,
    "outer_iterations": 300,
    "epochs_per_iteration": 1,
    "num_layers": 6,
    "filters": 16,
    "kernel_size": 32,
    "learning_rate": 1e-4,
    "beta1": 0.9,
    "beta2": 0.999,
    "epsilon": 1e-8,
    "batch_size": 4,
    "seed": 0,
    "karcher_tol": 1e-6,
    "karcher_max_iter": 200,
    "karcher_step_size": 0.3,
    "template_anchor": "mean_initial_values",
    "subject_template_mode": "amplitude",
    "split": "train",
}

SIM_SCHEMA = {
    "n_total": (int, lambda v: v >= 2, "number of simulated subjects"),
    "fractions": (list, lambda v: len(v) == 4 and all(isinstance(x, (int, float)) and x >= 0 for x in v)
                  and abs(sum(v) - 1) < 1e-9, "train/tune/validation/test fractions summing to 1"),
    "num_periods": (int, lambda v: v >= 1, "number of periods K"),
    "points_per_period": (int, lambda v: v >= 3, "grid points per period, endpoints included"),
    "seed": (int, lambda v: v >= 0, "generator seed"),
    "warp_roughness": (float, lambda v: v >= 0, "tangent standard deviation of planted warps"),
    "basis_size": (int, lambda v: v >= 1, "sine basis size for planted warps"),
    "local_roughness": ((float, type(None)), lambda v: v is None or v >= 0,
                        "tangent standard deviation of local warps (defaults to warp_roughness)"),
}


def _check(values: dict, schema: dict, source: str) -> dict:
    unknown = sorted(set(values) - set(schema))
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) {unknown}; allowed keys are {sorted(schema)}")
    out = {}
    for key, value in values.items():
        kind, ok, desc = schema[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if isinstance(value, bool) or not isinstance(value, kind):
            raise ConfigError(f"{source}: {key} must be {getattr(kind, '__name__', kind)} ({desc}), got {value!r}")
        if not ok(value):
            raise ConfigError(f"{source}: invalid {key}={value!r}; expected {desc}")
        out[key] = value
    return out


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a flat JSON object")
    return data


def preset_names() -> list[str]:
    root = resources.files("deepjam") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    path = resources.files("deepjam") / "presets" / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available presets: {preset_names()}")
    return json.loads(path.read_text())


def train_config(preset: str | None = None, path: str | Path | None = None, **overrides) -> dict:
    """Merge defaults, a preset, a config file and explicit overrides (later wins)."""
    merged = dict(TRAIN_DEFAULTS)
    if preset:
        merged.update(_check(load_preset(preset), TRAIN_SCHEMA, f"preset {preset}"))
    if path:
        merged.update(_check(load_config_file(path), TRAIN_SCHEMA, str(path)))
    merged.update(_check({k: v for k, v in overrides.items() if v is not None}, TRAIN_SCHEMA, "command line"))
    return merged


def sim_config(path: str | Path | None = None, **overrides) -> SimConfig:
    values = _check(load_config_file(path), SIM_SCHEMA, str(path)) if path else {}
    values.update(_check({k: v for k, v in overrides.items() if v is not None}, SIM_SCHEMA, "command line"))
    if "fractions" in values:
        values["fractions"] = tuple(float(x) for x in values["fractions"])
    try:
        return SimConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def jam_config(values: dict, num_points: int, num_channels: int) -> JamConfig:
    """Build a :class:`JamConfig` from a validated flat dict and the data shape."""
    try:
        return _jam_config(values, num_points, num_channels)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _jam_config(values: dict, num_points: int, num_channels: int) -> JamConfig:
    net = NetConfig(
        num_points=num_points,
        num_channels=num_channels,
        num_layers=values["num_layers"],
        filters=values["filters"],
        kernel_size=values["kernel_size"],
        learning_rate=values["learning_rate"],
        beta1=values["beta1"],
        beta2=values["beta2"],
        epsilon=values["epsilon"],
        batch_size=values["batch_size"],
        seed=values["seed"],
    )
    karcher = KarcherConfig(values["karcher_tol"], values["karcher_max_iter"], values["karcher_step_size"])
    return JamConfig(
        num_periods=values["num_periods"],
        outer_iterations=values["outer_iterations"],
        net=net,
        karcher=karcher,
        epochs_per_iteration=values["epochs_per_iteration"],
        template_anchor=values["template_anchor"],
        subject_template_mode=values["subject_template_mode"],
    )
