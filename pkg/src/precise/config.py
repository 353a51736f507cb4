"""Flat ``key=value`` run configuration shared by every CLI subcommand."""

from __future__ import annotations

import os
from dataclasses import fields

from .experiment import TrainConfig


class ConfigError(ValueError):
    pass


def _tuple_of(conv):
    def parse(s):
        s = str(s).strip()
        return tuple(conv(v) for v in s.split(",") if v.strip()) if s else ()
    return parse


def _bool(s) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_TRAIN_PARSERS = {
    int: int, float: float, str: str, bool: _bool, tuple: _tuple_of(int),
}

# keys beyond TrainConfig: data sources, sweep grids, artifacts
EXTRA_KEYS = {
    "data": (str, "synth"),
    "test_data": (str, ""),
    "n_per_class": (_tuple_of(int), (95, 5)),
    "test_n_per_class": (_tuple_of(int), ()),
    "side": (int, 16),
    "data_seed": (int, 0),
    "fractions": (_tuple_of(float), (0.01, 0.05, 0.10, 0.25, 0.50, 1.00)),
    "d_values": (_tuple_of(int), (1, 2, 3, 4, 5)),
    "checkpoint": (str, ""),
    "queries": (_tuple_of(str), ()),
    "workers": (int, 1),
}


def _train_defaults() -> dict:
    return {f.name: f.default for f in fields(TrainConfig)}


def defaults() -> dict:
    out = _train_defaults()
    out.update({k: d for k, (_, d) in EXTRA_KEYS.items()})
    return out


def parse_value(key: str, raw):
    if key in EXTRA_KEYS:
        conv = EXTRA_KEYS[key][0]
    else:
        default = _train_defaults().get(key, KeyError)
        if default is KeyError:
            raise ConfigError(f"unknown config key '{key}'")
        conv = _TRAIN_PARSERS[type(default)]
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for '{key}': {raw!r} ({exc})") from None


def normalize_key(key: str) -> str:
    return key.strip().lstrip("-").replace("-", "_")


def read_config_file(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key = normalize_key(key)
        out[key] = parse_value(key, value.strip())
    return out


def resolve(file_values: dict, overrides: dict) -> dict:
    """Defaults, then file values, then flag overrides."""
    cfg = defaults()
    cfg.update(file_values)
    cfg.update(overrides)
    return cfg


def train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(**{f.name: cfg[f.name] for f in fields(TrainConfig)})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_config(cfg: dict, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write("# effective configuration\n")
        for key in sorted(cfg):
            f.write(f"{key}={format_value(cfg[key])}\n")
