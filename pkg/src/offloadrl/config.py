"""Experiment configuration: defaults, INI-style config files, and manifests.

Precedence is command-line flags > config file > built-in defaults. Config
files are flat ``key = value`` pairs grouped into sections; values are JSON
literals, fractions such as ``1/3``, or bare strings. Unknown sections or keys
are errors.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .costs import DEVICES
from .dataset import GeneratorConfig
from .domain import ConstraintBudget, RewardWeights
from .rl import TrainConfig


class ConfigError(ValueError):
    pass


# Reward weight presets (alpha, beta_assoc, beta_latency, beta_cost).
WEIGHT_PRESETS = {
    "no_assoc": RewardWeights(1.0, 0.0, 0.5, 0.5),
    "no_latency": RewardWeights(1.0, 0.5, 0.0, 0.5),
    "no_cost": RewardWeights(1.0, 0.5, 0.5, 0.0),
    "balanced": RewardWeights(1.0, 1 / 3, 1 / 3, 1 / 3),
}


@dataclass(frozen=True)
class SweepAxes:
    lambdas: tuple[float, ...] = (0.0, 1.0, 10.0)
    budgets: tuple[tuple[float, float], ...] = ((20.0, 0.035), (30.0, 0.05), (45.0, 0.075))
    devices: tuple[str, ...] = tuple(DEVICES)
    gaps: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3)
    weights: tuple[str, ...] = tuple(WEIGHT_PRESETS)


@dataclass(frozen=True)
class RunOptions:
    seeds: int = 3
    methods: tuple[str, ...] = ("rc-a2c", "random", "local", "cloud")
    score_mode: str = "knn"
    ucb_exploration: float = math.sqrt(2)
    data: str = ""
    workers: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    reward: RewardWeights = field(default_factory=RewardWeights)
    budget: ConstraintBudget = field(default_factory=ConstraintBudget)
    sweep: SweepAxes = field(default_factory=SweepAxes)
    run: RunOptions = field(default_factory=RunOptions)

    def __post_init__(self):
        if self.run.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        for name in self.sweep.devices:
            if name not in DEVICES:
                raise ConfigError(f"unknown device {name!r} in sweep; known: {sorted(DEVICES)}")
        for name in self.sweep.weights:
            if name not in WEIGHT_PRESETS:
                raise ConfigError(f"unknown weight preset {name!r}; known: {sorted(WEIGHT_PRESETS)}")
        if self.run.score_mode not in ("knn", "mean"):
            raise ConfigError("score_mode must be 'knn' or 'mean'")

    def replace(self, **sections) -> "ExperimentConfig":
        return dataclasses.replace(self, **sections)

    def with_values(self, section: str, **values) -> "ExperimentConfig":
        try:
            new = dataclasses.replace(getattr(self, section), **values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {exc}") from None
        return dataclasses.replace(self, **{section: new})


_SECTIONS = ("generator", "train", "reward", "budget", "sweep", "run")
_FRACTION = re.compile(r"^\s*-?[\d.]+\s*/\s*[\d.]+\s*$")


def _parse_value(text: str):
    text = text.strip()
    if _FRACTION.match(text):
        num, den = text.split("/")
        return float(num) / float(den)
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _tupleize(v):
    if isinstance(v, list):
        return tuple(_tupleize(x) for x in v)
    return v


def _coerce(section: str, key: str, raw, default):
    v = _tupleize(raw)
    try:
        if isinstance(default, bool):
            if not isinstance(v, bool):
                raise TypeError
            return v
        if isinstance(default, int) and not isinstance(default, bool):
            if isinstance(v, float) and v.is_integer():
                v = int(v)
            if not isinstance(v, int) or isinstance(v, bool):
                raise TypeError
            return v
        if isinstance(default, float):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise TypeError
            return float(v)
        if isinstance(default, str):
            return str(v)
        if isinstance(default, tuple) or default is None:
            if v is None or isinstance(v, tuple):
                return v
            if isinstance(default, tuple):
                return (v,)
            raise TypeError
    except TypeError:
        raise ConfigError(f"[{section}] {key}: cannot use {raw!r} (expected like {default!r})") from None
    return v


def apply_values(cfg: ExperimentConfig, section: str, values: dict) -> ExperimentConfig:
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section [{section}]")
    obj = getattr(cfg, section)
    names = {f.name for f in dataclasses.fields(obj)}
    coerced = {}
    for key, raw in values.items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        coerced[key] = _coerce(section, key, raw, getattr(obj, key))
    return cfg.with_values(section, **coerced)


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = base or ExperimentConfig()
    for section in cp.sections():
        cfg = apply_values(cfg, section, {k: _parse_value(v) for k, v in cp[section].items()})
    return cfg


def _render(v) -> str:
    if isinstance(v, tuple):
        return json.dumps(_listify(v))
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    return json.dumps(v)


def _listify(v):
    if isinstance(v, tuple):
        return [_listify(x) for x in v]
    return v


def dump_config(cfg: ExperimentConfig) -> str:
    """Every resolved value, in a form :func:`load_config` reads back exactly."""
    lines = []
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        lines.append(f"[{section}]")
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_render(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def write_config(cfg: ExperimentConfig, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(cfg), encoding="utf-8")
