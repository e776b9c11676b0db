"""Run configuration: sectioned INI files, environment overrides, validation.

Every section maps onto one parameter dataclass and every key onto one of its
fields; unknown sections or keys are rejected so typos do not pass silently.
Any key can be overridden through ``SOMASLAM__<SECTION>__<KEY>``.

Example::

    [dataset]
    path = data/aces.clf
    format = carmen

    [run]
    beams = 11

    [softmw]
    epsilon = 0.12
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, SlamError
from .frontend import FrontendParams
from .loopclosure import GridParams, LoopParams, SearchWindow
from .optimizer import LMOptions
from .softmw import SoftMwParams
from .synth import SynthConfig

ENV_PREFIX = "SOMASLAM__"
FORMATS = ("carmen", "sparse_csv")


@dataclass
class DatasetConfig:
    path: str = ""
    format: str = "carmen"
    relations: str = ""  # empty: use <path>.relations when it exists
    odometry_source: str = "odom"  # CARMEN pose column: odom or laser
    max_range: float = 0.0  # 0: format default
    fov: float = 0.0  # 0: taken from the log, else 180 degrees
    start_angle: float = -math.pi / 2


@dataclass
class RunSettings:
    beams: int = 11
    soft_mw: bool = True
    seed: int = 0
    out: str = "out"
    estimate: str = "pose_graph"  # or landmark_graph
    match_tolerance: float = 0.1
    landmark_iterations: int = 5  # LM iterations after each multiscan
    odometry_sigma_xy: float = 0.05
    odometry_sigma_theta: float = 0.03
    prune_quantile: float = 0.95
    render: bool = True


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    run: RunSettings = field(default_factory=RunSettings)
    frontend: FrontendParams = field(default_factory=FrontendParams)
    softmw: SoftMwParams = field(default_factory=SoftMwParams)
    optimizer: LMOptions = field(default_factory=LMOptions)
    loopclosure: LoopParams = field(default_factory=LoopParams)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self, need_dataset: bool = False) -> "RunConfig":
        try:
            _validate(self, need_dataset)
        except ConfigError:
            raise
        except SlamError as exc:
            raise ConfigError(exc.args[0] if exc.args else str(exc)) from None
        return self

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


SECTIONS = ("dataset", "run", "frontend", "softmw", "optimizer", "loopclosure", "synth")
# loop-closure keys with these prefixes address the nested window / grid parameters
_NESTED = {"window_": "window", "grid_": "grid"}


def _validate(cfg: RunConfig, need_dataset: bool) -> None:
    d, r = cfg.dataset, cfg.run
    if d.format not in FORMATS:
        raise ConfigError(f"dataset.format must be one of {', '.join(FORMATS)}, got {d.format!r}")
    if d.odometry_source not in ("odom", "laser"):
        raise ConfigError("dataset.odometry_source must be odom or laser")
    if d.max_range < 0 or d.fov < 0 or d.fov > 2 * math.pi:
        raise ConfigError("dataset.max_range must be >= 0 and dataset.fov within [0, 2*pi]")
    if need_dataset and not d.path:
        raise ConfigError("no dataset path given")
    if r.beams < 1:
        raise ConfigError("run.beams must be >= 1")
    if r.estimate not in ("pose_graph", "landmark_graph"):
        raise ConfigError("run.estimate must be pose_graph or landmark_graph")
    if not r.match_tolerance > 0 or r.landmark_iterations < 1:
        raise ConfigError("run.match_tolerance must be positive and run.landmark_iterations >= 1")
    if not (r.odometry_sigma_xy > 0 and r.odometry_sigma_theta > 0):
        raise ConfigError("odometry sigmas must be positive")
    if not 0 < r.prune_quantile < 1:
        raise ConfigError("run.prune_quantile must lie in (0, 1)")
    f = cfg.frontend
    if f.window < 1 or f.min_points < 1 or f.stride < 0 or f.min_segment_points < 2 or f.dense_points < 1:
        raise ConfigError("frontend window/min_points/dense_points must be >= 1, stride >= 0, min_segment_points >= 2")
    for name in ("split_distance", "merge_angle", "merge_distance", "min_segment_length", "max_gap",
                 "gate_theta", "gate_rho", "sigma_rho", "sigma_alpha"):
        if not getattr(f, name) > 0:
            raise ConfigError(f"frontend.{name} must be positive")
    cfg.softmw.validate()
    o = cfg.optimizer
    if o.max_iterations < 1 or o.max_tries < 1:
        raise ConfigError("optimizer.max_iterations and max_tries must be >= 1")
    if not (o.initial_lambda > 0 and o.lambda_up > 1 and o.lambda_down > 1):
        raise ConfigError("optimizer needs initial_lambda > 0 and lambda_up, lambda_down > 1")
    if not (o.relative_tolerance >= 0 and o.step_tolerance >= 0):
        raise ConfigError("optimizer tolerances must be non-negative")
    if len(cfg.loopclosure.information) != 3 or min(cfg.loopclosure.information) <= 0:
        raise ConfigError("loopclosure.information needs three positive values")
    cfg.loopclosure.validate()
    cfg.synth.validate()


def _convert(raw: str, default, where: str):
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.replace(",", " ").split())
        return text
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _target(cfg: RunConfig, section: str, key: str):
    """(object, attribute) addressed by ``section.key``."""
    if section not in SECTIONS:
        raise ConfigError(f"unknown config section [{section}]")
    obj = getattr(cfg, section)
    if section == "loopclosure":
        for prefix, attr in _NESTED.items():
            if key.startswith(prefix):
                obj, key = getattr(obj, attr), key[len(prefix):]
                break
    if key not in {f.name for f in dataclasses.fields(obj)} or isinstance(getattr(obj, key),
                                                                          (SearchWindow, GridParams)):
        raise ConfigError(f"unknown config key {section}.{key}")
    return obj, key


def set_value(cfg: RunConfig, section: str, key: str, raw: str) -> None:
    obj, attr = _target(cfg, section.lower(), key.lower())
    setattr(obj, attr, _convert(raw, getattr(obj, attr), f"{section}.{key}"))


def load_config(path=None, env=None, validate: bool = True) -> RunConfig:
    """Defaults, then the INI file at ``path``, then environment overrides."""
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                set_value(cfg, section, key, raw)
    env = os.environ if env is None else env
    for name in sorted(env):
        if name.startswith(ENV_PREFIX):
            parts = name[len(ENV_PREFIX):].split("__")
            if len(parts) != 2:
                raise ConfigError(f"environment override {name} must look like {ENV_PREFIX}SECTION__KEY")
            set_value(cfg, parts[0], parts[1], env[name])
    if validate:
        cfg.validate()
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """INI text that loads back into ``cfg``."""
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, (SearchWindow, GridParams)):
                prefix = "window_" if isinstance(v, SearchWindow) else "grid_"
                for g in dataclasses.fields(v):
                    lines.append(f"{prefix}{g.name} = {_text(getattr(v, g.name))}")
            else:
                lines.append(f"{f.name} = {_text(v)}")
        lines.append("")
    return "\n".join(lines)


def _text(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)
