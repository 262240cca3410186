"""Scenario configuration: a flat INI file parsed with ``configparser``.

Example::

    [scenario]
    name = prescribed_bump
    times = 25, 50, 100, 200
    t_max = 400
    seed = 0

    [data]
    amplitude = 1.0
    drift = 0.3

    [field]
    amplitude = 0.05

    [resolution]
    ensemble = 6, 6
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field as dc_field, fields, replace
from pathlib import Path
from typing import Optional

SCENARIOS = ("free_transport", "prescribed_bump", "self_consistent")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass(frozen=True)
class DataConfig:
    amplitude: float = 1.0
    drift: float = 0.3
    v_radius: float = 0.6
    x_radius: float = 1.0
    k: float = 1.0
    power: int = 4
    mass: float = 1.0
    charge: float = 1.0


@dataclass(frozen=True)
class FieldConfig:
    preset: str = "bump"
    amplitude: float = 0.05
    dir_E: tuple = (1.0, 0.0, 0.0)
    dir_B: tuple = (0.0, 1.0, 0.0)


@dataclass(frozen=True)
class ResolutionConfig:
    ensemble: tuple = (6, 6)
    x_quad: int = 16
    refine_x_quad: int = 32
    momentum_nodes: int = 7
    charge_nodes: int = 4
    sample_points: int = 128
    field_nodes: int = 10
    gradient_points: int = 64


@dataclass(frozen=True)
class ToleranceConfig:
    ode: float = 1e-10
    quad_rtol: float = 1e-4
    gamma: float = 0.5


@dataclass(frozen=True)
class PicardSection:
    T_end: float = 4.0
    n_t: int = 5
    n_x: int = 7
    resolution: tuple = (4, 4)
    tol: float = 1e-8
    max_iter: int = 12


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "prescribed_bump"
    times: tuple = (25.0, 50.0, 100.0, 200.0)
    t_max: float = 400.0
    seed: int = 0
    out: str = "vms_out"
    threads: int = 1
    checks: tuple = ()
    data: DataConfig = dc_field(default_factory=DataConfig)
    field: FieldConfig = dc_field(default_factory=FieldConfig)
    resolution: ResolutionConfig = dc_field(default_factory=ResolutionConfig)
    tolerances: ToleranceConfig = dc_field(default_factory=ToleranceConfig)
    picard: PicardSection = dc_field(default_factory=PicardSection)

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.name!r}; expected one of {SCENARIOS}")
        t = self.times
        if not t or any(b <= a for a, b in zip(t, t[1:])) or t[0] <= 0:
            raise ConfigError("output times must be positive and increasing")
        if self.t_max < t[-1]:
            raise ConfigError("t_max must be at least the last output time")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        r = self.resolution
        ints = [*r.ensemble, r.x_quad, r.refine_x_quad, r.momentum_nodes, r.charge_nodes,
                r.sample_points, r.field_nodes, r.gradient_points]
        if any(int(a) != a or a < 1 for a in ints):
            raise ConfigError("all resolutions must be positive integers")
        if r.momentum_nodes < 2:
            raise ConfigError("momentum_nodes must be >= 2")
        if not 0 < self.tolerances.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.tolerances.ode <= 0 or self.tolerances.quad_rtol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.field.preset not in ("zero", "bump"):
            raise ConfigError(f"unknown field preset {self.field.preset!r}")

    @property
    def all_times(self):
        """Output times plus ``t_max`` (sorted, unique)."""
        return tuple(sorted(set(self.times) | {self.t_max}))

    def to_dict(self):
        return asdict(self)

    def digest(self) -> str:
        """Hash of the result-relevant settings (thread count and output path excluded)."""
        d = self.to_dict()
        d.pop("threads")
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)


def _tuple(text, cast=float):
    return tuple(cast(a.strip()) for a in text.split(",") if a.strip())


def _section(cp, name, cls):
    if not cp.has_section(name):
        return cls()
    kw = {}
    # configparser lowercases keys; match field names case-insensitively
    known = {f.name.lower(): f for f in fields(cls)}
    for low, raw in cp.items(name):
        if low not in known:
            raise ConfigError(f"unknown key {name}.{low}")
        key = known[low].name
        default = known[low].default
        try:
            if isinstance(default, tuple):
                kw[key] = _tuple(raw, int if default and isinstance(default[0], int) else float)
            elif isinstance(default, bool):
                kw[key] = cp.getboolean(name, low)
            elif isinstance(default, int):
                kw[key] = int(raw)
            elif isinstance(default, float):
                kw[key] = float(raw)
            else:
                kw[key] = raw.strip()
        except ValueError as exc:
            raise ConfigError(f"bad value for {name}.{key}: {raw!r}") from exc
    return cls(**kw)


def parse_config(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    allowed = {"scenario", "data", "field", "resolution", "tolerances", "picard"}
    extra = set(cp.sections()) - allowed
    if extra:
        raise ConfigError(f"unknown sections {sorted(extra)}")
    kw = {}
    if cp.has_section("scenario"):
        for key, raw in cp.items("scenario"):
            try:
                if key == "name" or key == "out":
                    kw[key] = raw.strip()
                elif key == "times":
                    kw[key] = _tuple(raw)
                elif key == "checks":
                    kw[key] = tuple(a.strip() for a in raw.split(",") if a.strip())
                elif key == "t_max":
                    kw[key] = float(raw)
                elif key in ("seed", "threads"):
                    kw[key] = int(raw)
                else:
                    raise ConfigError(f"unknown key scenario.{key}")
            except ValueError as exc:
                raise ConfigError(f"bad value for scenario.{key}: {raw!r}") from exc
    return ScenarioConfig(data=_section(cp, "data", DataConfig), field=_section(cp, "field", FieldConfig),
                          resolution=_section(cp, "resolution", ResolutionConfig),
                          tolerances=_section(cp, "tolerances", ToleranceConfig),
                          picard=_section(cp, "picard", PicardSection), **kw)


def load_config(path: Optional[str]) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path} not found")
    return parse_config(p.read_text())
