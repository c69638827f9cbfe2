"""Run configuration: a nested YAML file mirroring the module configs.

Unknown keys are rejected so that typos surface at load time.  Every
section is optional; defaults reproduce the simulated-detection experiment
(constant-velocity cells, P_D = 0.9, 30 clutter returns per frame).
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .densities import ReductionConfig
from .dynamics import BirthParams, MitosisModel, ModeModel, MotionModel
from .filters import FilterConfig, Models
from .measurement import (
    ClutterParams,
    IntensityThreshold,
    SensorModel,
    TableAppearance,
    beta_features,
    uniform_appearance,
)
from .simulator import ScenarioConfig, small_scenario_config


class ConfigError(ValueError):
    pass


@dataclass
class MotionSection:
    w1: float = 1.0
    w2: float = 0.0
    sigma_v: float = 1.0
    sigma_s: float = 9.0


@dataclass
class MitosisSection:
    n_components: int = 1
    theta_hat: float = 0.0
    epsilon: float = 90.0
    distance: float = 10.0
    sigma_s: float = 9.0
    bearing_from_velocity: bool = True


@dataclass
class ModeSection:
    p_sp: float = 0.03
    rho: list = field(default_factory=lambda: [[0.01, 0.98, 0.01], [0.01, 0.09, 0.9]])
    persistence: Optional[float] = None


@dataclass
class SensorSection:
    sigma_eps: float = 2.0
    clutter_rate: float = 30.0
    width: float = 1000.0
    height: float = 1000.0
    gate: float = 5.0
    appearance: str = "beta"
    appearance_table: Optional[str] = None


@dataclass
class BirthSection:
    r_base: float = 0.001
    edge_boost: float = 3.0
    inner_boost: float = 1.0
    edge_width: float = 50.0
    position_std: float = 5.0
    velocity_std: float = 3.0
    mode: list = field(default_factory=lambda: [0.97, 0.03])
    detection: list = field(default_factory=lambda: [9.0, 1.0])
    known_pd: Optional[float] = 0.9
    assoc_threshold: float = 0.5


@dataclass
class ClutterSection:
    birth: float = 0.5
    survival: float = 0.9
    detection: float = 0.9


@dataclass
class ReductionSection:
    prune: float = 1e-5
    merge: float = 0.1
    cap: int = 20


@dataclass
class FilterSection:
    variant: str = "pa"
    gibbs_samples: int = 1000
    cap: int = 1000
    floor: float = 1e-5
    sampler: str = "gibbs"
    unknown_clutter: bool = False
    unknown_detection: bool = False
    max_block_dim: int = 32
    k_beta: float = 1.1
    reduction: ReductionSection = field(default_factory=ReductionSection)


@dataclass
class MetricsSection:
    ospa_c: float = 25.0
    ospa_p: float = 1.0
    ospa2_window: int = 20
    tra_radius: float = 25.0


def _scenario_defaults() -> dict:
    return dataclasses.asdict(small_scenario_config(12))


@dataclass
class RunConfig:
    seed: int = 0
    scenario: dict = field(default_factory=_scenario_defaults)
    motion: MotionSection = field(default_factory=MotionSection)
    mitosis: MitosisSection = field(default_factory=MitosisSection)
    modes: ModeSection = field(default_factory=ModeSection)
    sensor: SensorSection = field(default_factory=SensorSection)
    birth: BirthSection = field(default_factory=BirthSection)
    clutter: ClutterSection = field(default_factory=ClutterSection)
    filter: FilterSection = field(default_factory=FilterSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)

    # -- builders -------------------------------------------------------

    def scenario_config(self) -> ScenarioConfig:
        kw = dict(self.scenario)
        kw["image_size"] = tuple(kw.get("image_size", (self.sensor.width, self.sensor.height)))
        kw["seed"] = self.seed
        return ScenarioConfig(**kw)

    def appearance(self):
        kind = self.sensor.appearance
        if kind == "beta":
            return beta_features
        if kind == "uniform":
            return uniform_appearance
        if kind == "intensity":
            return IntensityThreshold()
        if kind == "table":
            return TableAppearance.from_file(self.sensor.appearance_table)
        raise ConfigError(f"unknown appearance model {kind!r}")

    def models(self) -> Models:
        s = self.sensor
        sensor = SensorModel.cell(s.sigma_eps, appearance=self.appearance(), clutter_rate=s.clutter_rate,
                                  bounds=((0.0, s.width), (0.0, s.height)),
                                  clutter_objects=ClutterParams(**dataclasses.asdict(self.clutter)), gate=s.gate)
        b = dataclasses.asdict(self.birth)
        b["mode"], b["detection"] = tuple(b["mode"]), tuple(b["detection"])
        if self.filter.unknown_detection:
            b["known_pd"] = None
        m = self.modes
        return Models(
            motion=MotionModel.cell(**dataclasses.asdict(self.motion)),
            mitosis=MitosisModel.cell(**dataclasses.asdict(self.mitosis)),
            modes=ModeModel(m.p_sp, tuple(map(tuple, m.rho)), m.persistence),
            sensor=sensor,
            birth=BirthParams(**b),
        )

    def filter_config(self, variant: Optional[str] = None) -> FilterConfig:
        f = dataclasses.asdict(self.filter)
        f["reduction"] = ReductionConfig(**f["reduction"])
        if variant is not None:
            f["variant"] = variant
        return FilterConfig(seed=self.seed, **f)


def _build(cls, data, path: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
    kw = {}
    for k, v in data.items():
        sub = names[k].default_factory if names[k].default_factory is not dataclasses.MISSING else None
        proto = sub() if sub is not None else None
        if dataclasses.is_dataclass(proto):
            kw[k] = _build(type(proto), v, f"{path}.{k}")
        else:
            kw[k] = v
    return cls(**kw)


def parse_config(data: Optional[dict], base_dir: str = ".") -> RunConfig:
    data = dict(data or {})
    scenario = data.pop("scenario", None)
    cfg = _build(RunConfig, data, "config")
    if scenario is not None:
        if not isinstance(scenario, dict):
            raise ConfigError("config.scenario: expected a mapping")
        allowed = {f.name for f in dataclasses.fields(ScenarioConfig)} - {"seed"}
        unknown = sorted(set(scenario) - allowed)
        if unknown:
            raise ConfigError(f"config.scenario: unknown key(s) {', '.join(unknown)}")
        cfg.scenario.update(scenario)
    tab = cfg.sensor.appearance_table
    if tab is not None:
        tab = tab if os.path.isabs(tab) else os.path.join(base_dir, tab)
        if not os.path.exists(tab):
            raise ConfigError(f"config.sensor.appearance_table: file not found: {tab}")
        cfg.sensor.appearance_table = tab
    if cfg.sensor.appearance == "table" and tab is None:
        raise ConfigError("config.sensor: the table appearance model needs appearance_table")
    # fail early on invalid values
    try:
        cfg.filter_config()
        cfg.models()
        cfg.scenario_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return parse_config({})
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, os.path.dirname(os.path.abspath(path)))


def dump_config(cfg: RunConfig) -> str:
    data = dataclasses.asdict(cfg)
    data["scenario"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in data["scenario"].items() if k != "seed"}
    return yaml.safe_dump(data, sort_keys=False)


__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "dump_config"]
