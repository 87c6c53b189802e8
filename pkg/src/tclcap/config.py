"""Scenario configuration: defaults, JSON round-trip, and presets.

One JSON document drives a whole run.  The ``table1`` preset carries the
reference simulation parameters (2.5 degC/kW, 2.5 kWh/degC, COP 2.5,
2.24 kW, 30 degC ambient, 21 degC setpoint, 2 degC band, 2 minute samples)
at a desk-friendly fleet size of 5,000 devices; ``paper_scale`` lifts the
fleet to 60,000.  Lockout lengths are given in samples.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .core import QosSet, TclParams
from .planner import PlanWeights


@dataclass
class FleetConfig:
    n_devices: int = 5000
    seed: int = 20210
    r_th: float = 2.5
    c_th: float = 2.5
    cop: float = 2.5
    p_rated: float = 2.24
    theta_a: float = 30.0
    theta_set: float = 21.0
    delta: float = 1.0
    tau_tcl: int = 5
    e_tilde: float = 5.0
    n_b: int = 720


@dataclass
class PlanningConfig:
    method: str = "proposed"
    tau_ba: int = 10
    weights: dict = field(default_factory=lambda: PlanWeights().as_dict())
    enforce_nonneg_switches: bool = True
    use_measured_init: bool = True
    qp_max_iter: int = 200_000
    qp_tol: float = 1e-6


@dataclass
class SignalConfig:
    source: str = "synthetic"
    seed: int = 7
    amplitude_frac: float = 0.5
    corr_minutes: list = field(default_factory=lambda: [3.0, 15.0, 120.0])
    mix: list = field(default_factory=lambda: [0.6, 0.25, 0.15])
    ramp_minutes: float = 30.0
    path: str | None = None
    scale: float = 1.0
    force_zero_mean: bool = False

    def as_spec(self) -> dict:
        return {
            "source": self.source, "seed": self.seed,
            "amplitude_frac": self.amplitude_frac,
            "corr_minutes": list(self.corr_minutes), "mix": list(self.mix),
            "ramp_minutes": self.ramp_minutes,
            "path": self.path, "scale": self.scale,
            "force_zero_mean": self.force_zero_mean,
        }


@dataclass
class RunConfig:
    n_steps: int = 720
    t_s_min: float = 2.0
    enforce_lockout: bool = True
    boundary_guard_steps: int | None = None
    record_history: bool = True
    export_omega: bool = False


@dataclass
class ScenarioConfig:
    fleet: FleetConfig = field(default_factory=FleetConfig)
    planning: PlanningConfig = field(default_factory=PlanningConfig)
    signal: SignalConfig = field(default_factory=SignalConfig)
    run: RunConfig = field(default_factory=RunConfig)
    output_dir: str = "runs/scenario"
    label: str = "scenario"

    def tcl_params(self) -> TclParams:
        f = self.fleet
        return TclParams(r_th=f.r_th, c_th=f.c_th, cop=f.cop,
                         p_rated=f.p_rated, theta_a=f.theta_a)

    def qos(self) -> QosSet:
        f = self.fleet
        return QosSet(theta_set=f.theta_set, delta=f.delta, tau_tcl=f.tau_tcl,
                      e_tilde=f.e_tilde, n_b=f.n_b)

    def plan_weights(self) -> PlanWeights:
        return PlanWeights(**self.planning.weights)

    def validate(self) -> None:
        if self.planning.method not in ("proposed", "alternative"):
            raise ValueError(f"unknown planning method {self.planning.method!r}")
        if self.planning.tau_ba < self.fleet.tau_tcl:
            raise ValueError("tau_ba must be at least tau_tcl")
        if self.run.n_steps < 2:
            raise ValueError("n_steps must be at least 2")
        if self.signal.source == "file" and not self.signal.path:
            raise ValueError("file signal source requires a path")
        self.tcl_params()
        self.qos()
        self.plan_weights()

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2,
                                         sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        cfg = cls()
        sections = {"fleet": FleetConfig, "planning": PlanningConfig,
                    "signal": SignalConfig, "run": RunConfig}
        for name, section_cls in sections.items():
            if name in data:
                base = asdict(getattr(cfg, name))
                unknown = set(data[name]) - set(base)
                if unknown:
                    raise ValueError(f"unknown {name} config keys: {sorted(unknown)}")
                base.update(data[name])
                setattr(cfg, name, section_cls(**base))
        for name in ("output_dir", "label"):
            if name in data:
                setattr(cfg, name, data[name])
        extra = set(data) - set(sections) - {"output_dir", "label"}
        if extra:
            raise ValueError(f"unknown config sections: {sorted(extra)}")
        return cfg

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def preset(name: str, paper_scale: bool = False) -> ScenarioConfig:
    """Named starting configurations; ``table1`` is the reference setup."""
    if name != "table1":
        raise ValueError(f"unknown preset {name!r}")
    cfg = ScenarioConfig()
    if paper_scale:
        cfg.fleet.n_devices = 60_000
    return cfg


def apply_overrides(cfg: ScenarioConfig, overrides: dict) -> ScenarioConfig:
    """Dotted-key overrides, e.g. {'planning.tau_ba': 20}."""
    data = cfg.to_dict()
    for key, value in overrides.items():
        parts = key.split(".")
        node = data
        for part in parts[:-1]:
            node = node[part]
        if parts[-1] not in node:
            raise ValueError(f"unknown config key: {key}")
        node[parts[-1]] = value
    return ScenarioConfig.from_dict(data)
