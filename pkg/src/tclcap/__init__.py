"""Capacity-aware planning and tracking for fleets of on/off thermostatic loads."""

from .capacity import (CapacityParams, OmegaSystem, build_omega, energy_bounds,
                       power_bounds, stuck_step, ves_check)
from .config import ScenarioConfig, preset
from .controller import ControllerConfig, dispatch, track_reference
from .core import (DerivedCoefficients, ParameterError, QosSet, TclParams,
                   TclState, derive_coefficients, duty_ratio, qos_check,
                   step_temperature, thermal_energy)
from .fleet import Fleet, FleetTrace, aggregate_audit, apply_and_step, init_fleet
from .metrics import RunMetrics, compute_run_metrics, tracking_error
from .planner import (PlanProblem, PlanSolution, PlanWeights, lemma1_witness,
                      plan_alternative, plan_proposed)
from .pipeline import run_scenario, run_sweep
from .qp import QpProblem, QpSolution, solve

__version__ = "0.1.0"

__all__ = [
    "CapacityParams", "OmegaSystem", "build_omega", "energy_bounds",
    "power_bounds", "stuck_step", "ves_check",
    "ScenarioConfig", "preset",
    "ControllerConfig", "dispatch", "track_reference",
    "DerivedCoefficients", "ParameterError", "QosSet", "TclParams", "TclState",
    "derive_coefficients", "duty_ratio", "qos_check", "step_temperature",
    "thermal_energy",
    "Fleet", "FleetTrace", "aggregate_audit", "apply_and_step", "init_fleet",
    "RunMetrics", "compute_run_metrics", "tracking_error",
    "PlanProblem", "PlanSolution", "PlanWeights", "lemma1_witness",
    "plan_alternative", "plan_proposed",
    "run_scenario", "run_sweep",
    "QpProblem", "QpSolution", "solve",
]
