"""Batch orchestration: plan, simulate, measure, and write artifacts.

A run directory always receives the fully resolved configuration before any
stage executes, so a failed run can be reproduced from its own folder.  On a
stage failure the partial artifacts stay in place and ``error.json`` records
which stage broke and why.
"""

from __future__ import annotations

import csv
import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import plots
from .capacity import CapacityParams, build_omega, ves_check
from .config import ScenarioConfig, apply_overrides
from .controller import ControllerConfig, TrackResult, track_reference
from .fleet import Fleet, FleetTrace, aggregate_audit, init_fleet
from .metrics import RunMetrics, compute_run_metrics
from .planner import (PlanProblem, PlanSolution, plan_alternative,
                      plan_proposed)
from .signals import ingest_signal


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    fleet: Fleet
    ba_signal_kw: np.ndarray
    plan: PlanSolution
    track: TrackResult
    metrics: RunMetrics
    run_dir: Path | None = None

    @property
    def trace(self) -> FleetTrace:
        return self.track.trace


def build_fleet(cfg: ScenarioConfig) -> Fleet:
    return init_fleet(cfg.tcl_params(), cfg.qos(), cfg.fleet.n_devices,
                      cfg.run.t_s_min, cfg.fleet.seed)


def capacity_from_config(cfg: ScenarioConfig) -> CapacityParams:
    return CapacityParams.from_device(cfg.tcl_params(), cfg.qos(),
                                      cfg.run.t_s_min, cfg.fleet.n_devices,
                                      cfg.planning.tau_ba)


def plan_from_config(cfg: ScenarioConfig, ba_signal_kw: np.ndarray,
                     z_init_kwh: float = 0.0,
                     n_init: float | None = None) -> PlanSolution:
    problem = PlanProblem(
        ba_signal_kw=ba_signal_kw,
        cap=capacity_from_config(cfg),
        weights=cfg.plan_weights(),
        z_init_kwh=z_init_kwh,
        n_init=n_init,
        enforce_nonneg_switches=cfg.planning.enforce_nonneg_switches,
    )
    options = {"max_iter": cfg.planning.qp_max_iter,
               "tol_abs": cfg.planning.qp_tol, "tol_rel": cfg.planning.qp_tol}
    if cfg.planning.method == "proposed":
        plan = plan_proposed(problem, **options)
    else:
        plan = plan_alternative(problem, **options)
    plan.t_s_min = cfg.run.t_s_min
    return plan


def _write_error(run_dir: Path | None, stage: str, exc: Exception) -> None:
    if run_dir is None:
        return
    report = {"stage": stage, "error": str(exc),
              "type": type(exc).__name__,
              "traceback": traceback.format_exc()}
    (run_dir / "error.json").write_text(json.dumps(report, indent=2) + "\n")


def run_scenario(cfg: ScenarioConfig, run_dir=None,
                 make_plots: bool = True) -> ScenarioResult:
    """Execute plan -> simulate -> measure and emit the artifact set."""
    cfg.validate()
    if run_dir is None and cfg.output_dir:
        run_dir = Path(cfg.output_dir)
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg.to_json(run_dir / "resolved_config.json")

    stage = "init_fleet"
    try:
        fleet = build_fleet(cfg)
        z0 = fleet.aggregate_thermal_energy()
        n0 = fleet.fraction_on

        stage = "ingest_signal"
        ba = ingest_signal(cfg.signal.as_spec(), cfg.run.n_steps,
                           cfg.run.t_s_min, fleet.p_agg)

        stage = "plan"
        if cfg.planning.use_measured_init:
            plan = plan_from_config(cfg, ba, z_init_kwh=z0, n_init=n0)
        else:
            plan = plan_from_config(cfg, ba)
        if run_dir is not None:
            plan.to_csv(run_dir / "plan.csv")
            plan.save_summary(run_dir / "plan_summary.json")
            if cfg.run.export_omega and cfg.planning.method == "proposed":
                omega = build_omega(plan.cap, plan.reference_kw.size,
                                    z_init=plan.z_init_kwh, n_init=plan.n_init,
                                    enforce_nonneg_switches=cfg.planning.enforce_nonneg_switches)
                omega.save(run_dir / "omega")

        stage = "simulate"
        ctrl = ControllerConfig(
            enforce_lockout=cfg.run.enforce_lockout,
            boundary_guard_steps=cfg.run.boundary_guard_steps,
        )
        track = track_reference(fleet, plan.reference_kw, ctrl,
                                record_history=cfg.run.record_history)
        if run_dir is not None:
            track.trace.to_csv(run_dir / "trace.csv")

        stage = "metrics"
        metrics = compute_run_metrics(track.trace, plan.reference_kw,
                                      fleet.p_base_agg, fleet.p_agg, track)
        metrics.extras["ves_residual_kwh"] = ves_check(plan.reference_kw,
                                                       cfg.run.t_s_min)
        metrics.extras["plan_status"] = plan.status
        metrics.extras["label"] = cfg.label
        if run_dir is not None:
            metrics.save(run_dir / "metrics.json")

        stage = "audit"
        if cfg.run.record_history:
            audit = aggregate_audit(track.trace, track.modes, track.thetas,
                                    cfg.tcl_params(), cfg.qos(), cfg.run.t_s_min)
            if run_dir is not None:
                (run_dir / "audit.json").write_text(json.dumps({
                    "qos_ok": audit.qos_ok,
                    "temp_violation_devices": audit.temp_violation_devices,
                    "cycling_violation_devices": audit.cycling_violation_devices,
                    "energy_violation_devices": audit.energy_violation_devices,
                    "max_window_switches": audit.max_window_switches,
                    "recursion_applicable": audit.recursion_applicable,
                    "recursion_holds": audit.recursion_holds,
                    "ves_value_kwh": audit.ves_value_kwh,
                    "ves_bound_kwh": audit.ves_bound_kwh,
                }, indent=2) + "\n")
            metrics.extras["audit_qos_ok"] = audit.qos_ok

        stage = "plots"
        if run_dir is not None and make_plots:
            plots.reference_vs_achieved(run_dir / "tracking.svg", track.trace,
                                        plan, cfg.run.t_s_min)
            plots.interval_histogram(run_dir / "switch_intervals.svg",
                                     track.trace, cfg.qos().tau_tcl)
    except Exception as exc:
        _write_error(run_dir, stage, exc)
        if isinstance(exc, PipelineError):
            raise
        raise PipelineError(stage, str(exc)) from exc

    return ScenarioResult(config=cfg, fleet=fleet, ba_signal_kw=ba, plan=plan,
                          track=track, metrics=metrics, run_dir=run_dir)


SWEEP_COLUMNS = ("tau_tcl_min", "tau_ba_min", "s_tau", "d_tau",
                 "tracking_error_pct")


def _sweep_cell(args):
    base_dict, tau_tcl, tau_ba, cell_dir = args
    cfg = ScenarioConfig.from_dict(base_dict)
    cfg = apply_overrides(cfg, {"fleet.tau_tcl": tau_tcl,
                                "planning.tau_ba": tau_ba})
    cfg.label = f"tcl{tau_tcl}_ba{tau_ba}"
    cfg.output_dir = ""
    try:
        result = run_scenario(cfg, run_dir=cell_dir, make_plots=False)
        m = result.metrics
        return {"tau_tcl": tau_tcl, "tau_ba": tau_ba, "ok": True,
                "s_tau": m.s_tau, "d_tau": m.d_tau,
                "tracking_error_pct": m.tracking_error_pct}
    except Exception as exc:
        return {"tau_tcl": tau_tcl, "tau_ba": tau_ba, "ok": False,
                "error": f"{type(exc).__name__}: {exc}"}


def run_sweep(base_cfg: ScenarioConfig, tau_tcl_list, tau_ba_list,
              out_dir, workers: int = 1, keep_cell_artifacts: bool = False):
    """Plan and simulate every valid (tau_tcl, tau_ba) pair.

    Only pairs with tau_ba >= tau_tcl are run.  Per-cell failures are
    recorded in the matrix and do not stop the sweep.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base_cfg.validate()
    pairs = [(tcl, ba) for tcl in tau_tcl_list for ba in tau_ba_list if ba >= tcl]
    if not pairs:
        raise PipelineError("sweep", "no valid tau pairs (need tau_ba >= tau_tcl)")
    base_dict = base_cfg.to_dict()
    jobs = [(base_dict, tcl, ba,
             (out_dir / f"cell_tcl{tcl}_ba{ba}") if keep_cell_artifacts else None)
            for tcl, ba in pairs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(job) for job in jobs]

    t_s = base_cfg.run.t_s_min
    rows = []
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for res in results:
            if res["ok"]:
                row = [res["tau_tcl"] * t_s, res["tau_ba"] * t_s,
                       repr(res["s_tau"]), res["d_tau"],
                       repr(res["tracking_error_pct"])]
                writer.writerow(row)
            rows.append(res)
    (out_dir / "sweep_results.json").write_text(
        json.dumps(rows, indent=2) + "\n")
    plots.sweep_curves(out_dir / "sweep.svg", results, t_s)
    return results


def audit_run(run_dir) -> dict:
    """Re-derive the bookkeeping identities from an exported trace.

    Works from the CSV alone: checks the switching inventory identity, the
    power/fraction coupling, and (when no double switches occurred, which
    the trace cannot show directly) reports the stuck recursion residual.
    """
    run_dir = Path(run_dir)
    cols = FleetTrace.read_csv(run_dir / "trace.csv")
    cfg = ScenarioConfig.from_json(run_dir / "resolved_config.json")
    n = cfg.fleet.n_devices
    p_rated = cfg.fleet.p_rated

    n_on = cols["n_on"]
    inv_residual = float(np.max(np.abs(
        n_on[1:] - (n_on[:-1] + cols["s_on"][:-1] - cols["s_off"][:-1]))))
    coef_base = (cfg.fleet.theta_a - cfg.fleet.theta_set) / (
        cfg.fleet.cop * cfg.fleet.r_th)
    y_expected = n_on * n * p_rated - n * coef_base
    y_residual = float(np.max(np.abs(y_expected - cols["y_kw"])))

    tau = cfg.fleet.tau_tcl
    g_rec = np.zeros_like(cols["gamma_on"])
    for k in range(1, g_rec.size):
        g_rec[k] = g_rec[k - 1] + cols["s_on"][k - 1]
        if k - 1 - tau >= 0:
            g_rec[k] -= cols["s_on"][k - 1 - tau]
    recursion_residual = float(np.max(np.abs(g_rec - cols["gamma_on"])))

    report = {
        "rows": int(n_on.size),
        "switch_inventory_residual": inv_residual,
        "power_coupling_residual_kw": y_residual,
        "stuck_recursion_residual": recursion_residual,
        "fractions_in_range": bool(
            np.all((n_on >= 0) & (n_on <= 1))
            and np.all(cols["gamma_on"] + cols["gamma_off"] <= 1 + 1e-12)),
        "ok": bool(inv_residual == 0.0 and y_residual < 1e-6),
    }
    (run_dir / "audit_trace.json").write_text(json.dumps(report, indent=2) + "\n")
    return report
