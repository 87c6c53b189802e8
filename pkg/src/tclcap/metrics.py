"""Post-run measurements: tracking fidelity, switching effort, capacity hits.

All functions are pure post-processing over a completed trace and the plan
it tracked.  The capacity-exceedance count uses the measured stuck fractions
and measured forced-switch imbalance, not the planner's idealized ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fleet import FleetTrace

TRACKING_MODES = ("l2_ratio", "linf_ratio", "rmse_over_range")


@dataclass(frozen=True)
class TrackingError:
    percent: float
    absolute_rms_kw: float
    zero_reference: bool
    mode: str


def tracking_error(y_kw, reference_kw, mode: str = "l2_ratio") -> TrackingError:
    """Relative tracking error in percent.

    Default is the ratio of l2 norms, 100 * ||y - r|| / ||r||.  When the
    reference is identically zero the ratio is undefined; the absolute RMS
    is reported and flagged instead.
    """
    y = np.asarray(y_kw, dtype=float)
    r = np.asarray(reference_kw, dtype=float)
    if y.shape != r.shape:
        raise ValueError("achieved and reference series must have equal length")
    if mode not in TRACKING_MODES:
        raise ValueError(f"unknown tracking error mode: {mode}")
    err = y - r
    rms = float(np.sqrt(np.mean(err ** 2)))
    if mode == "l2_ratio":
        denom = float(np.linalg.norm(r))
        num = float(np.linalg.norm(err))
    elif mode == "linf_ratio":
        denom = float(np.linalg.norm(r, np.inf))
        num = float(np.linalg.norm(err, np.inf))
    else:
        denom = float(r.max() - r.min())
        num = rms
    if denom == 0.0:
        return TrackingError(percent=float("nan"), absolute_rms_kw=rms,
                             zero_reference=True, mode=mode)
    return TrackingError(percent=100.0 * num / denom, absolute_rms_kw=rms,
                         zero_reference=False, mode=mode)


def s_tau_from_modes(modes: np.ndarray) -> float:
    """Mean number of switches per device over a (steps, devices) history."""
    switches = np.abs(np.diff(modes.astype(np.int8), axis=0))
    return float(switches.sum()) / modes.shape[1]


def s_tau_from_trace(trace: FleetTrace) -> float:
    total = int(trace.counts["s_on"].sum() + trace.counts["s_off"].sum())
    return total / trace.n_devices


def capacity_exceedance(trace: FleetTrace, reference_kw, p_base_agg_kw: float,
                        p_agg_kw: float) -> tuple[int, np.ndarray]:
    """Count steps whose required fraction-on move is beyond the stuck bounds.

    Step k is flagged when moving from the measured deviation y_{k-1} toward
    r_k crosses the bound formed by last step's measured stuck fraction
    adjusted by the measured forced-switch imbalance.  Returns the total and
    the per-step indicator series.
    """
    reference_kw = np.asarray(reference_kw, dtype=float)
    n_steps = len(trace)
    if reference_kw.size != n_steps:
        raise ValueError("reference length must match the trace")
    g_on = trace.frac("gamma_on")
    g_off = trace.frac("gamma_off")
    delta_d = trace.frac("d_on") - trace.frac("d_off")
    y = trace.y_kw
    h = np.zeros(n_steps, dtype=np.int64)
    for k in range(1, n_steps):
        target_frac = (reference_kw[k] + p_base_agg_kw) / p_agg_kw
        up_room = 1.0 - g_off[k - 1] + delta_d[k - 1]
        down_room = g_on[k - 1] - delta_d[k - 1]
        if reference_kw[k] - y[k - 1] > 0 and up_room < target_frac:
            h[k] = 1
        elif y[k - 1] - reference_kw[k] > 0 and down_room > target_frac:
            h[k] = 1
    return int(h.sum()), h


def interval_histogram_minutes(trace: FleetTrace) -> dict:
    """Inter-switch interval counts keyed by duration in minutes."""
    return {k * trace.t_s_min: int(v)
            for k, v in sorted(trace.switch_intervals.items())}


def fraction_at_sample_time(trace: FleetTrace) -> float:
    """Share of inter-switch intervals exactly one sample long."""
    total = sum(trace.switch_intervals.values())
    if total == 0:
        return 0.0
    return trace.switch_intervals.get(1, 0) / total


@dataclass
class RunMetrics:
    """Everything reported for one tracked run."""

    tracking_error_pct: float
    tracking_rms_kw: float
    s_tau: float
    d_tau: int
    min_interval_min: float | None
    fraction_intervals_at_ts: float
    total_switches: int
    rejected_commands: int
    lockout_blocked_commands: int
    cycling_violations: int
    forced_cycling_violations: int
    band_violations: int
    deficit_step_fraction: float
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "tracking_error_pct", "tracking_rms_kw", "s_tau", "d_tau",
            "min_interval_min", "fraction_intervals_at_ts", "total_switches",
            "rejected_commands", "lockout_blocked_commands",
            "cycling_violations", "forced_cycling_violations",
            "band_violations", "deficit_step_fraction")}
        out.update(self.extras)
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def compute_run_metrics(trace: FleetTrace, reference_kw, p_base_agg_kw: float,
                        p_agg_kw: float, track_result=None,
                        error_mode: str = "l2_ratio") -> RunMetrics:
    err = tracking_error(trace.y_kw, reference_kw, mode=error_mode)
    d_tau, h = capacity_exceedance(trace, reference_kw, p_base_agg_kw, p_agg_kw)
    intervals = trace.switch_intervals
    min_interval = (min(intervals) * trace.t_s_min) if intervals else None
    return RunMetrics(
        tracking_error_pct=err.percent,
        tracking_rms_kw=err.absolute_rms_kw,
        s_tau=s_tau_from_trace(trace),
        d_tau=d_tau,
        min_interval_min=min_interval,
        fraction_intervals_at_ts=fraction_at_sample_time(trace),
        total_switches=int(trace.counts["s_on"].sum() + trace.counts["s_off"].sum()),
        rejected_commands=int(trace.counts["rejected"].sum()),
        lockout_blocked_commands=(track_result.total_lockout_blocked
                                  if track_result is not None else 0),
        cycling_violations=int(trace.counts["cycling_violations"].sum()),
        forced_cycling_violations=int(
            trace.counts["forced_cycling_violations"].sum()),
        band_violations=int(trace.counts["band_violations"].sum()),
        deficit_step_fraction=(track_result.deficit_step_fraction
                               if track_result is not None else 0.0),
        extras={"h_nonzero_steps": int(np.count_nonzero(h))},
    )
