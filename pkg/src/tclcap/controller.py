"""Priority-stack tracking controller.

Each step the controller converts the next reference value into a target
on-count, anticipates the thermostat's forced switches, and fills the gap by
commanding eligible devices: warmest-first when switching on, coolest-first
when switching off.  Eligibility excludes devices inside their lockout
window (when enforcement is on) and devices so close to the opposite band
edge that the switch would provoke a forced switch-back within the guard
horizon.  With the guard horizon equal to the lockout length, a commanded
switch can never cascade into a forced switch inside the lockout window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import on_fixed_point
from .fleet import (Fleet, FleetTrace, StepRecord, apply_and_step,
                    forced_switch_masks, state_record)


@dataclass(frozen=True)
class ControllerConfig:
    """enforce_lockout gates commanded switches only; the thermostat always acts.

    boundary_guard_steps None means: lockout length when enforcement is on,
    one step otherwise.  Setting it to 1 with enforcement on reproduces the
    relaxed regime where only thermostat-forced switches may break cycling.
    """

    enforce_lockout: bool = True
    tie_break: str = "index"
    boundary_guard_steps: int | None = None

    def __post_init__(self):
        if self.tie_break != "index":
            raise ValueError(f"unknown tie_break rule: {self.tie_break}")

    def guard_steps(self, tau_tcl: int) -> int:
        if self.boundary_guard_steps is not None:
            return self.boundary_guard_steps
        return tau_tcl if self.enforce_lockout else 1


def guard_thresholds(fleet: Fleet, guard_steps: int) -> tuple[float, float]:
    """Temperature limits for safe commanded switches.

    A device switched on drifts up one more sample, then cools; it must stay
    above the lower band edge for ``guard_steps`` samples.  Returns
    (min theta for a switch-on, max theta for a switch-off).
    """
    p, q, coef = fleet.params, fleet.qos, fleet.coef
    a = coef.a_bar
    ag = a ** guard_steps
    fix_on = on_fixed_point(p)
    t_on = (q.theta_min - (1.0 - ag) * fix_on) / ag
    on_min = (t_on - (1.0 - a) * p.theta_a) / a
    t_off = (q.theta_max - (1.0 - ag) * p.theta_a) / ag
    off_max = (t_off - (1.0 - a) * fix_on) / a
    return on_min, off_max


@dataclass
class DispatchResult:
    commands: np.ndarray
    target_count: int
    needed: int
    issued: int
    shortfall: int
    lockout_blocked: int
    guard_blocked: int


def dispatch(fleet: Fleet, r_target_kw: float, cfg: ControllerConfig) -> DispatchResult:
    """Choose the switch commands that move the fleet toward the reference.

    ``r_target_kw`` is the desired aggregate power deviation for the state
    the fleet enters after this step.  Deterministic: candidates are ranked
    by temperature with index-order tie breaking.
    """
    q = fleet.qos
    n = fleet.n_devices
    target = int(round(n * (r_target_kw + fleet.p_base_agg) / fleet.p_agg))
    target = min(max(target, 0), n)

    forced_on, forced_off = forced_switch_masks(fleet)
    predicted_on = (fleet.n_on_count + int(np.count_nonzero(forced_on))
                    - int(np.count_nonzero(forced_off)))
    needed = target - predicted_on

    commands = np.zeros(n, dtype=np.int8)
    issued = 0
    lockout_blocked = 0
    guard_blocked = 0
    if needed != 0:
        guard = cfg.guard_steps(q.tau_tcl)
        on_min, off_max = guard_thresholds(fleet, guard)
        unlocked = fleet.since_switch >= q.tau_tcl
        if needed > 0:
            pool = (fleet.mode == 0) & ~forced_on
            guard_ok = fleet.theta >= on_min
            # warmest first: they are nearest a forced switch-on anyway
            rank_key = -fleet.theta
            flip = 1
        else:
            pool = (fleet.mode == 1) & ~forced_off
            guard_ok = fleet.theta <= off_max
            rank_key = fleet.theta
            flip = -1
        if cfg.enforce_lockout:
            # airtight: a boundary-adjacent switch would force a switch-back
            # inside the lockout window, so it is excluded outright
            idx = np.flatnonzero(pool & guard_ok & unlocked)
            order = np.lexsort((idx, rank_key[idx]))
            ranked = idx[order]
        else:
            # boundary-adjacent devices are only de-prioritized: they serve
            # the tail of deep sweeps and simply bounce back next step
            safe = np.flatnonzero(pool & guard_ok)
            risky = np.flatnonzero(pool & ~guard_ok)
            safe = safe[np.lexsort((safe, rank_key[safe]))]
            risky = risky[np.lexsort((risky, rank_key[risky]))]
            ranked = np.concatenate([safe, risky])
        want = abs(needed)
        chosen = ranked[:want]
        commands[chosen] = flip
        issued = chosen.size
        shortfall = want - issued
        if shortfall > 0:
            if cfg.enforce_lockout:
                lockout_blocked = min(shortfall, int(np.count_nonzero(
                    pool & guard_ok & ~unlocked)))
            guard_blocked = min(shortfall, int(np.count_nonzero(pool & ~guard_ok)))
    shortfall = abs(needed) - issued if needed != 0 else 0

    return DispatchResult(commands=commands, target_count=target, needed=needed,
                          issued=issued, shortfall=shortfall,
                          lockout_blocked=lockout_blocked,
                          guard_blocked=guard_blocked)


@dataclass
class TrackResult:
    """Trace plus controller-side diagnostics for one tracked run."""

    trace: FleetTrace
    reference_kw: np.ndarray
    target_counts: np.ndarray
    shortfalls: np.ndarray
    lockout_blocked: np.ndarray
    guard_blocked: np.ndarray
    modes: np.ndarray | None = None
    thetas: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def y_kw(self) -> np.ndarray:
        return self.trace.y_kw

    @property
    def total_lockout_blocked(self) -> int:
        return int(self.lockout_blocked.sum())

    @property
    def deficit_step_fraction(self) -> float:
        return float(np.count_nonzero(self.shortfalls) / self.shortfalls.size)


def track_reference(fleet: Fleet, reference_kw: np.ndarray, cfg: ControllerConfig,
                    record_history: bool = False) -> TrackResult:
    """Run the fleet against a reference; trace row k pairs with reference[k].

    The dispatch at step k aims the transition at reference[k + 1]; the
    initial state is left as-is, so reference[0] is compared against the
    fleet's starting deviation.
    """
    reference_kw = np.asarray(reference_kw, dtype=float)
    n_steps = reference_kw.size
    records: list[StepRecord] = []
    targets = np.zeros(n_steps, dtype=np.int64)
    shortfalls = np.zeros(n_steps, dtype=np.int64)
    locked = np.zeros(n_steps, dtype=np.int64)
    guarded = np.zeros(n_steps, dtype=np.int64)
    modes = thetas = None
    if record_history:
        modes = np.empty((n_steps, fleet.n_devices), dtype=np.int8)
        thetas = np.empty((n_steps, fleet.n_devices), dtype=np.float64)

    targets[0] = fleet.n_on_count
    for k in range(n_steps - 1):
        if record_history:
            modes[k] = fleet.mode
            thetas[k] = fleet.theta
        ds = dispatch(fleet, reference_kw[k + 1], cfg)
        targets[k + 1] = ds.target_count
        shortfalls[k + 1] = ds.shortfall
        locked[k + 1] = ds.lockout_blocked
        guarded[k + 1] = ds.guard_blocked
        records.append(apply_and_step(fleet, ds.commands, cfg.enforce_lockout))
    if record_history:
        modes[n_steps - 1] = fleet.mode
        thetas[n_steps - 1] = fleet.theta
    records.append(state_record(fleet))

    trace = FleetTrace.from_records(records, fleet.n_devices, fleet.t_s_min)
    return TrackResult(trace=trace, reference_kw=reference_kw,
                       target_counts=targets, shortfalls=shortfalls,
                       lockout_blocked=locked, guard_blocked=guarded,
                       modes=modes, thetas=thetas)
