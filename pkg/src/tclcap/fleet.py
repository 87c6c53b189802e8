"""Vectorized simulation of a homogeneous fleet of on/off cooling devices.

State per device: temperature, mode bit, and a saturating count of samples
since the last mode change.  The thermostat acts predictively: a device is
force-switched one step before staying in its mode would push the
temperature out of the deadband, so the band is never violated.  Forced
switches take priority over commanded ones and ignore the lockout (the
temperature constraint is inviolable); any switch that lands inside the
lockout window is counted as a cycling violation.

The per-step trace keeps integer device counts alongside the fractional
aggregates so bookkeeping identities can be checked exactly.
"""

from __future__ import annotations

import csv
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (ParameterError, QosSet, TclParams, derive_coefficients,
                   duty_ratio, step_theta, thermal_energy_array)

BAND_TOL = 1e-12


class InternalConsistencyError(RuntimeError):
    """The incremental trace disagrees with a recomputation from raw data."""


@dataclass
class Fleet:
    """Mutable fleet state at one sample instant."""

    params: TclParams
    qos: QosSet
    t_s_min: float
    rng_seed: int
    theta: np.ndarray
    mode: np.ndarray
    since_switch: np.ndarray
    k: int = 0

    def __post_init__(self):
        self.coef = derive_coefficients(self.params, self.qos, self.t_s_min)
        self.last_switch = np.full(self.n_devices, -1, dtype=np.int64)
        # ring buffer of the last tau_tcl switch masks, for exact stuck flags
        self._switch_window = deque()
        self.window_count = np.zeros(self.n_devices, dtype=np.int32)

    @property
    def n_devices(self) -> int:
        return self.theta.size

    @property
    def n_on_count(self) -> int:
        return int(self.mode.sum())

    @property
    def fraction_on(self) -> float:
        return self.n_on_count / self.n_devices

    @property
    def p_agg(self) -> float:
        return self.n_devices * self.params.p_rated

    @property
    def p_base_agg(self) -> float:
        return self.n_devices * self.coef.p_base

    def aggregate_thermal_energy(self) -> float:
        return float(np.sum(thermal_energy_array(self.theta, self.params, self.qos)))

    def power_deviation_kw(self) -> float:
        return self.n_on_count * self.params.p_rated - self.p_base_agg

    def stuck_counts(self) -> tuple[int, int]:
        """Devices with exactly one switch in the last tau_tcl transitions."""
        stuck = self.window_count == 1
        on = int(np.count_nonzero(stuck & (self.mode == 1)))
        off = int(np.count_nonzero(stuck & (self.mode == 0)))
        return on, off

    def copy(self) -> "Fleet":
        dup = Fleet(self.params, self.qos, self.t_s_min, self.rng_seed,
                    self.theta.copy(), self.mode.copy(), self.since_switch.copy(),
                    self.k)
        dup.last_switch = self.last_switch.copy()
        dup._switch_window = deque(m.copy() for m in self._switch_window)
        dup.window_count = self.window_count.copy()
        return dup


def init_fleet(params: TclParams, qos: QosSet, n_devices: int, t_s_min: float,
               seed: int) -> Fleet:
    """Draw an in-band fleet: uniform temperatures, duty-ratio mode draws.

    Devices whose drawn mode would carry the temperature out of the band on
    the very first step are flipped so the band invariant holds from k = 0.
    No device starts inside a lockout window.
    """
    if n_devices < 1:
        raise ParameterError("n_devices must be at least 1")
    coef = derive_coefficients(params, qos, t_s_min)
    # one free-drift step must not be able to jump the whole band
    off_step = (1.0 - coef.a_bar) * (params.theta_a - qos.theta_min)
    on_step = (1.0 - coef.a_bar) * (
        qos.theta_max - (params.theta_a - params.r_th * params.cop * params.p_rated))
    if off_step > qos.band_width or on_step > qos.band_width:
        raise ParameterError("sample time too coarse for the deadband width")

    rng = np.random.default_rng(seed)
    theta = rng.uniform(qos.theta_min, qos.theta_max, size=n_devices)
    mode = (rng.random(n_devices) < duty_ratio(params, qos)).astype(np.int8)

    flip_on = (mode == 0) & (step_theta(theta, 0, coef, params) > qos.theta_max)
    flip_off = (mode == 1) & (step_theta(theta, 1, coef, params) < qos.theta_min)
    mode[flip_on] = 1
    mode[flip_off] = 0

    since = np.full(n_devices, qos.tau_tcl + 1, dtype=np.int32)
    return Fleet(params=params, qos=qos, t_s_min=t_s_min, rng_seed=seed,
                 theta=theta, mode=mode, since_switch=since)


@dataclass
class StepRecord:
    """State at step k plus the transition from k to k+1 (integer counts)."""

    k: int
    n_on: int
    y_kw: float
    z_kwh: float
    gamma_on: int
    gamma_off: int
    s_on: int = 0
    s_off: int = 0
    d_on: int = 0
    d_off: int = 0
    f_on: int = 0
    f_off: int = 0
    rejected: int = 0
    overridden: int = 0
    cycling_violations: int = 0
    forced_cycling_violations: int = 0
    band_violations: int = 0
    intervals: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def state_record(fleet: Fleet) -> StepRecord:
    g_on, g_off = fleet.stuck_counts()
    return StepRecord(k=fleet.k, n_on=fleet.n_on_count,
                      y_kw=fleet.power_deviation_kw(),
                      z_kwh=fleet.aggregate_thermal_energy(),
                      gamma_on=g_on, gamma_off=g_off)


def forced_switch_masks(fleet: Fleet) -> tuple[np.ndarray, np.ndarray]:
    """Devices that must switch now so the band still holds two steps ahead."""
    p, q, coef = fleet.params, fleet.qos, fleet.coef
    theta_next = step_theta(fleet.theta, fleet.mode, coef, p)
    stay_two = step_theta(theta_next, fleet.mode, coef, p)
    forced_on = (fleet.mode == 0) & (stay_two > q.theta_max)
    forced_off = (fleet.mode == 1) & (stay_two < q.theta_min)
    return forced_on, forced_off


def apply_and_step(fleet: Fleet, commands: np.ndarray,
                   enforce_lockout: bool = True) -> StepRecord:
    """Advance the fleet one sample under thermostat overrides plus commands.

    ``commands`` holds +1 (request on), -1 (request off), or 0 per device.
    Thermostat overrides are applied first; commands to locked devices are
    rejected and counted when enforcement is on.  The fleet is advanced in
    place and the record for the departing step is returned.
    """
    p, q, coef = fleet.params, fleet.qos, fleet.coef
    rec = state_record(fleet)

    theta_next = step_theta(fleet.theta, fleet.mode, coef, p)
    forced_on, forced_off = forced_switch_masks(fleet)
    forced = forced_on | forced_off

    # a request that points against an imminent forced switch is overridden;
    # same-direction requests to forced devices are absorbed into the D count
    overridden = ((commands == -1) & forced_on) | ((commands == 1) & forced_off)
    want_on = (commands == 1) & (fleet.mode == 0) & ~forced
    want_off = (commands == -1) & (fleet.mode == 1) & ~forced

    locked = fleet.since_switch < q.tau_tcl
    if enforce_lockout:
        rejected = (want_on | want_off) & locked
        want_on &= ~locked
        want_off &= ~locked
    else:
        rejected = np.zeros(fleet.n_devices, dtype=bool)

    switch_on = forced_on | want_on
    switch_off = forced_off | want_off
    switched = switch_on | switch_off

    new_mode = fleet.mode.copy()
    new_mode[switch_on] = 1
    new_mode[switch_off] = 0

    in_lockout = switched & locked
    rec.s_on = int(np.count_nonzero(switch_on))
    rec.s_off = int(np.count_nonzero(switch_off))
    rec.d_on = int(np.count_nonzero(forced_on))
    rec.d_off = int(np.count_nonzero(forced_off))
    rec.f_on = int(np.count_nonzero(want_on))
    rec.f_off = int(np.count_nonzero(want_off))
    rec.rejected = int(np.count_nonzero(rejected))
    rec.overridden = int(np.count_nonzero(overridden))
    rec.cycling_violations = int(np.count_nonzero(in_lockout))
    rec.forced_cycling_violations = int(np.count_nonzero(in_lockout & forced))

    prior = switched & (fleet.last_switch >= 0)
    rec.intervals = (fleet.k - fleet.last_switch[prior]).astype(np.int64)
    fleet.last_switch[switched] = fleet.k

    fleet.since_switch = np.where(
        switched, 1, np.minimum(fleet.since_switch + 1, q.tau_tcl + 1)
    ).astype(np.int32)
    fleet.theta = theta_next
    fleet.mode = new_mode
    fleet.k += 1

    fleet._switch_window.append(switched)
    fleet.window_count += switched
    if len(fleet._switch_window) > q.tau_tcl:
        fleet.window_count -= fleet._switch_window.popleft()

    rec.band_violations = int(np.count_nonzero(
        np.abs(theta_next - q.theta_set) > q.delta + BAND_TOL))
    return rec


TRACE_COLUMNS = ("k", "n_on", "y_kw", "z_kwh", "s_on", "s_off",
                 "gamma_on", "gamma_off", "d_on", "d_off")


@dataclass
class FleetTrace:
    """Time-indexed aggregate record of one run.

    Fraction columns are integer counts divided by the fleet size, so the
    switching identities hold exactly in floating point as well.
    """

    n_devices: int
    t_s_min: float
    counts: dict
    y_kw: np.ndarray
    z_kwh: np.ndarray
    switch_intervals: Counter
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_records(cls, records: list[StepRecord], n_devices: int,
                     t_s_min: float) -> "FleetTrace":
        count_fields = ("n_on", "s_on", "s_off", "gamma_on", "gamma_off",
                        "d_on", "d_off", "f_on", "f_off", "rejected",
                        "overridden", "cycling_violations",
                        "forced_cycling_violations", "band_violations")
        counts = {f: np.array([getattr(r, f) for r in records], dtype=np.int64)
                  for f in count_fields}
        counts["k"] = np.array([r.k for r in records], dtype=np.int64)
        intervals = Counter()
        for r in records:
            intervals.update(r.intervals.tolist())
        return cls(
            n_devices=n_devices, t_s_min=t_s_min, counts=counts,
            y_kw=np.array([r.y_kw for r in records]),
            z_kwh=np.array([r.z_kwh for r in records]),
            switch_intervals=intervals,
        )

    def __len__(self) -> int:
        return self.counts["k"].size

    def frac(self, name: str) -> np.ndarray:
        return self.counts[name] / self.n_devices

    @property
    def n_on(self) -> np.ndarray:
        return self.frac("n_on")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            fracs = {name: self.frac(name) for name in
                     ("n_on", "s_on", "s_off", "gamma_on", "gamma_off",
                      "d_on", "d_off")}
            for i in range(len(self)):
                writer.writerow([
                    int(self.counts["k"][i]),
                    repr(float(fracs["n_on"][i])),
                    repr(float(self.y_kw[i])),
                    repr(float(self.z_kwh[i])),
                    repr(float(fracs["s_on"][i])),
                    repr(float(fracs["s_off"][i])),
                    repr(float(fracs["gamma_on"][i])),
                    repr(float(fracs["gamma_off"][i])),
                    repr(float(fracs["d_on"][i])),
                    repr(float(fracs["d_off"][i])),
                ])

    @staticmethod
    def read_csv(path) -> dict:
        """Load the exported columns back as float arrays keyed by name."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            cols = {h: [] for h in header}
            for row in reader:
                for h, v in zip(header, row):
                    cols[h].append(float(v))
        return {h: np.array(v) for h, v in cols.items()}


def free_run(fleet: Fleet, n_steps: int) -> FleetTrace:
    """Thermostat-only evolution: no commands, lockout irrelevant."""
    no_cmd = np.zeros(fleet.n_devices, dtype=np.int8)
    records = [apply_and_step(fleet, no_cmd) for _ in range(n_steps - 1)]
    records.append(state_record(fleet))
    return FleetTrace.from_records(records, fleet.n_devices, fleet.t_s_min)


def definition_stuck_scan(modes: np.ndarray, tau: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-step stuck counts from a (steps, devices) mode history.

    A device is stuck at step k when it changed mode exactly once among the
    last ``tau`` transitions; the direction follows its current mode.
    Returns (stuck_on, stuck_off) integer arrays aligned with the history.
    """
    n_steps, _ = modes.shape
    switches = np.abs(np.diff(modes.astype(np.int8), axis=0))
    stuck_on = np.zeros(n_steps, dtype=np.int64)
    stuck_off = np.zeros(n_steps, dtype=np.int64)
    window = np.zeros(modes.shape[1], dtype=np.int32)
    for k in range(1, n_steps):
        window += switches[k - 1]
        if k - 1 - tau >= 0:
            window -= switches[k - 1 - tau]
        one = window == 1
        stuck_on[k] = np.count_nonzero(one & (modes[k] == 1))
        stuck_off[k] = np.count_nonzero(one & (modes[k] == 0))
    return stuck_on, stuck_off


def stuck_recursion_counts(s_counts: np.ndarray, tau: int) -> np.ndarray:
    """Integer inventory recursion: g_k = g_{k-1} + s_{k-1} - s_{k-1-tau}."""
    n = s_counts.size
    g = np.zeros(n + 1, dtype=np.int64)
    for k in range(1, n + 1):
        g[k] = g[k - 1] + s_counts[k - 1]
        if k - 1 - tau >= 0:
            g[k] -= s_counts[k - 1 - tau]
    return g


@dataclass
class AuditReport:
    max_window_switches: int
    recursion_applicable: bool
    recursion_holds: bool
    temp_violation_devices: int
    cycling_violation_devices: int
    energy_violation_devices: int
    ves_value_kwh: float
    ves_bound_kwh: float
    details: dict = field(default_factory=dict)

    @property
    def qos_ok(self) -> bool:
        return (self.temp_violation_devices == 0
                and self.cycling_violation_devices == 0
                and self.energy_violation_devices == 0)


def aggregate_audit(trace: FleetTrace, modes: np.ndarray, thetas: np.ndarray,
                    params: TclParams, qos: QosSet, t_s_min: float) -> AuditReport:
    """Recompute every aggregate from raw device histories and cross-check.

    Raises InternalConsistencyError when the incrementally maintained trace
    disagrees with the recomputation (a bug, not a QoS outcome).  Legitimate
    QoS failures are reported, not raised.
    """
    n_steps, n_dev = modes.shape
    if len(trace) != n_steps or n_dev != trace.n_devices:
        raise InternalConsistencyError("history and trace shapes disagree")
    coef = derive_coefficients(params, qos, t_s_min)

    n_on = modes.sum(axis=1).astype(np.int64)
    if not np.array_equal(n_on, trace.counts["n_on"]):
        raise InternalConsistencyError("fraction-on counts disagree")

    diffs = np.diff(modes.astype(np.int8), axis=0)
    s_on = (diffs == 1).sum(axis=1).astype(np.int64)
    s_off = (diffs == -1).sum(axis=1).astype(np.int64)
    if not (np.array_equal(s_on, trace.counts["s_on"][:-1])
            and np.array_equal(s_off, trace.counts["s_off"][:-1])):
        raise InternalConsistencyError("switch counts disagree")
    if trace.counts["s_on"][-1] or trace.counts["s_off"][-1]:
        raise InternalConsistencyError("final trace row must carry no switches")

    # switching inventory identity, exact in integer counts
    if not np.array_equal(n_on[1:], n_on[:-1] + s_on - s_off):
        raise InternalConsistencyError("switching inventory identity failed")

    g_on, g_off = definition_stuck_scan(modes, qos.tau_tcl)
    if not (np.array_equal(g_on, trace.counts["gamma_on"])
            and np.array_equal(g_off, trace.counts["gamma_off"])):
        raise InternalConsistencyError("stuck counts disagree with definition scan")

    # forced switches: recompute from the temperature histories
    theta_after = step_theta(thetas[:-1], modes[:-1], coef, params)
    d_on = ((modes[:-1] == 0) & (diffs == 1)
            & (step_theta(theta_after, 0, coef, params) > qos.theta_max)).sum(axis=1)
    d_off = ((modes[:-1] == 1) & (diffs == -1)
             & (step_theta(theta_after, 1, coef, params) < qos.theta_min)).sum(axis=1)
    if not (np.array_equal(d_on.astype(np.int64), trace.counts["d_on"][:-1])
            and np.array_equal(d_off.astype(np.int64), trace.counts["d_off"][:-1])):
        raise InternalConsistencyError("forced-switch counts disagree")

    # cross-check aggregates derived from temperatures
    z_agg = thermal_energy_array(thetas, params, qos).sum(axis=1)
    if np.max(np.abs(z_agg - trace.z_kwh)) > 1e-9 * max(1.0, n_dev):
        raise InternalConsistencyError("aggregate stored energy disagrees")
    y = n_on * params.p_rated - n_dev * coef.p_base
    if np.max(np.abs(y - trace.y_kw)) > 1e-9 * max(1.0, n_dev):
        raise InternalConsistencyError("power deviation disagrees")

    # per-device QoS audit
    band_bad = np.abs(thetas - qos.theta_set) > qos.delta + BAND_TOL
    temp_bad_devices = int(np.count_nonzero(band_bad.any(axis=0)))

    switch_any = np.abs(diffs)
    max_window = 0
    cycling_bad = np.zeros(n_dev, dtype=bool)
    if n_steps - 1 >= qos.tau_tcl:
        csum = np.vstack([np.zeros((1, n_dev), dtype=np.int64),
                          np.cumsum(switch_any, axis=0, dtype=np.int64)])
        windows = csum[qos.tau_tcl:] - csum[:-qos.tau_tcl]
        max_window = int(windows.max()) if windows.size else 0
        cycling_bad = (windows > 1).any(axis=0)

    t_s_hours = t_s_min / 60.0
    energy_bad = np.zeros(n_dev, dtype=bool)
    for w in range(n_steps // qos.n_b):
        seg = modes[w * qos.n_b:(w + 1) * qos.n_b]
        dev = t_s_hours / qos.n_b * np.abs(
            (seg * params.p_rated - coef.p_base).sum(axis=0))
        energy_bad |= dev > qos.e_tilde + 1e-12
    energy_bad_devices = int(np.count_nonzero(energy_bad))

    # windowed-recursion equivalence only holds when no device double-switches
    recursion_applicable = max_window <= 1
    recursion_holds = False
    if recursion_applicable:
        rec_on = stuck_recursion_counts(s_on, qos.tau_tcl)[: n_steps]
        rec_off = stuck_recursion_counts(s_off, qos.tau_tcl)[: n_steps]
        recursion_holds = (np.array_equal(rec_on, g_on)
                           and np.array_equal(rec_off, g_off))
        if not recursion_holds:
            raise InternalConsistencyError("stuck recursion disagrees with scan")

    ves_value = t_s_hours / n_steps * abs(float(np.sum(y)))
    return AuditReport(
        max_window_switches=max_window,
        recursion_applicable=recursion_applicable,
        recursion_holds=recursion_holds,
        temp_violation_devices=temp_bad_devices,
        cycling_violation_devices=int(np.count_nonzero(cycling_bad)),
        energy_violation_devices=energy_bad_devices,
        ves_value_kwh=ves_value,
        ves_bound_kwh=n_dev * qos.e_tilde,
        details={"windowed_counts_checked": n_steps - 1 >= qos.tau_tcl},
    )
