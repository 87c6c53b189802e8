"""Single-device physics and quality-of-service checks for on/off cooling loads.

A device is a first-order thermal system that is either drawing its rated
electrical power (on) or nothing (off).  Local service constraints are:

1. temperature stays inside the deadband ``[theta_set - delta, theta_set + delta]``;
2. at most one mode change inside any window of ``tau_tcl`` consecutive samples;
3. the mean power deviation from baseline over a billing window of ``n_b``
   samples stays within a user limit.

Canonical units throughout the package: kW, kWh, degrees C, hours.  Sample
time enters in minutes and is converted exactly once, here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MINUTES_PER_HOUR = 60.0


class ParameterError(ValueError):
    """A physical or QoS parameter is outside its admissible domain."""


@dataclass(frozen=True)
class TclParams:
    """Physical parameters of one device class.

    r_th:    thermal resistance to ambient, degC per kW
    c_th:    thermal capacitance, kWh per degC
    cop:     coefficient of performance (thermal kW removed per electrical kW)
    p_rated: electrical power draw when on, kW
    theta_a: ambient temperature, degC (constant within a scenario)
    """

    r_th: float
    c_th: float
    cop: float
    p_rated: float
    theta_a: float

    def __post_init__(self):
        for name in ("r_th", "c_th", "cop", "p_rated"):
            if getattr(self, name) <= 0.0:
                raise ParameterError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class QosSet:
    """User-side service limits of one device class.

    theta_set: setpoint, degC
    delta:     half deadband width, degC
    tau_tcl:   minimum inter-switch spacing, whole samples
    e_tilde:   permitted mean energy deviation per billing window, kWh
    n_b:       billing window length, samples
    """

    theta_set: float
    delta: float
    tau_tcl: int
    e_tilde: float = 0.0
    n_b: int = 1

    def __post_init__(self):
        if self.delta <= 0.0:
            raise ParameterError("delta must be strictly positive")
        if self.tau_tcl < 1:
            raise ParameterError("tau_tcl must be at least one sample")
        if self.e_tilde < 0.0:
            raise ParameterError("e_tilde must be nonnegative")
        if self.n_b < 1:
            raise ParameterError("n_b must be at least one sample")

    @property
    def theta_min(self) -> float:
        return self.theta_set - self.delta

    @property
    def theta_max(self) -> float:
        return self.theta_set + self.delta

    @property
    def band_width(self) -> float:
        return 2.0 * self.delta


@dataclass(frozen=True)
class TclState:
    """Mode bit, temperature, and saturating since-last-switch counter."""

    mode: int
    theta: float
    since_switch: int

    def __post_init__(self):
        if self.mode not in (0, 1):
            raise ParameterError("mode must be 0 or 1")
        if self.since_switch < 0:
            raise ParameterError("since_switch must be nonnegative")


@dataclass(frozen=True)
class DerivedCoefficients:
    """Constants derived from the physical parameters at a fixed sample time.

    a_bar:  one-sample thermal decay factor, dimensionless in (0, 1)
    b_coef: stored-energy input gain (1 - a_bar) * c_th * r_th, hours
    p_base: per-device baseline electrical power, kW
    c_bar:  per-device stored thermal energy half-range, kWh
    """

    a_bar: float
    b_coef: float
    p_base: float
    c_bar: float
    t_s_hours: float


def duty_ratio(params: TclParams, qos: QosSet) -> float:
    """Baseline on-fraction (theta_a - theta_set) / (cop * r_th * p_rated)."""
    return (params.theta_a - qos.theta_set) / (params.cop * params.r_th * params.p_rated)


def derive_coefficients(params: TclParams, qos: QosSet, t_s_min: float) -> DerivedCoefficients:
    """Compute the discrete-time constants for sample time ``t_s_min`` minutes.

    Raises ParameterError if the sample time is non-positive or the baseline
    duty ratio falls outside (0, 1), i.e. the ambient cannot be held at the
    setpoint by duty cycling.
    """
    if t_s_min <= 0.0:
        raise ParameterError("sample time must be strictly positive")
    duty = duty_ratio(params, qos)
    if not 0.0 < duty < 1.0:
        raise ParameterError(
            f"baseline duty ratio {duty:.4f} outside (0, 1); "
            "the setpoint is unreachable with these parameters"
        )
    t_s_hours = t_s_min / MINUTES_PER_HOUR
    a_bar = math.exp(-t_s_hours / (params.r_th * params.c_th))
    b_coef = (1.0 - a_bar) * params.c_th * params.r_th
    p_base = (params.theta_a - qos.theta_set) / (params.cop * params.r_th)
    c_bar = params.c_th * qos.band_width / (2.0 * params.cop)
    return DerivedCoefficients(a_bar=a_bar, b_coef=b_coef, p_base=p_base,
                               c_bar=c_bar, t_s_hours=t_s_hours)


def on_fixed_point(params: TclParams) -> float:
    """Steady-state temperature with the compressor held on."""
    return params.theta_a - params.r_th * params.cop * params.p_rated


def step_theta(theta, mode, coef: DerivedCoefficients, params: TclParams):
    """One-sample temperature update; accepts scalars or numpy arrays.

    theta' = a_bar * theta + (1 - a_bar) * (theta_a - r_th * mode * cop * p_rated)
    """
    drive = params.theta_a - params.r_th * params.cop * params.p_rated * mode
    return coef.a_bar * theta + (1.0 - coef.a_bar) * drive


def step_temperature(state: TclState, coef: DerivedCoefficients, params: TclParams) -> float:
    """Next temperature of a single device."""
    return float(step_theta(state.theta, state.mode, coef, params))


def thermal_energy(state: TclState, params: TclParams, qos: QosSet) -> float:
    """Stored thermal energy deviation (c_th / cop) * (theta - theta_set), kWh."""
    return params.c_th / params.cop * (state.theta - qos.theta_set)


def thermal_energy_array(theta: np.ndarray, params: TclParams, qos: QosSet) -> np.ndarray:
    return params.c_th / params.cop * (theta - qos.theta_set)


def step_thermal_energy(z, mode, coef: DerivedCoefficients, params: TclParams):
    """One-sample update of the stored-energy coordinate.

    z' = a_bar * z - b_coef * (mode * p_rated - p_base); exactly the image of
    the temperature update under the affine map of thermal_energy.
    """
    return coef.a_bar * z - coef.b_coef * (mode * params.p_rated - coef.p_base)


@dataclass(frozen=True)
class QosReport:
    """Per-constraint audit outcome for one device trajectory."""

    temp_ok: bool
    cycling_ok: bool
    energy_ok: bool
    temp_violations: int
    max_window_switches: int
    max_energy_deviation: float

    @property
    def all_ok(self) -> bool:
        return self.temp_ok and self.cycling_ok and self.energy_ok


def windowed_switch_counts(modes: np.ndarray, tau: int) -> np.ndarray:
    """Switch count in every full window of ``tau`` consecutive transitions.

    Entry w is the number of mode changes among transitions w .. w+tau-1.
    Empty result when fewer than tau transitions exist.
    """
    switches = np.abs(np.diff(modes.astype(np.int64)))
    if switches.size < tau:
        return np.zeros(0, dtype=np.int64)
    csum = np.concatenate(([0], np.cumsum(switches)))
    return csum[tau:] - csum[:-tau]


def qos_check(modes: np.ndarray, thetas: np.ndarray, params: TclParams,
              qos: QosSet, t_s_min: float) -> QosReport:
    """Audit one device history against all three service constraints.

    ``modes`` and ``thetas`` are aligned samples of equal length.  Windows
    that extend beyond the recorded history are not evaluated.
    """
    modes = np.asarray(modes)
    thetas = np.asarray(thetas)
    if modes.shape != thetas.shape:
        raise ValueError("modes and thetas must have equal length")

    band_err = np.abs(thetas - qos.theta_set) - qos.delta
    temp_violations = int(np.count_nonzero(band_err > 1e-12))

    window_counts = windowed_switch_counts(modes, qos.tau_tcl)
    max_window = int(window_counts.max()) if window_counts.size else 0

    t_s_hours = t_s_min / MINUTES_PER_HOUR
    p_base = (params.theta_a - qos.theta_set) / (params.cop * params.r_th)
    n_windows = modes.size // qos.n_b
    max_dev = 0.0
    for w in range(n_windows):
        seg = modes[w * qos.n_b:(w + 1) * qos.n_b]
        dev = t_s_hours / qos.n_b * abs(float(np.sum(seg * params.p_rated - p_base)))
        max_dev = max(max_dev, dev)

    return QosReport(
        temp_ok=temp_violations == 0,
        cycling_ok=max_window <= 1,
        energy_ok=max_dev <= qos.e_tilde + 1e-12,
        temp_violations=temp_violations,
        max_window_switches=max_window,
        max_energy_deviation=max_dev,
    )
