"""Aggregate flexibility constraints for a homogeneous fleet.

The fleet-level decision variables per step are the stored-energy total z,
the power-deviation reference r, the on/off switch fractions, the stuck-on
and stuck-off fractions, and the fraction of devices on.  This module builds
the full time-indexed linear system tying them together:

* a first-order battery-like recursion for z driven by r;
* inventory recursions for the stuck fractions driven by switch fractions,
  with planning window ``tau_ba`` samples;
* bounds on the fraction on from the stuck fractions;
* stored-energy bounds shrunk by the stuck fractions;
* a zero-sum constraint on r so the fleet never nets out as a generator.

The assembled system is exported in a sparse triplet format for external
solvers and consumed directly by the in-package planner.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import sparse_io
from .core import (MINUTES_PER_HOUR, DerivedCoefficients, ParameterError,
                   QosSet, TclParams, derive_coefficients)

GAMMA_TOL = 1e-9


class InfeasibleStateError(ValueError):
    """Stuck fractions describe an impossible fleet state."""


@dataclass(frozen=True)
class CapacityParams:
    """Everything the planner needs to know about the fleet.

    tau_ba is the planner-side cycling window in samples; choosing it larger
    than the device-side lockout makes the plan conservatively underestimate
    how often devices may switch.
    """

    n_devices: int
    tau_ba: int
    coef: DerivedCoefficients
    p_agg: float
    p_base_agg: float
    c_bar_agg: float

    def __post_init__(self):
        if self.n_devices < 1:
            raise ParameterError("n_devices must be at least 1")
        if self.tau_ba < 1:
            raise ParameterError("tau_ba must be at least one sample")

    @property
    def baseline_fraction(self) -> float:
        return self.p_base_agg / self.p_agg

    @classmethod
    def from_device(cls, params: TclParams, qos: QosSet, t_s_min: float,
                    n_devices: int, tau_ba: int) -> "CapacityParams":
        coef = derive_coefficients(params, qos, t_s_min)
        return cls(
            n_devices=n_devices,
            tau_ba=tau_ba,
            coef=coef,
            p_agg=n_devices * params.p_rated,
            p_base_agg=n_devices * coef.p_base,
            c_bar_agg=n_devices * coef.c_bar,
        )


def stuck_step(gamma_prev: float, switch_window, tau_ba: int) -> float:
    """Advance a stuck fraction one step.

    ``switch_window`` holds the most recent switch fractions newest first,
    i.e. entry 0 is the fraction that switched during the last step and entry
    ``tau_ba`` the fraction whose lockout expires now.  Missing old entries
    are treated as zero (cold start).
    """
    window = list(switch_window)
    if any(s < -GAMMA_TOL or s > 1.0 + GAMMA_TOL for s in window):
        raise InfeasibleStateError("switch fractions must lie in [0, 1]")
    newest = window[0] if window else 0.0
    expiring = window[tau_ba] if len(window) > tau_ba else 0.0
    gamma_next = gamma_prev + newest - expiring
    if gamma_next < -GAMMA_TOL or gamma_next > 1.0 + GAMMA_TOL:
        raise InfeasibleStateError(
            f"stuck fraction {gamma_next} left [0, 1]; inconsistent switch history"
        )
    return gamma_next


def power_bounds(gamma_on_prev: float, gamma_off_prev: float) -> tuple[float, float]:
    """Admissible range of the fraction on given last step's stuck fractions."""
    if gamma_on_prev + gamma_off_prev > 1.0 + GAMMA_TOL:
        raise InfeasibleStateError("gamma_on + gamma_off exceeds 1")
    return gamma_on_prev, 1.0 - gamma_off_prev


def energy_bounds(gamma_on: float, gamma_off: float,
                  cap: CapacityParams) -> tuple[float, float]:
    """Stored-energy bounds under the worst-case placement of stuck devices.

    Devices stuck on are assumed pinned at the hot edge of the deadband, so
    each one both removes headroom and contributes the opposite extreme:
    upper bound N*c_bar*(1 - 2*gamma_on), lower bound mirrored.
    """
    c_hi = cap.c_bar_agg * (1.0 - 2.0 * gamma_on)
    c_lo = -cap.c_bar_agg * (1.0 - 2.0 * gamma_off)
    return c_lo, c_hi


def ves_check(reference, t_s_min: float) -> float:
    """Windowed mean of the reference: (T_s / N_t) * |sum r_k|, kWh.

    Zero means the planned deviations net out, so every device-level billing
    limit (any nonnegative allowance) is satisfiable in aggregate.
    """
    reference = np.asarray(reference, dtype=float)
    if reference.size == 0:
        return 0.0
    t_s_hours = t_s_min / MINUTES_PER_HOUR
    return t_s_hours / reference.size * abs(float(np.sum(reference)))


@dataclass
class OmegaSystem:
    """Assembled sparse constraint system over the stacked variable blocks.

    Equality rows carry lower == upper.  ``var_blocks`` and ``row_blocks``
    map block names to (offset, length) into the variable/row dimensions.
    """

    a_mat: sp.csc_matrix
    lower: np.ndarray
    upper: np.ndarray
    var_blocks: dict
    row_blocks: dict
    horizon: int
    cap: CapacityParams
    z_init: float
    n_init: float
    enforce_nonneg_switches: bool = True
    include_ves: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def n_var(self) -> int:
        return self.a_mat.shape[1]

    @property
    def n_row(self) -> int:
        return self.a_mat.shape[0]

    def block_slice(self, name: str) -> slice:
        off, size = self.var_blocks[name]
        return slice(off, off + size)

    def row_slice(self, name: str) -> slice:
        off, size = self.row_blocks[name]
        return slice(off, off + size)

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """Signed violation of each row for a candidate stacked vector."""
        ax = self.a_mat @ x
        return np.maximum(self.lower - ax, 0.0) + np.maximum(ax - self.upper, 0.0)

    def save(self, prefix) -> None:
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        sparse_io.write_triplets(f"{prefix}_A.csv", self.a_mat)
        sparse_io.write_bounds(f"{prefix}_bounds.csv", self.lower, self.upper)
        header = {
            "format": "tclcap-omega-v1",
            "n_var": self.n_var,
            "n_row": self.n_row,
            "horizon": self.horizon,
            "var_blocks": {k: list(v) for k, v in self.var_blocks.items()},
            "row_blocks": {k: list(v) for k, v in self.row_blocks.items()},
            "z_init": self.z_init,
            "n_init": self.n_init,
            "enforce_nonneg_switches": self.enforce_nonneg_switches,
            "include_ves": self.include_ves,
            "capacity": {
                "n_devices": self.cap.n_devices,
                "tau_ba": self.cap.tau_ba,
                "p_agg": self.cap.p_agg,
                "p_base_agg": self.cap.p_base_agg,
                "c_bar_agg": self.cap.c_bar_agg,
                "a_bar": self.cap.coef.a_bar,
                "b_coef": self.cap.coef.b_coef,
                "p_base": self.cap.coef.p_base,
                "c_bar": self.cap.coef.c_bar,
                "t_s_hours": self.cap.coef.t_s_hours,
            },
            "files": {"A": f"{prefix.name}_A.csv", "bounds": f"{prefix.name}_bounds.csv"},
        }
        sparse_io.write_header(f"{prefix}.json", header)

    @classmethod
    def load(cls, prefix) -> "OmegaSystem":
        prefix = Path(prefix)
        header = sparse_io.read_header(f"{prefix}.json")
        shape = (header["n_row"], header["n_var"])
        a_mat = sparse_io.read_triplets(prefix.parent / header["files"]["A"], shape)
        lower, upper = sparse_io.read_bounds(prefix.parent / header["files"]["bounds"],
                                             header["n_row"])
        capd = header["capacity"]
        coef = DerivedCoefficients(a_bar=capd["a_bar"], b_coef=capd["b_coef"],
                                   p_base=capd["p_base"], c_bar=capd["c_bar"],
                                   t_s_hours=capd["t_s_hours"])
        cap = CapacityParams(n_devices=capd["n_devices"], tau_ba=capd["tau_ba"],
                             coef=coef, p_agg=capd["p_agg"],
                             p_base_agg=capd["p_base_agg"], c_bar_agg=capd["c_bar_agg"])
        return cls(
            a_mat=a_mat, lower=lower, upper=upper,
            var_blocks={k: tuple(v) for k, v in header["var_blocks"].items()},
            row_blocks={k: tuple(v) for k, v in header["row_blocks"].items()},
            horizon=header["horizon"], cap=cap,
            z_init=header["z_init"], n_init=header["n_init"],
            enforce_nonneg_switches=header["enforce_nonneg_switches"],
            include_ves=header["include_ves"],
        )


VAR_ORDER = ("z", "r", "s_on", "s_off", "g_on", "g_off", "n_on")


def build_omega(cap: CapacityParams, horizon: int, z_init: float = 0.0,
                n_init: float | None = None, enforce_nonneg_switches: bool = True,
                include_ves: bool = True) -> OmegaSystem:
    """Assemble the constraint system over steps 0 .. horizon-1.

    Stored-energy and stuck-fraction trajectories are indexed 1 .. horizon
    (state after each step); r, switch fractions, and the fraction on are
    indexed 0 .. horizon-1.  Cold start: switches before step 0 are zero, so
    the fraction on at step 0 equals ``n_init`` and the reference at step 0
    is pinned to the initial deviation.
    """
    if horizon < 1:
        raise ParameterError("horizon must be at least 1")
    if n_init is None:
        n_init = cap.baseline_fraction
    if not 0.0 <= n_init <= 1.0:
        raise ParameterError("initial fraction on must lie in [0, 1]")
    if abs(z_init) > cap.c_bar_agg:
        raise ParameterError("initial stored energy outside the deadband range")

    nt = horizon
    tau = cap.tau_ba
    a_bar = cap.coef.a_bar
    b = cap.coef.b_coef
    nc = cap.c_bar_agg

    var_blocks = {name: (i * nt, nt) for i, name in enumerate(VAR_ORDER)}
    z0, r0, son0, soff0, gon0, goff0, non0 = (var_blocks[n][0] for n in VAR_ORDER)
    n_var = 7 * nt

    rows, cols, vals = [], [], []
    lower, upper = [], []
    row_blocks = {}
    cursor = 0

    def begin(name, size):
        nonlocal cursor
        row_blocks[name] = (cursor, size)

    def emit(coeffs, lo, hi):
        nonlocal cursor
        for col, val in coeffs:
            rows.append(cursor)
            cols.append(col)
            vals.append(val)
        lower.append(lo)
        upper.append(hi)
        cursor += 1

    # battery recursion: z_k = a_bar z_{k-1} - b r_{k-1}, z_0 given
    begin("battery", nt)
    for j in range(nt):
        coeffs = [(z0 + j, 1.0), (r0 + j, b)]
        rhs = 0.0
        if j == 0:
            rhs = a_bar * z_init
        else:
            coeffs.append((z0 + j - 1, -a_bar))
        emit(coeffs, rhs, rhs)

    # stuck inventories: g_k = g_{k-1} + s_{k-1} - s_{k-1-tau}, g_0 = 0
    for name, g_off_idx, s_off_idx in (("stuck_on", gon0, son0),
                                       ("stuck_off", goff0, soff0)):
        begin(name, nt)
        for j in range(nt):
            coeffs = [(g_off_idx + j, 1.0), (s_off_idx + j, -1.0)]
            if j >= 1:
                coeffs.append((g_off_idx + j - 1, -1.0))
            if j - tau >= 0:
                coeffs.append((s_off_idx + j - tau, 1.0))
            emit(coeffs, 0.0, 0.0)

    # fraction-on to reference coupling: n_k = (r_k + p_base_agg) / p_agg
    begin("couple", nt)
    base_frac = cap.p_base_agg / cap.p_agg
    for j in range(nt):
        emit([(non0 + j, 1.0), (r0 + j, -1.0 / cap.p_agg)], base_frac, base_frac)

    # switching inventory: n_k = n_{k-1} + s_on_{k-1} - s_off_{k-1}
    begin("n_inventory", nt)
    for j in range(nt):
        if j == 0:
            emit([(non0, 1.0)], n_init, n_init)
        else:
            emit([(non0 + j, 1.0), (non0 + j - 1, -1.0),
                  (son0 + j - 1, -1.0), (soff0 + j - 1, 1.0)], 0.0, 0.0)

    if include_ves:
        begin("ves", 1)
        emit([(r0 + j, 1.0) for j in range(nt)], 0.0, 0.0)

    inf = np.inf
    # stored-energy bounds shrunk by stuck fractions
    begin("energy_hi", nt)
    for j in range(nt):
        emit([(z0 + j, 1.0), (gon0 + j, 2.0 * nc)], -inf, nc)
    begin("energy_lo", nt)
    for j in range(nt):
        emit([(z0 + j, 1.0), (goff0 + j, -2.0 * nc)], -nc, inf)

    # fraction-on bounds from last step's stuck fractions (g_0 = 0 known)
    begin("power_hi", nt)
    for j in range(nt):
        coeffs = [(non0 + j, 1.0)]
        if j >= 2:
            coeffs.append((goff0 + j - 2, 1.0))
        emit(coeffs, -inf, 1.0)
    begin("power_lo", nt)
    for j in range(nt):
        coeffs = [(non0 + j, 1.0)]
        if j >= 2:
            coeffs.append((gon0 + j - 2, -1.0))
        emit(coeffs, 0.0, inf)

    if enforce_nonneg_switches:
        begin("s_on_box", nt)
        for j in range(nt):
            emit([(son0 + j, 1.0)], 0.0, inf)
        begin("s_off_box", nt)
        for j in range(nt):
            emit([(soff0 + j, 1.0)], 0.0, inf)

    begin("g_on_box", nt)
    for j in range(nt):
        emit([(gon0 + j, 1.0)], 0.0, 1.0)
    begin("g_off_box", nt)
    for j in range(nt):
        emit([(goff0 + j, 1.0)], 0.0, 1.0)

    a_mat = sp.coo_matrix((vals, (rows, cols)), shape=(cursor, n_var)).tocsc()
    return OmegaSystem(
        a_mat=a_mat, lower=np.array(lower), upper=np.array(upper),
        var_blocks=var_blocks, row_blocks=row_blocks, horizon=nt, cap=cap,
        z_init=z_init, n_init=n_init,
        enforce_nonneg_switches=enforce_nonneg_switches, include_ves=include_ves,
    )
