"""Reference planning: project the grid signal onto the fleet's capacity.

The primary method minimizes a diagonally weighted quadratic distance
between the requested deviation trajectory and the planned one over the full
capacity constraint system (battery recursion, stuck inventories, power and
stored-energy bounds, zero-sum deviation).  The alternative method keeps
only the battery recursion with static bounds, i.e. it pretends no device is
ever stuck; it exists for comparison runs.

Variables are rescaled to per-unit magnitudes (power by the aggregate rated
power, energy by the aggregate half-range) before the QP solve and restored
afterwards.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import qp
from .capacity import CapacityParams, OmegaSystem, build_omega, ves_check
from .core import ParameterError

PLAN_COLUMNS = ("k", "r_ba_kw", "r_kw", "z_kwh", "n_on", "s_on", "s_off",
                "gamma_on", "gamma_off")


class PlannerInvariantError(RuntimeError):
    """The provably feasible planning problem came back infeasible."""


@dataclass(frozen=True)
class PlanWeights:
    """Per-unit diagonal objective weights.

    Applied to r / p_agg, z / (N c_bar), and the raw fractional switch and
    stuck variables.  The reference weight should dominate: tracking fidelity
    is the point, the other terms only regularize toward small cycling.
    """

    r: float = 1.0
    z: float = 1e-6
    s_on: float = 1e-4
    s_off: float = 1e-4
    g_on: float = 1e-4
    g_off: float = 1e-4

    def __post_init__(self):
        for name in ("r", "z", "s_on", "s_off", "g_on", "g_off"):
            if getattr(self, name) <= 0.0:
                raise ParameterError(f"weight {name} must be strictly positive")

    def as_dict(self) -> dict:
        return {"r": self.r, "z": self.z, "s_on": self.s_on,
                "s_off": self.s_off, "g_on": self.g_on, "g_off": self.g_off}


@dataclass
class PlanProblem:
    ba_signal_kw: np.ndarray
    cap: CapacityParams
    weights: PlanWeights = field(default_factory=PlanWeights)
    z_init_kwh: float = 0.0
    n_init: float | None = None
    enforce_nonneg_switches: bool = True

    def __post_init__(self):
        self.ba_signal_kw = np.asarray(self.ba_signal_kw, dtype=float)
        if self.ba_signal_kw.ndim != 1 or self.ba_signal_kw.size < 1:
            raise ParameterError("ba_signal must be a nonempty 1-d series")
        if not np.all(np.isfinite(self.ba_signal_kw)):
            raise ParameterError("ba_signal contains non-finite values")

    @property
    def horizon(self) -> int:
        return self.ba_signal_kw.size

    @property
    def n_init_resolved(self) -> float:
        return self.cap.baseline_fraction if self.n_init is None else self.n_init


@dataclass
class PlanSolution:
    method: str
    reference_kw: np.ndarray
    z_kwh: np.ndarray
    n_on: np.ndarray
    s_on: np.ndarray
    s_off: np.ndarray
    g_on: np.ndarray
    g_off: np.ndarray
    ba_signal_kw: np.ndarray
    objective: float
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    weights: PlanWeights
    cap: CapacityParams
    z_init_kwh: float
    n_init: float
    t_s_min: float | None = None

    def summary_dict(self) -> dict:
        return {
            "method": self.method,
            "status": self.status,
            "objective": self.objective,
            "iterations": self.iterations,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "horizon": int(self.reference_kw.size),
            "weights": self.weights.as_dict(),
            "z_init_kwh": self.z_init_kwh,
            "n_init": self.n_init,
            "reference_sum_kw": float(np.sum(self.reference_kw)),
            "capacity": {
                "n_devices": self.cap.n_devices,
                "tau_ba": self.cap.tau_ba,
                "p_agg_kw": self.cap.p_agg,
                "p_base_agg_kw": self.cap.p_base_agg,
                "c_bar_agg_kwh": self.cap.c_bar_agg,
            },
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(PLAN_COLUMNS)
            for k in range(self.reference_kw.size):
                writer.writerow([
                    k,
                    repr(float(self.ba_signal_kw[k])),
                    repr(float(self.reference_kw[k])),
                    repr(float(self.z_kwh[k])),
                    repr(float(self.n_on[k])),
                    repr(float(self.s_on[k])),
                    repr(float(self.s_off[k])),
                    repr(float(self.g_on[k])),
                    repr(float(self.g_off[k])),
                ])

    def save_summary(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary_dict(), indent=2) + "\n")


def _weighted_objective(weights: PlanWeights, cap: CapacityParams, reference_kw,
                        ba_kw, z_kwh, s_on, s_off, g_on, g_off) -> float:
    r_hat = (np.asarray(ba_kw) - np.asarray(reference_kw)) / cap.p_agg
    z_hat = np.asarray(z_kwh) / cap.c_bar_agg
    return float(
        weights.r * np.sum(r_hat ** 2) + weights.z * np.sum(z_hat ** 2)
        + weights.s_on * np.sum(np.asarray(s_on) ** 2)
        + weights.s_off * np.sum(np.asarray(s_off) ** 2)
        + weights.g_on * np.sum(np.asarray(g_on) ** 2)
        + weights.g_off * np.sum(np.asarray(g_off) ** 2)
    )


def _solve_scaled(a_mat, lower, upper, p_diag_scaled, q_scaled, var_scale,
                  **qp_options):
    """Solve over per-unit variables x_hat with x = var_scale * x_hat.

    The cost terms are already expressed in per-unit space; the constraint
    matrix gets its columns rescaled to match and every row normalized to
    unit magnitude so all slacks are comparable.  Returns the solver result
    plus the primal restored to physical units.
    """
    a_scaled = (a_mat @ sp.diags(var_scale)).tocsr()
    row_norm = np.maximum(abs(a_scaled).max(axis=1).toarray().ravel(), 1e-12)
    row_inv = sp.diags(1.0 / row_norm)
    problem = qp.QpProblem(
        p_mat=sp.diags(p_diag_scaled).tocsc(),
        q=q_scaled,
        a_mat=(row_inv @ a_scaled).tocsc(),
        lower=lower / row_norm, upper=upper / row_norm,
    )
    options = {"tol_abs": 1e-6, "tol_rel": 1e-6, "max_iter": 200_000}
    options.update(qp_options)
    sol = qp.solve(problem, **options)
    return sol, sol.x * var_scale


def plan_proposed(problem: PlanProblem, drop_cycling: bool = False,
                  **qp_options) -> PlanSolution:
    """Plan with the full capacity system (the primary method).

    ``drop_cycling`` removes the switch and stuck blocks and widens the
    bounds to their no-cycling values; it exists to verify that the method
    then collapses onto the alternative one.
    """
    if drop_cycling:
        return _plan_static(problem, method="proposed-reduced", include_ves=True,
                            pin_initial=True, **qp_options)

    cap = problem.cap
    nt = problem.horizon
    omega = build_omega(cap, nt, z_init=problem.z_init_kwh,
                        n_init=problem.n_init_resolved,
                        enforce_nonneg_switches=problem.enforce_nonneg_switches,
                        include_ves=True)

    w = problem.weights
    p_diag = np.zeros(omega.n_var)
    q_vec = np.zeros(omega.n_var)
    var_scale = np.ones(omega.n_var)
    var_scale[omega.block_slice("z")] = cap.c_bar_agg
    var_scale[omega.block_slice("r")] = cap.p_agg
    block_w = {"z": w.z, "r": w.r, "s_on": w.s_on, "s_off": w.s_off,
               "g_on": w.g_on, "g_off": w.g_off, "n_on": 0.0}
    for name, weight in block_w.items():
        p_diag[omega.block_slice(name)] = 2.0 * weight
    # per-unit distance to the requested series enters through the linear term
    q_vec[omega.block_slice("r")] = -2.0 * w.r * problem.ba_signal_kw / cap.p_agg

    sol, x = _solve_scaled(omega.a_mat, omega.lower, omega.upper,
                           p_diag, q_vec, var_scale, **qp_options)
    if sol.status == qp.INFEASIBLE:
        raise PlannerInvariantError(
            "capacity constraint system reported infeasible; it is nonempty "
            "by construction, so this indicates an assembly bug")

    reference = x[omega.block_slice("r")]
    z = x[omega.block_slice("z")]
    plan = PlanSolution(
        method="proposed",
        reference_kw=reference,
        z_kwh=z,
        n_on=x[omega.block_slice("n_on")],
        s_on=x[omega.block_slice("s_on")],
        s_off=x[omega.block_slice("s_off")],
        g_on=x[omega.block_slice("g_on")],
        g_off=x[omega.block_slice("g_off")],
        ba_signal_kw=problem.ba_signal_kw,
        objective=_weighted_objective(w, cap, reference, problem.ba_signal_kw,
                                      z, x[omega.block_slice("s_on")],
                                      x[omega.block_slice("s_off")],
                                      x[omega.block_slice("g_on")],
                                      x[omega.block_slice("g_off")]),
        status=sol.status, iterations=sol.iterations,
        primal_residual=sol.primal_residual, dual_residual=sol.dual_residual,
        weights=w, cap=cap, z_init_kwh=problem.z_init_kwh,
        n_init=problem.n_init_resolved,
    )
    return plan


def plan_alternative(problem: PlanProblem, include_ves: bool = False,
                     pin_initial: bool = False, **qp_options) -> PlanSolution:
    """Plan with static bounds only (no stuck accounting), for comparison."""
    return _plan_static(problem, method="alternative", include_ves=include_ves,
                        pin_initial=pin_initial, **qp_options)


def _plan_static(problem: PlanProblem, method: str, include_ves: bool,
                 pin_initial: bool, **qp_options) -> PlanSolution:
    cap = problem.cap
    nt = problem.horizon
    a_bar = cap.coef.a_bar
    b = cap.coef.b_coef
    nc = cap.c_bar_agg
    inf = np.inf

    # variables: z_1..z_nt then r_0..r_{nt-1}
    rows, cols, vals, lower, upper = [], [], [], [], []
    cursor = 0

    def emit(coeffs, lo, hi):
        nonlocal cursor
        for c, v in coeffs:
            rows.append(cursor)
            cols.append(c)
            vals.append(v)
        lower.append(lo)
        upper.append(hi)
        cursor += 1

    for j in range(nt):
        coeffs = [(j, 1.0), (nt + j, b)]
        rhs = a_bar * problem.z_init_kwh if j == 0 else 0.0
        if j > 0:
            coeffs.append((j - 1, -a_bar))
        emit(coeffs, rhs, rhs)
    for j in range(nt):
        emit([(j, 1.0)], -nc, nc)
    r_lo = -cap.p_base_agg
    r_hi = cap.p_agg - cap.p_base_agg
    for j in range(nt):
        emit([(nt + j, 1.0)], r_lo, r_hi)
    if include_ves:
        emit([(nt + j, 1.0) for j in range(nt)], 0.0, 0.0)
    if pin_initial:
        r0 = cap.p_agg * problem.n_init_resolved - cap.p_base_agg
        emit([(nt, 1.0)], r0, r0)

    a_mat = sp.coo_matrix((vals, (rows, cols)), shape=(cursor, 2 * nt)).tocsc()
    w = problem.weights
    p_diag = np.concatenate([np.full(nt, 2.0 * w.z), np.full(nt, 2.0 * w.r)])
    q_vec = np.concatenate([np.zeros(nt),
                            -2.0 * w.r * problem.ba_signal_kw / cap.p_agg])
    var_scale = np.concatenate([np.full(nt, nc), np.full(nt, cap.p_agg)])

    sol, x = _solve_scaled(a_mat, np.array(lower), np.array(upper),
                           p_diag, q_vec, var_scale, **qp_options)
    if sol.status == qp.INFEASIBLE:
        raise PlannerInvariantError("static planning problem reported infeasible")

    z = x[:nt]
    reference = x[nt:]
    zeros = np.zeros(nt)
    return PlanSolution(
        method=method,
        reference_kw=reference,
        z_kwh=z,
        n_on=(reference + cap.p_base_agg) / cap.p_agg,
        s_on=zeros, s_off=zeros.copy(), g_on=zeros.copy(), g_off=zeros.copy(),
        ba_signal_kw=problem.ba_signal_kw,
        objective=_weighted_objective(w, cap, reference, problem.ba_signal_kw,
                                      z, zeros, zeros, zeros, zeros),
        status=sol.status, iterations=sol.iterations,
        primal_residual=sol.primal_residual, dual_residual=sol.dual_residual,
        weights=w, cap=cap, z_init_kwh=problem.z_init_kwh,
        n_init=problem.n_init_resolved,
    )


@dataclass
class WitnessReport:
    passed: bool
    hessian_positive: bool
    bounds_ordered: bool
    zero_point_feasible: bool
    max_zero_point_violation: float
    details: dict = field(default_factory=dict)


def lemma1_witness(cap: CapacityParams, horizon: int,
                   weights: PlanWeights | None = None,
                   grid_points: int = 21) -> WitnessReport:
    """Execute the feasibility/uniqueness argument behind the planning problem.

    Checks (a) every objective block weight is strictly positive, (b) upper
    bounds dominate lower bounds for all stuck fractions on a simplex grid,
    and (c) the all-zero deviation trajectory at the baseline fraction
    satisfies every assembled constraint row.
    """
    weights = weights or PlanWeights()
    hessian_positive = all(v > 0 for v in weights.as_dict().values())

    from .capacity import energy_bounds, power_bounds
    bounds_ordered = True
    grid = np.linspace(0.0, 1.0, grid_points)
    for g_on in grid:
        for g_off in grid:
            if g_on + g_off > 1.0 + 1e-12:
                continue
            n_lo, n_hi = power_bounds(g_on, g_off)
            c_lo, c_hi = energy_bounds(g_on, g_off, cap)
            if n_hi < n_lo - 1e-12 or c_hi < c_lo - 1e-12:
                bounds_ordered = False

    omega = build_omega(cap, horizon, z_init=0.0)
    x0 = np.zeros(omega.n_var)
    x0[omega.block_slice("n_on")] = omega.n_init
    violation = float(omega.residuals(x0).max()) if omega.n_row else 0.0
    zero_feasible = violation <= 1e-9

    return WitnessReport(
        passed=hessian_positive and bounds_ordered and zero_feasible,
        hessian_positive=hessian_positive,
        bounds_ordered=bounds_ordered,
        zero_point_feasible=zero_feasible,
        max_zero_point_violation=violation,
        details={"horizon": horizon, "grid_points": grid_points},
    )
