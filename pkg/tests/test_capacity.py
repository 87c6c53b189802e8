import numpy as np
import pytest

from tclcap.capacity import (CapacityParams, InfeasibleStateError, OmegaSystem,
                             build_omega, energy_bounds, power_bounds,
                             stuck_step, ves_check)
from tclcap.core import QosSet, TclParams
from tclcap.fleet import free_run, init_fleet


@pytest.fixture
def cap():
    params = TclParams(r_th=2.5, c_th=2.5, cop=2.5, p_rated=2.24, theta_a=30.0)
    qos = QosSet(theta_set=21.0, delta=1.0, tau_tcl=5, e_tilde=5.0, n_b=720)
    return CapacityParams.from_device(params, qos, 2.0, 1000, 10)


def test_capacity_aggregates(cap):
    assert cap.p_agg == pytest.approx(2240.0)
    assert cap.p_base_agg == pytest.approx(1440.0)
    assert cap.c_bar_agg == pytest.approx(1000.0)
    assert cap.baseline_fraction == pytest.approx(1.44 / 2.24)


def test_stuck_step_zero_history():
    assert stuck_step(0.0, [0.0] * 11, 10) == 0.0


def test_stuck_step_impulse_holds_window_length():
    # one burst of switching stays in the stuck pool exactly tau steps
    tau = 10
    s_hist = []
    gamma = 0.0
    levels = []
    for k in range(30):
        s_now = 0.2 if k == 3 else 0.0
        s_hist.insert(0, s_now)
        gamma = stuck_step(gamma, s_hist[: tau + 1], tau)
        levels.append(gamma)
    # rises one step after the burst, holds tau steps, then falls
    assert levels[2] == 0.0
    assert levels[3] == pytest.approx(0.2)
    assert levels[3 + tau - 1] == pytest.approx(0.2)
    assert levels[3 + tau] == pytest.approx(0.0)


def test_stuck_step_constant_rate_steady_state():
    tau = 7
    s_hist = []
    gamma = 0.0
    for _ in range(50):
        s_hist.insert(0, 0.03)
        gamma = stuck_step(gamma, s_hist[: tau + 1], tau)
    assert gamma == pytest.approx(tau * 0.03, rel=1e-12)


def test_stuck_step_telescopes_to_window_sum():
    rng = np.random.default_rng(5)
    for _ in range(30):
        tau = int(rng.integers(1, 12))
        s = rng.random(40) * 0.02
        gamma = 0.0
        hist = []
        for k in range(s.size):
            hist.insert(0, s[k])
            gamma = stuck_step(gamma, hist[: tau + 1], tau)
            assert gamma == pytest.approx(s[max(0, k - tau + 1): k + 1].sum(),
                                          abs=1e-12)


def test_stuck_step_flags_inconsistent_history():
    with pytest.raises(InfeasibleStateError):
        stuck_step(0.0, [0.0, 0.5], 1)  # expiring mass that never entered


def test_power_bounds_cases():
    assert power_bounds(0.0, 0.0) == (0.0, 1.0)
    assert power_bounds(0.0, 1.0) == (0.0, 0.0)
    n_min, n_max = power_bounds(0.2, 0.3)
    assert (n_min, n_max) == (0.2, pytest.approx(0.7))
    with pytest.raises(InfeasibleStateError):
        power_bounds(0.6, 0.6)


def test_power_bounds_monotone():
    grid = np.linspace(0.0, 0.5, 11)
    for g_off in grid:
        highs = [power_bounds(g_on, g_off)[1] for g_on in grid]
        assert all(h == highs[0] for h in highs)  # upper bound ignores gamma_on
        lows = [power_bounds(g_on, g_off)[0] for g_on in grid]
        assert all(b >= a for a, b in zip(lows, lows[1:]))


def test_energy_bounds_cases(cap):
    lo, hi = energy_bounds(0.0, 0.0, cap)
    assert (lo, hi) == (-cap.c_bar_agg, cap.c_bar_agg)
    _, hi_half = energy_bounds(0.5, 0.0, cap)
    assert hi_half == pytest.approx(0.0)
    lo_q, hi_q = energy_bounds(0.25, 0.25, cap)
    assert hi_q == pytest.approx(0.5 * cap.c_bar_agg)
    assert lo_q == pytest.approx(-0.5 * cap.c_bar_agg)


def test_energy_bounds_monotone(cap):
    grid = np.linspace(0.0, 0.5, 11)
    highs = [energy_bounds(g, 0.1, cap)[1] for g in grid]
    assert all(b <= a for a, b in zip(highs, highs[1:]))
    lows = [energy_bounds(0.1, g, cap)[0] for g in grid]
    assert all(b >= a for a, b in zip(lows, lows[1:]))


def test_ves_check_values():
    assert ves_check(np.zeros(100), 2.0) == 0.0
    half = np.concatenate([np.full(50, 1000.0), np.full(50, -1000.0)])
    assert ves_check(half, 2.0) == pytest.approx(0.0, abs=1e-12)
    constant = np.full(720, 1000.0)  # 1 MW held for the whole horizon
    assert ves_check(constant, 2.0) == pytest.approx((2.0 / 60.0) * 1000.0)


def test_omega_zero_point_feasible_any_horizon(cap):
    for horizon in (1, 7, 40):
        omega = build_omega(cap, horizon)
        x = np.zeros(omega.n_var)
        x[omega.block_slice("n_on")] = omega.n_init
        assert omega.residuals(x).max() <= 1e-12


def test_omega_recursion_rows_are_sparse(cap):
    # every row except the horizon-wide zero-sum row touches few variables
    omega = build_omega(cap, 60)
    nnz_per_row = np.diff(omega.a_mat.tocsr().indptr)
    off, size = omega.row_blocks["ves"]
    ves_rows = set(range(off, off + size))
    for row, nnz in enumerate(nnz_per_row):
        if row in ves_rows:
            continue
        assert nnz <= cap.tau_ba + 2


def test_omega_rows_hold_on_simulated_trajectory(cap):
    """A real fleet trajectory satisfies every constraint row.

    The stuck variables are generated by the planner-side recursion from
    the measured switch fractions, so this exercises the cross-substitution
    between the switching identity and the stuck inventory.
    """
    params = TclParams(r_th=2.5, c_th=2.5, cop=2.5, p_rated=2.24, theta_a=30.0)
    qos = QosSet(theta_set=21.0, delta=1.0, tau_tcl=5, e_tilde=5.0, n_b=720)
    fleet = init_fleet(params, qos, 1000, 2.0, seed=3)
    z0 = fleet.aggregate_thermal_energy()
    n0 = fleet.fraction_on
    horizon = 120
    trace = free_run(fleet, horizon)

    omega = build_omega(cap, horizon, z_init=z0, n_init=n0, include_ves=False)
    x = np.zeros(omega.n_var)
    y = trace.y_kw
    x[omega.block_slice("r")] = y
    x[omega.block_slice("n_on")] = trace.frac("n_on")
    s_on = trace.frac("s_on")
    s_off = trace.frac("s_off")
    x[omega.block_slice("s_on")] = s_on
    x[omega.block_slice("s_off")] = s_off

    # z_k for k = 1..horizon from the battery recursion driven by measured y
    z = np.empty(horizon)
    prev = z0
    for k in range(horizon):
        prev = cap.coef.a_bar * prev - cap.coef.b_coef * y[k]
        z[k] = prev
    x[omega.block_slice("z")] = z

    g_on = np.empty(horizon)
    g_off = np.empty(horizon)
    prev_on = prev_off = 0.0
    for k in range(1, horizon + 1):
        new_on = prev_on + s_on[k - 1] - (s_on[k - 1 - cap.tau_ba] if k - 1 - cap.tau_ba >= 0 else 0.0)
        new_off = prev_off + s_off[k - 1] - (s_off[k - 1 - cap.tau_ba] if k - 1 - cap.tau_ba >= 0 else 0.0)
        g_on[k - 1], g_off[k - 1] = new_on, new_off
        prev_on, prev_off = new_on, new_off
    x[omega.block_slice("g_on")] = g_on
    x[omega.block_slice("g_off")] = g_off

    assert omega.residuals(x).max() <= 1e-9


def test_omega_save_load_round_trip(tmp_path, cap):
    omega = build_omega(cap, 25, z_init=12.5, n_init=0.61)
    omega.save(tmp_path / "omega")
    back = OmegaSystem.load(tmp_path / "omega")
    assert (omega.a_mat != back.a_mat).nnz == 0
    assert np.array_equal(omega.lower, back.lower)
    assert np.array_equal(omega.upper, back.upper)
    assert back.var_blocks == omega.var_blocks
    assert back.row_blocks == omega.row_blocks
    assert back.z_init == omega.z_init
    assert back.cap.tau_ba == omega.cap.tau_ba


def test_omega_optional_rows(cap):
    with_boxes = build_omega(cap, 10)
    without = build_omega(cap, 10, enforce_nonneg_switches=False, include_ves=False)
    assert "s_on_box" in with_boxes.row_blocks
    assert "s_on_box" not in without.row_blocks
    assert "ves" not in without.row_blocks
    assert without.n_row < with_boxes.n_row
