import numpy as np
import pytest

from tclcap.capacity import CapacityParams, ves_check
from tclcap.core import ParameterError, QosSet, TclParams
from tclcap.fleet import free_run, init_fleet
from tclcap.planner import (PlanProblem, PlanWeights, lemma1_witness,
                            plan_alternative, plan_proposed)
from tclcap.signals import synthetic_signal


@pytest.fixture
def cap():
    params = TclParams(r_th=2.5, c_th=2.5, cop=2.5, p_rated=2.24, theta_a=30.0)
    qos = QosSet(theta_set=21.0, delta=1.0, tau_tcl=5, e_tilde=5.0, n_b=720)
    return CapacityParams.from_device(params, qos, 2.0, 1000, 10)


def test_zero_request_projects_to_zero(cap):
    problem = PlanProblem(ba_signal_kw=np.zeros(60), cap=cap)
    plan = plan_proposed(problem)
    assert plan.status == "optimal"
    assert np.abs(plan.reference_kw).max() < 1e-6
    assert np.abs(plan.g_on).max() < 1e-6
    assert plan.objective == pytest.approx(0.0, abs=1e-10)


def test_interior_point_projects_to_itself(cap):
    # a baseline-consistent trajectory is strictly inside the capacity set
    params = TclParams(r_th=2.5, c_th=2.5, cop=2.5, p_rated=2.24, theta_a=30.0)
    qos = QosSet(theta_set=21.0, delta=1.0, tau_tcl=5, e_tilde=5.0, n_b=720)
    fleet = init_fleet(params, qos, 1000, 2.0, seed=21)
    z0 = fleet.aggregate_thermal_energy()
    n0 = fleet.fraction_on
    trace = free_run(fleet, 80)
    # build a request that is interior including the pinned first step and
    # the zero-sum row: start at the realized deviation, de-mean the rest
    y = trace.y_kw
    ba = y.copy()
    ba[1:] -= y.sum() / (y.size - 1)
    tiny = PlanWeights(r=1.0, z=1e-9, s_on=1e-9, s_off=1e-9, g_on=1e-9, g_off=1e-9)
    problem = PlanProblem(ba_signal_kw=ba, cap=cap, weights=tiny,
                          z_init_kwh=z0, n_init=n0)
    plan = plan_proposed(problem)
    scale = max(np.abs(ba).max(), 1.0)
    assert np.abs(plan.reference_kw - ba).max() / scale < 1e-4


def test_proposed_less_aggressive_than_alternative(cap):
    ba = synthetic_signal(240, 2.0, seed=3, amplitude_kw=0.45 * cap.p_agg,
                          corr_minutes=(3.0, 15.0), mix=(0.7, 0.3))
    problem = PlanProblem(ba_signal_kw=ba, cap=cap)
    prop = plan_proposed(problem)
    alt = plan_alternative(problem)
    tv = lambda x: np.abs(np.diff(x)).sum()
    assert tv(prop.reference_kw) < tv(alt.reference_kw)
    assert np.abs(np.diff(prop.reference_kw)).max() <= np.abs(np.diff(alt.reference_kw)).max() + 1e-9


def test_ves_row_enforced(cap):
    ba = synthetic_signal(120, 2.0, seed=5, amplitude_kw=0.3 * cap.p_agg) + 50.0
    plan = plan_proposed(PlanProblem(ba_signal_kw=ba, cap=cap))
    assert ves_check(plan.reference_kw, 2.0) <= 1e-6 * cap.p_agg


def test_planned_switching_identity_reconstructs(cap):
    ba = synthetic_signal(100, 2.0, seed=6, amplitude_kw=0.35 * cap.p_agg)
    plan = plan_proposed(PlanProblem(ba_signal_kw=ba, cap=cap))
    n = plan.n_on
    rebuilt = n[:-1] + plan.s_on[:-1] - plan.s_off[:-1]
    assert np.abs(n[1:] - rebuilt).max() < 1e-6
    # coupling row ties the planned fraction to the planned reference
    coupled = (plan.reference_kw + cap.p_base_agg) / cap.p_agg
    assert np.abs(n - coupled).max() < 1e-6


def test_alternative_region_contains_proposed(cap):
    ba = synthetic_signal(150, 2.0, seed=7, amplitude_kw=0.4 * cap.p_agg)
    problem = PlanProblem(ba_signal_kw=ba, cap=cap)
    prop = plan_proposed(problem)
    alt = plan_alternative(problem)
    tol = 1e-5 * cap.p_agg
    assert np.all(np.abs(prop.z_kwh) <= cap.c_bar_agg + 1e-5 * cap.c_bar_agg)
    assert np.all(prop.reference_kw >= -cap.p_base_agg - tol)
    assert np.all(prop.reference_kw <= cap.p_agg - cap.p_base_agg + tol)

    def j_alt(plan):
        w = problem.weights
        return (w.r * np.sum(((ba - plan.reference_kw) / cap.p_agg) ** 2)
                + w.z * np.sum((plan.z_kwh / cap.c_bar_agg) ** 2))

    assert j_alt(alt) <= j_alt(prop) + 1e-9


def test_alternative_clips_at_power_envelope(cap):
    # a short spike keeps the stored-energy budget slack, so only the
    # power envelope caps the planned reference
    ba = np.zeros(80)
    ba[10:13] = 5.0 * cap.p_agg
    plan = plan_alternative(PlanProblem(ba_signal_kw=ba, cap=cap))
    r_hi = cap.p_agg - cap.p_base_agg
    assert plan.reference_kw.max() <= r_hi + 1e-6 * cap.p_agg
    assert plan.reference_kw[10:13].min() == pytest.approx(r_hi, rel=1e-4)


def test_reduction_to_alternative_when_cycling_dropped(cap):
    ba = synthetic_signal(90, 2.0, seed=8, amplitude_kw=0.3 * cap.p_agg)
    problem = PlanProblem(ba_signal_kw=ba, cap=cap)
    reduced = plan_proposed(problem, drop_cycling=True)
    alt = plan_alternative(problem, include_ves=True, pin_initial=True)
    scale = max(np.abs(alt.reference_kw).max(), 1.0)
    assert np.abs(reduced.reference_kw - alt.reference_kw).max() / scale < 1e-5


def test_weight_scaling_leaves_minimizer(cap):
    ba = synthetic_signal(80, 2.0, seed=9, amplitude_kw=0.3 * cap.p_agg)
    base = plan_proposed(PlanProblem(ba_signal_kw=ba, cap=cap))
    w = PlanWeights()
    doubled = PlanWeights(r=2 * w.r, z=2 * w.z, s_on=2 * w.s_on,
                          s_off=2 * w.s_off, g_on=2 * w.g_on, g_off=2 * w.g_off)
    scaled = plan_proposed(PlanProblem(ba_signal_kw=ba, cap=cap, weights=doubled))
    assert np.abs(base.reference_kw - scaled.reference_kw).max() < 1e-4 * cap.p_agg


def test_degenerate_window_reduces_stuck_to_last_switch(cap):
    params = TclParams(r_th=2.5, c_th=2.5, cop=2.5, p_rated=2.24, theta_a=30.0)
    qos = QosSet(theta_set=21.0, delta=1.0, tau_tcl=1, e_tilde=5.0, n_b=720)
    tight = CapacityParams.from_device(params, qos, 2.0, 1000, 1)
    ba = synthetic_signal(60, 2.0, seed=10, amplitude_kw=0.3 * tight.p_agg)
    plan = plan_proposed(PlanProblem(ba_signal_kw=ba, cap=tight))
    # stored index k holds the stuck fraction after step k, i.e. the window
    # of one reduces to exactly the switch fraction of step k
    assert np.abs(plan.g_on - plan.s_on).max() < 1e-6


def test_max_iter_surfaces_status(cap):
    ba = synthetic_signal(100, 2.0, seed=11, amplitude_kw=0.4 * cap.p_agg)
    plan = plan_proposed(PlanProblem(ba_signal_kw=ba, cap=cap),
                         max_iter=5, check_every=1, polish=False)
    assert plan.status == "max-iter"
    assert np.isfinite(plan.primal_residual)


def test_weights_must_be_positive():
    with pytest.raises(ParameterError):
        PlanWeights(r=0.0)


def test_lemma_witness_reference_parameters(cap):
    report = lemma1_witness(cap, horizon=96)
    assert report.passed
    assert report.max_zero_point_violation <= 1e-9


def test_lemma_witness_smallest_window(cap):
    narrow = CapacityParams(n_devices=cap.n_devices, tau_ba=1, coef=cap.coef,
                            p_agg=cap.p_agg, p_base_agg=cap.p_base_agg,
                            c_bar_agg=cap.c_bar_agg)
    assert lemma1_witness(narrow, horizon=24).passed


def test_plan_csv_and_summary(tmp_path, cap):
    ba = synthetic_signal(50, 2.0, seed=12, amplitude_kw=0.2 * cap.p_agg)
    plan = plan_proposed(PlanProblem(ba_signal_kw=ba, cap=cap))
    plan.to_csv(tmp_path / "plan.csv")
    plan.save_summary(tmp_path / "plan.json")
    header = (tmp_path / "plan.csv").read_text().splitlines()[0]
    assert header == "k,r_ba_kw,r_kw,z_kwh,n_on,s_on,s_off,gamma_on,gamma_off"
    import json
    summary = json.loads((tmp_path / "plan.json").read_text())
    assert summary["status"] == "optimal"
    assert summary["weights"]["r"] == 1.0
