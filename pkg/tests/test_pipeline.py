import json

import numpy as np
import pytest

from tclcap.capacity import OmegaSystem
from tclcap.cli import main
from tclcap.config import ScenarioConfig, apply_overrides, preset
from tclcap.pipeline import PipelineError, audit_run, run_scenario, run_sweep


def tiny_config(out_dir, **overrides) -> ScenarioConfig:
    cfg = preset("table1")
    cfg = apply_overrides(cfg, {
        "fleet.n_devices": 80,
        "fleet.seed": 5,
        "run.n_steps": 48,
        "signal.amplitude_frac": 0.2,
        **overrides,
    })
    cfg.output_dir = str(out_dir)
    return cfg


def test_preset_values():
    cfg = preset("table1")
    assert cfg.fleet.n_devices == 5000
    assert cfg.fleet.p_rated == 2.24
    assert cfg.planning.tau_ba == 10
    assert cfg.fleet.tau_tcl == 5
    assert preset("table1", paper_scale=True).fleet.n_devices == 60_000
    with pytest.raises(ValueError):
        preset("nope")


def test_config_round_trip_and_overrides(tmp_path):
    cfg = tiny_config(tmp_path)
    cfg.to_json(tmp_path / "cfg.json")
    back = ScenarioConfig.from_json(tmp_path / "cfg.json")
    assert back.to_dict() == cfg.to_dict()
    changed = apply_overrides(back, {"planning.tau_ba": 12})
    assert changed.planning.tau_ba == 12
    with pytest.raises(ValueError):
        apply_overrides(back, {"planning.bogus": 1})
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({"fleet": {"bogus": 1}})


def test_config_validation(tmp_path):
    cfg = tiny_config(tmp_path, **{"planning.tau_ba": 2})
    with pytest.raises(ValueError):
        cfg.validate()  # tau_ba below tau_tcl


def test_run_scenario_artifacts(tmp_path):
    cfg = tiny_config(tmp_path / "run")
    result = run_scenario(cfg)
    for name in ("resolved_config.json", "plan.csv", "plan_summary.json",
                 "trace.csv", "metrics.json", "audit.json", "tracking.svg",
                 "switch_intervals.svg"):
        assert (result.run_dir / name).exists(), name
    metrics = json.loads((result.run_dir / "metrics.json").read_text())
    assert metrics["band_violations"] == 0
    assert metrics["cycling_violations"] == 0
    assert result.plan.status == "optimal"


def test_rerun_reproduces_trace_bitwise(tmp_path):
    cfg_a = tiny_config(tmp_path / "a")
    cfg_b = tiny_config(tmp_path / "b")
    res_a = run_scenario(cfg_a, make_plots=False)
    res_b = run_scenario(cfg_b, make_plots=False)
    assert ((res_a.run_dir / "trace.csv").read_bytes()
            == (res_b.run_dir / "trace.csv").read_bytes())
    assert ((res_a.run_dir / "plan.csv").read_bytes()
            == (res_b.run_dir / "plan.csv").read_bytes())


def test_audit_run_on_artifacts(tmp_path):
    cfg = tiny_config(tmp_path / "run")
    run_scenario(cfg, make_plots=False)
    report = audit_run(tmp_path / "run")
    assert report["ok"]
    assert report["switch_inventory_residual"] == 0.0


def test_omega_export_flag(tmp_path):
    cfg = tiny_config(tmp_path / "run", **{"run.export_omega": True})
    run_scenario(cfg, make_plots=False)
    omega = OmegaSystem.load(tmp_path / "run" / "omega")
    assert omega.horizon == cfg.run.n_steps


def test_stage_failure_writes_error_report(tmp_path):
    cfg = tiny_config(tmp_path / "run", **{
        "signal.source": "file",
        "signal.path": str(tmp_path / "missing.csv"),
    })
    with pytest.raises(PipelineError):
        run_scenario(cfg, make_plots=False)
    report = json.loads((tmp_path / "run" / "error.json").read_text())
    assert report["stage"] == "ingest_signal"


def test_sweep_single_cell_matches_scenario(tmp_path):
    cfg = tiny_config(tmp_path / "base")
    results = run_sweep(cfg, [cfg.fleet.tau_tcl], [cfg.planning.tau_ba],
                        tmp_path / "sweep")
    assert len(results) == 1 and results[0]["ok"]
    direct = run_scenario(tiny_config(tmp_path / "direct"), make_plots=False)
    assert results[0]["s_tau"] == direct.metrics.s_tau
    assert results[0]["d_tau"] == direct.metrics.d_tau
    assert results[0]["tracking_error_pct"] == pytest.approx(
        direct.metrics.tracking_error_pct, rel=1e-12)
    sweep_csv = (tmp_path / "sweep" / "sweep.csv").read_text().splitlines()
    assert sweep_csv[0] == "tau_tcl_min,tau_ba_min,s_tau,d_tau,tracking_error_pct"
    assert (tmp_path / "sweep" / "sweep.svg").exists()


def test_sweep_skips_invalid_pairs_and_records_failures(tmp_path):
    cfg = tiny_config(tmp_path / "base")
    with pytest.raises(PipelineError):
        run_sweep(cfg, [10], [5], tmp_path / "sweep")


def test_cli_track_and_audit(tmp_path, capsys):
    out = tmp_path / "cli_run"
    code = main(["track", "--out", str(out), "--n-devices", "80",
                 "--n-steps", "48", "--seed", "5"])
    assert code == 0
    assert (out / "metrics.json").exists()
    code = main(["audit", str(out)])
    assert code == 0
    captured = capsys.readouterr()
    assert "tracking error" in captured.out


def test_cli_plan_then_simulate(tmp_path):
    plan_dir = tmp_path / "plan"
    code = main(["plan", "--out", str(plan_dir), "--n-devices", "80",
                 "--n-steps", "48", "--seed", "5"])
    assert code == 0
    sim_dir = tmp_path / "sim"
    code = main(["simulate", "--plan", str(plan_dir / "plan.csv"),
                 "--out", str(sim_dir), "--n-devices", "80",
                 "--n-steps", "48", "--seed", "5"])
    assert code == 0
    assert (sim_dir / "trace.csv").exists()


def test_cli_sweep(tmp_path):
    out = tmp_path / "sweep"
    code = main(["sweep", "--out", str(out), "--n-devices", "60",
                 "--n-steps", "40", "--tau-tcl-list", "3",
                 "--tau-ba-list", "3,6"])
    assert code == 0
    assert (out / "sweep.csv").exists()
