"""SVG figures derived purely from run artifacts."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def reference_vs_achieved(path, trace, plan, t_s_min: float) -> None:
    hours = np.arange(len(trace)) * t_s_min / 60.0
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.plot(hours, plan.ba_signal_kw / 1e3, color="0.7", lw=0.8,
            label="requested (BA)")
    ax.plot(hours, plan.reference_kw / 1e3, color="tab:blue", lw=1.2,
            label="planned reference")
    ax.plot(hours, trace.y_kw / 1e3, color="tab:red", lw=0.8, ls="--",
            label="achieved")
    ax.set_xlabel("time (h)")
    ax.set_ylabel("power deviation (MW)")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def interval_histogram(path, trace, tau_tcl: int) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    if trace.switch_intervals:
        durations = np.array(sorted(trace.switch_intervals))
        counts = np.array([trace.switch_intervals[d] for d in durations])
        ax.bar(durations * trace.t_s_min, counts,
               width=0.9 * trace.t_s_min, color="tab:blue")
    ax.axvline(tau_tcl * trace.t_s_min, color="red", ls="--",
               label="lockout length")
    ax.set_xlabel("time between switches (min)")
    ax.set_ylabel("count")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def sweep_curves(path, results, t_s_min: float) -> None:
    ok = [r for r in results if r.get("ok")]
    if not ok:
        return
    fig, (ax_s, ax_d) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    tcl_values = sorted({r["tau_tcl"] for r in ok})
    for tcl in tcl_values:
        cells = sorted((r["tau_ba"], r) for r in ok if r["tau_tcl"] == tcl)
        ba = [b * t_s_min for b, _ in cells]
        ax_s.plot(ba, [r["s_tau"] for _, r in cells], "o-",
                  label=f"tau_tcl = {tcl * t_s_min:g} min")
        ax_d.plot(ba, [r["d_tau"] for _, r in cells], "o-")
    ax_s.set_ylabel("switches per device")
    ax_d.set_ylabel("capacity exceedances")
    ax_d.set_xlabel("planning lockout tau_ba (min)")
    ax_s.legend(fontsize=8)
    ax_s.grid(alpha=0.3)
    ax_d.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
