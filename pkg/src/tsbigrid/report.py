"""Result emission: delimited text plus rendered figures.

Every command writes CSV files as the canonical output and, unless plotting
is disabled, a matplotlib figure next to each CSV.  Numeric cells use
Python's shortest round-trip float representation so re-ingesting a file
reproduces the solution bit for bit.
"""

from __future__ import annotations

import math
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def fmt(value) -> str:
    """Shortest round-trip cell formatting; floats via repr."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_csv(path):
    """(header, rows-of-strings) for round-trip checks and re-ingestion."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]


def _save(fig, path) -> None:
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)


# ---------------------------------------------------------------------------
# figure renderers
# ---------------------------------------------------------------------------

def render_voltage_profile(rows, path) -> None:
    """Scatter of |V| per node index, colored by phase.

    ``rows`` are (node, phase, v_re, v_im, v_mag, angle_deg) tuples.
    """
    fig, ax = plt.subplots(figsize=(7.0, 3.6))
    colors = {"a": "tab:blue", "b": "tab:orange", "c": "tab:green"}
    by_phase: dict[str, list] = {"a": [], "b": [], "c": []}
    for idx, row in enumerate(rows):
        by_phase[row[1]].append((idx, row[4]))
    for ph, pts in by_phase.items():
        if pts:
            xs, ys = zip(*pts)
            ax.scatter(xs, ys, s=8, color=colors[ph], label=f"phase {ph}")
    ax.axhline(1.0, color="gray", lw=0.6, ls="--")
    ax.set_xlabel("node/phase index")
    ax.set_ylabel("|V| (p.u.)")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("voltage magnitudes")
    _save(fig, path)


def render_loss_breakdown(rows, path) -> None:
    """Stacked loss bars per inverter from the inverters.csv rows."""
    if not rows:
        return
    labels = [r[0] for r in rows]
    comps = np.array([[r[3], r[4], r[5], r[6], r[7], r[8]] for r in rows],
                     dtype=float)
    names = ["FSC sw", "FSC cond", "SSC sw", "SSC rr", "SSC cond", "LCL"]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.7 * len(labels)), 3.6))
    bottom = np.zeros(len(labels))
    for j, name in enumerate(names):
        ax.bar(labels, comps[:, j], bottom=bottom, label=name)
        bottom += comps[:, j]
    ax.set_ylabel("loss (W)")
    ax.legend(fontsize=7)
    ax.set_title("inverter loss breakdown")
    plt.setp(ax.get_xticklabels(), rotation=30, ha="right", fontsize=7)
    _save(fig, path)


def render_convergence(trace, path) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    its = [t[0] for t in trace]
    res = [t[1] for t in trace]
    ax.semilogy(its, res, marker="o", ms=3)
    ax.set_xlabel("iteration")
    ax.set_ylabel("residual inf-norm")
    ax.set_title("Newton convergence")
    _save(fig, path)


def render_efficiency_surface(p_grid, q_grid, eta, path) -> None:
    fig, ax = plt.subplots(figsize=(6.2, 4.2))
    pm = ax.pcolormesh(np.asarray(p_grid) / 1e3, np.asarray(q_grid) / 1e3,
                       np.asarray(eta).T * 100.0, shading="auto",
                       cmap="viridis")
    fig.colorbar(pm, ax=ax, label="efficiency (%)")
    ax.set_xlabel("active power (kW)")
    ax.set_ylabel("reactive power (kvar)")
    ax.set_title("converter efficiency surface")
    _save(fig, path)


def render_efficiency_cut(p_vals, eta_p, path) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.plot(np.asarray(p_vals) / 1e3, np.asarray(eta_p) * 100.0, marker=".")
    ax.set_xlabel("active power (kW)")
    ax.set_ylabel("efficiency (%)")
    ax.set_title("efficiency at Q = 0")
    _save(fig, path)


def render_td_comparison(metric_names, td_vals, model_vals, path) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    x = np.arange(len(metric_names))
    ax.bar(x - 0.18, td_vals, width=0.36, label="time domain")
    ax.bar(x + 0.18, model_vals, width=0.36, label="steady state")
    ax.set_xticks(x)
    ax.set_xticklabels(metric_names, fontsize=8)
    ax.legend(fontsize=8)
    ax.set_title("device metrics: switching benchmark vs steady-state model")
    _save(fig, path)


def render_td_waveforms(wave, path, cycles: float = 2.0) -> None:
    n = min(wave.i1.size - 1, int(round(cycles / (wave.ref_freq * wave.dt))))
    t = np.arange(n) * wave.dt * 1e3
    fig, axes = plt.subplots(3, 1, figsize=(7.0, 5.4), sharex=True)
    axes[0].plot(t, wave.vout_int[-n:] / wave.dt, lw=0.4)
    axes[0].set_ylabel("v_out (V)")
    axes[1].plot(t, wave.i1[-n - 1:-1], lw=0.6)
    axes[1].set_ylabel("i_L1 (A)")
    axes[2].plot(t, wave.i2[-n - 1:-1], lw=0.6)
    axes[2].set_ylabel("i_L2 (A)")
    axes[2].set_xlabel("time (ms)")
    fig.suptitle("switching waveforms (final cycles)")
    _save(fig, path)


def render_pv_curve(vs, is_, mpp, path) -> None:
    vs = np.asarray(vs)
    is_ = np.asarray(is_)
    fig, ax1 = plt.subplots(figsize=(5.6, 3.8))
    ax1.plot(vs, is_, color="tab:blue", label="I-V")
    ax1.set_xlabel("voltage (V)")
    ax1.set_ylabel("current (A)", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(vs, vs * is_, color="tab:red", label="P-V")
    ax2.set_ylabel("power (W)", color="tab:red")
    ax2.plot([mpp.v_mp], [mpp.p_mp], "k*", ms=12)
    ax1.set_title(f"PV curves, MPP at {mpp.v_mp:.2f} V / {mpp.p_mp:.1f} W")
    _save(fig, path)


def render_dispatch(schedules, price, load, pv, path) -> None:
    """Overlay inverter schedules (dict name -> Schedule) on the day shape."""
    steps = np.arange(len(price))
    fig, axes = plt.subplots(3, 1, figsize=(7.0, 6.4), sharex=True)
    axes[0].step(steps, price, where="mid", color="tab:gray")
    axes[0].set_ylabel("price (/kWh)")
    for name, sch in schedules.items():
        axes[1].step(steps, sch.p_inv / 1e3, where="mid", label=name)
        axes[2].plot(steps, sch.soc, label=name)
    axes[1].step(steps, (load - pv) / 1e3, where="mid", color="tab:gray",
                 ls="--", label="net load")
    axes[1].set_ylabel("power (kW)")
    axes[1].legend(fontsize=8)
    axes[2].set_ylabel("SOC")
    axes[2].set_xlabel("step")
    axes[2].legend(fontsize=8)
    _save(fig, path)


def render_voltvar_curve(spec, path) -> None:
    from .control import voltvar_piecewise, voltvar_q
    vs = np.linspace(spec.v1 - 0.04, spec.v4 + 0.04, 600)
    fig, ax = plt.subplots(figsize=(5.4, 3.4))
    ax.plot(vs, [voltvar_piecewise(spec, v) for v in vs], "--", lw=1.0,
            label="piecewise")
    ax.plot(vs, [voltvar_q(spec, v) for v in vs], lw=1.2, label="smooth")
    ax.set_xlabel("|V| (p.u.)")
    ax.set_ylabel("Q (var)")
    ax.legend(fontsize=8)
    ax.set_title("volt-var curve")
    _save(fig, path)


def render_jacobian_check(errs, path) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.semilogy(np.asarray(errs), marker=".", ls="none")
    ax.axhline(1e-5, color="tab:red", lw=0.8, ls="--", label="1e-5 gate")
    ax.set_xlabel("random state index")
    ax.set_ylabel("max relative error")
    ax.legend(fontsize=8)
    ax.set_title("analytic vs finite-difference Jacobian")
    _save(fig, path)


def ensure_outdir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path
