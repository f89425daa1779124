"""Command-line driver.

Subcommands: pf, sweep-eff, validate-td, mpp, dispatch, check-jacobian.
Each writes CSV results into --out and, unless --no-plot is given, a figure
next to each CSV.  Exit codes: 0 ok, 2 input error, 3 solver
non-convergence (artifacts still written), 4 post-check invariant violation.
Set TSBI_LOG=debug|info|warning for logging verbosity.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import logging
import math
import os
import sys

import numpy as np

from . import control, dermodels, dispatch, fixtures, report, scenario, solver, tdbench, tsbi

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOCONV = 3
EXIT_INVARIANT = 4

log = logging.getLogger("tsbigrid")


def _setup_logging() -> None:
    level = os.environ.get("TSBI_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--no-plot", action="store_true",
                   help="skip figure rendering")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for sweep commands")


def _solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--tol", type=float, help="residual inf-norm tolerance")
    p.add_argument("--max-iter", type=int, help="Newton iteration cap")
    p.add_argument("--eps-sgn", type=float,
                   help="override current-sign smoothing (A^2)")
    p.add_argument("--eps-vv", type=float,
                   help="override volt-var smoothing (p.u.^2)")


def _apply_overrides(scn: scenario.Scenario, args) -> scenario.Scenario:
    opts = scn.solver
    if args.tol is not None:
        opts = dataclasses.replace(opts, tol_inf=args.tol)
    if args.max_iter is not None:
        opts = dataclasses.replace(opts, max_iter=args.max_iter)
    invs = []
    for inv in scn.inverters:
        params, ctrl = inv.params, inv.ctrl
        if args.eps_sgn is not None:
            params = dataclasses.replace(params, eps_sgn=args.eps_sgn)
        if args.eps_vv is not None and isinstance(ctrl.q_law, control.VoltVar):
            ctrl = control.ControlSpec(
                ctrl.p_law, dataclasses.replace(ctrl.q_law, eps_vv=args.eps_vv))
        invs.append(dataclasses.replace(inv, params=params, ctrl=ctrl))
    return scenario.Scenario(base=scn.base, nodes=scn.nodes,
                             branches=scn.branches, loads=scn.loads,
                             inverters=invs, solver=opts)


# ---------------------------------------------------------------------------
# pf
# ---------------------------------------------------------------------------

def cmd_pf(args) -> int:
    try:
        scn = _apply_overrides(scenario.load_scenario(args.scenario), args)
        net = scn.network()
    except (scenario.ScenarioError, OSError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    rep = solver.solve_power_flow(net, scn.inverters, scn.solver)
    out = report.ensure_outdir(args.out)
    x = rep.state

    v_rows = []
    for k, (node, ph) in enumerate(net.slots):
        vr, vi = x[2 * k], x[2 * k + 1]
        v_rows.append((node, ph, vr, vi, math.hypot(vr, vi),
                       math.degrees(math.atan2(vi, vr))))
    report.write_csv(os.path.join(out, "voltages.csv"),
                     ["node", "phase", "v_re_pu", "v_im_pu", "v_mag_pu",
                      "angle_deg"], v_rows)

    system = solver.CoupledSystem(net, scn.inverters)
    inv_rows = []
    audit_ok = True
    for k, inv in enumerate(scn.inverters):
        st = system.inverter_state(x, k)
        v_t2 = system.node_voltage_si(x, k)
        lb = tsbi.loss_breakdown(inv.params, st)
        p1, p2 = tsbi.terminal_powers(st, v_t2)
        eta = _direction_eta(p1, p2)
        inv_rows.append((inv.id, p1, p2, *lb.as_tuple(), eta))
        if rep.converged:
            if abs(p1 - p2 - lb.total) > 1e-6 * max(1.0, abs(p1)):
                audit_ok = False
            if min(lb.as_tuple()) < -1e-9:
                audit_ok = False
    report.write_csv(os.path.join(out, "inverters.csv"),
                     ["inverter_id", "p_t1_w", "p_t2_w", "fsc_sw_w",
                      "fsc_cond_w", "ssc_sw_w", "ssc_rr_w", "ssc_cond_w",
                      "lcl_w", "eta"], inv_rows)
    report.write_csv(os.path.join(out, "trace.csv"),
                     ["iter", "residual_inf", "step_norm", "damping"],
                     rep.trace)

    if not args.no_plot:
        report.render_voltage_profile(v_rows, os.path.join(out, "voltages.png"))
        report.render_convergence(rep.trace, os.path.join(out, "trace.png"))
        if inv_rows:
            report.render_loss_breakdown(inv_rows,
                                         os.path.join(out, "inverters.png"))

    print(f"pf: converged={rep.converged} iterations={rep.iterations} "
          f"residual={rep.residual_history[-1]:.3e}")
    if not rep.converged:
        print(f"pf: {rep.message}", file=sys.stderr)
        return EXIT_NOCONV
    if not audit_ok:
        print("pf: energy audit violated in post-checks", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def _direction_eta(p_t1: float, p_t2: float) -> float:
    if p_t1 > 0.0 and p_t2 > 0.0:
        return p_t2 / p_t1
    if p_t1 < 0.0 and p_t2 < 0.0:
        return p_t1 / p_t2
    return 0.0


# ---------------------------------------------------------------------------
# sweep-eff
# ---------------------------------------------------------------------------

def _sweep_point(params, base, p, q):
    der = dermodels.BatterySource(
        dermodels.BatteryParams(c_batt=1e9, v_oc_nom=params.v_dc), soc=0.5)
    ctrl = control.ControlSpec(control.ConstantP(p), control.ConstantQ(q))
    try:
        st, rep = solver.solve_single_inverter(params, der, ctrl, base)
        if not rep.converged:
            return None
    except Exception:
        return None
    lb = tsbi.loss_breakdown(params, st)
    v_t2 = solver.Phasor(base.v_base, 0.0)
    p1, p2 = tsbi.terminal_powers(st, v_t2)
    return (p, q, _direction_eta(p1, p2), p1, lb.total, *lb.as_tuple())


def cmd_sweep_eff(args) -> int:
    if args.np < 2 or args.nq < 1:
        print("error: need at least a 2x1 grid", file=sys.stderr)
        return EXIT_INPUT
    params = tsbi.default_tsbi_params(v_dc=args.v_dc, s_rated=args.s_rated)
    if args.eps_sgn is not None:
        params = dataclasses.replace(params, eps_sgn=args.eps_sgn)
    base = solver.PerUnitBase(s_base=args.s_rated, v_base=args.v_grid)
    p_lo = args.p_min if args.p_min is not None else 0.02 * args.s_rated
    p_hi = args.p_max if args.p_max is not None else args.s_rated
    q_hi = args.q_max if args.q_max is not None else 0.25 * args.s_rated
    q_lo = args.q_min if args.q_min is not None else -q_hi
    if p_lo >= p_hi or q_lo > q_hi:
        print("error: empty sweep range", file=sys.stderr)
        return EXIT_INPUT
    p_vals = np.linspace(p_lo, p_hi, args.np)
    q_vals = np.linspace(q_lo, q_hi, args.nq)

    points = [(p, q) for p in p_vals for q in q_vals]
    if args.threads > 1:
        with concurrent.futures.ThreadPoolExecutor(args.threads) as pool:
            rows = list(pool.map(
                lambda pq: _sweep_point(params, base, pq[0], pq[1]), points))
    else:
        rows = [_sweep_point(params, base, p, q) for p, q in points]

    failed = sum(r is None for r in rows)
    out = report.ensure_outdir(args.out)
    header = ["p_w", "q_var", "eta", "p_dc_w", "loss_w", "fsc_sw_w",
              "fsc_cond_w", "ssc_sw_w", "ssc_rr_w", "ssc_cond_w", "lcl_w"]
    csv_rows = [r if r is not None else (p, q) + (math.nan,) * 9
                for r, (p, q) in zip(rows, points)]
    report.write_csv(os.path.join(out, "efficiency.csv"), header, csv_rows)

    if not args.no_plot:
        eta = np.array([r[2] if r else np.nan for r in rows]).reshape(
            args.np, args.nq)
        report.render_efficiency_surface(
            p_vals, q_vals, eta, os.path.join(out, "efficiency.png"))
        j0 = int(np.argmin(np.abs(q_vals)))
        report.render_efficiency_cut(
            p_vals, eta[:, j0], os.path.join(out, "efficiency_cut.png"))

    print(f"sweep-eff: {len(points)} points, {failed} failed")
    return EXIT_NOCONV if failed else EXIT_OK


# ---------------------------------------------------------------------------
# validate-td
# ---------------------------------------------------------------------------

def cmd_validate_td(args) -> int:
    if args.dt <= 0 or args.dt > 2e-6 or args.duration <= args.record_from:
        print("error: invalid time-domain configuration", file=sys.stderr)
        return EXIT_INPUT
    params = tsbi.default_tsbi_params(v_dc=args.v_dc)
    ssc, lcl = params.ssc, params.lcl
    v_grid = complex(args.v_grid, 0.0)

    m_r, m_i = tdbench.find_modulation_for_power(
        ssc, lcl, args.v_dc, v_grid, args.p_out, 0.0)
    m = math.hypot(m_r, m_i)
    theta = math.atan2(m_i, m_r)
    cfg = tdbench.TdConfig(v_dc=args.v_dc, m=m, theta=theta,
                           load=tdbench.GridLoad(args.v_grid, 0.0),
                           dt=args.dt, carrier_freq=args.carrier,
                           ref_freq=args.ref_freq, duration=args.duration,
                           record_from=args.record_from)
    if not args.no_calibrate:
        cfg = tdbench.calibrate_theta_for_power(cfg, ssc, lcl, args.p_out)
    m_r = cfg.m * math.cos(cfg.theta)
    m_i = cfg.m * math.sin(cfg.theta)
    op = tdbench.phasor_operating_point(ssc, lcl, args.v_dc, m_r, m_i, v_grid)
    wave = tdbench.simulate(cfg, ssc, lcl,
                            tdbench.initial_state_from_phasors(op, lcl))
    td = tdbench.extract_metrics(wave, args.window)
    model = tdbench.steady_state_metrics(ssc, lcl, args.v_dc, m_r, m_i, v_grid)
    errors = tdbench.compare_with_steady_state(td, model)

    out = report.ensure_outdir(args.out)
    names = list(tdbench.TdMetrics._fields)
    rows = [("model", *[getattr(model, n) for n in names]),
            ("benchmark", *[getattr(td, n) for n in names]),
            ("error_pct", *[errors[n] for n in names])]
    report.write_csv(os.path.join(out, "td_validation.csv"),
                     ["source"] + names, rows)
    audit = tdbench.energy_audit(wave, args.window)
    report.write_csv(os.path.join(out, "td_energy_audit.csv"),
                     list(audit.keys()), [list(audit.values())])
    if args.dump_waveforms:
        n = int(round(args.dump_cycles / (cfg.ref_freq * cfg.dt)))
        t0 = (wave.i1.size - 1 - n) * cfg.dt
        wf_rows = [(t0 + j * cfg.dt, wave.i1[-n - 1 + j], wave.i2[-n - 1 + j],
                    wave.v_c[-n - 1 + j], int(wave.s_a[-n - 1 + j]),
                    int(wave.s_b[-n - 1 + j])) for j in range(n)]
        report.write_csv(os.path.join(out, "td_waveforms.csv"),
                         ["t_s", "i_l1_a", "i_l2_a", "v_c_v", "s_a", "s_b"],
                         wf_rows)
    if not args.no_plot:
        device = names[:5]
        report.render_td_comparison(
            device, [getattr(td, n) for n in device],
            [getattr(model, n) for n in device],
            os.path.join(out, "td_validation.png"))
        report.render_td_waveforms(wave, os.path.join(out, "td_waveforms.png"))

    worst = max(errors[n] for n in names[:5])
    print(f"validate-td: worst device-metric error {worst:.2f}% "
          f"(p_out td {td.p_out_avg:.1f} W)")
    if worst > 5.0:
        print("validate-td: error above the 5% gate", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


# ---------------------------------------------------------------------------
# mpp
# ---------------------------------------------------------------------------

def cmd_mpp(args) -> int:
    try:
        if args.i_ph is not None:
            pv = dermodels.PvParams(i_ph=args.i_ph, i_0=args.i_0,
                                    r_s=args.r_s, r_sh=args.r_sh,
                                    n_d=args.n_d, n_s=args.n_s)
        else:
            pv = dermodels.lg400_pv()
    except (TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    mpp = dermodels.solve_mpp(pv)
    out = report.ensure_outdir(args.out)
    report.write_csv(os.path.join(out, "mpp.csv"),
                     ["v_mp_v", "i_mp_a", "p_mp_w", "converged", "iterations"],
                     [(mpp.v_mp, mpp.i_mp, mpp.p_mp, mpp.converged,
                       mpp.iterations)])
    voc = dermodels.pv_open_circuit_voltage(pv)
    vs = np.linspace(0.0, voc, 400)
    is_ = [dermodels.pv_current(pv, v) for v in vs]
    report.write_csv(os.path.join(out, "pv_curve.csv"),
                     ["v_v", "i_a", "p_w"],
                     [(v, i, v * i) for v, i in zip(vs, is_)])
    if not args.no_plot:
        report.render_pv_curve(vs, is_, mpp, os.path.join(out, "pv_curve.png"))
    print(f"mpp: V={mpp.v_mp:.3f} V I={mpp.i_mp:.3f} A P={mpp.p_mp:.2f} W")
    return EXIT_OK if mpp.converged else EXIT_NOCONV


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def cmd_dispatch(args) -> int:
    params = tsbi.default_tsbi_params(v_dc=args.v_dc, s_rated=args.s_rated)
    schedules = {}
    models = ("tsbi", "ce_cs") if args.model == "both" else (args.model,)
    eta_c, eta_d = args.eta_c, args.eta_d
    if "ce_cs" in models and (eta_c is None or eta_d is None):
        grid = np.linspace(-args.s_rated / 2.3, args.s_rated / 2.3, 15)
        eta_c, eta_d = dispatch.effective_weighted_efficiency(params, grid)
    scn0 = None
    for name in models:
        model = (dispatch.TsbiDispatchModel(params) if name == "tsbi"
                 else dispatch.CeCsModel(eta_c, eta_d, args.eps_cs))
        scn = dispatch.two_tier_day_fixture(model)
        scn0 = scn
        schedules[name] = dispatch.solve_dispatch(scn)

    out = report.ensure_outdir(args.out)
    soc_ok = True
    for name, sch in schedules.items():
        rows = []
        for k in range(scn0.horizon):
            cost_k = (scn0.price[k]
                      * max(sch.grid[k], 0.0) * scn0.dt / dispatch.J_PER_KWH)
            rows.append((k, scn0.price[k], scn0.load[k], scn0.pv[k],
                         sch.p_inv[k], sch.soc[k], sch.grid[k], cost_k))
        report.write_csv(os.path.join(out, f"schedule_{name}.csv"),
                         ["step", "price", "load_w", "pv_w", "p_inv_w",
                          "soc", "grid_w", "cost"], rows)
        print(f"dispatch[{name}]: cost={sch.objective:.4f} "
              f"iterations={sch.iterations} grad_norm={sch.gradient_norm:.2e}"
              + (f" ({sch.notes})" if sch.notes else ""))
        batt = scn0.battery
        if (sch.soc.min() < batt.soc_min - 1e-6
                or sch.soc.max() > batt.soc_max + 1e-6):
            soc_ok = False
    if not args.no_plot:
        report.render_dispatch(schedules, scn0.price, scn0.load, scn0.pv,
                               os.path.join(out, "dispatch.png"))
    if not soc_ok:
        print("dispatch: SOC bounds violated in post-checks", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


# ---------------------------------------------------------------------------
# check-jacobian
# ---------------------------------------------------------------------------

def cmd_check_jacobian(args) -> int:
    try:
        if args.scenario:
            scn = _apply_overrides(scenario.load_scenario(args.scenario), args)
        else:
            scn = fixtures.feeder4_scenario(voltvar=True)
        net = scn.network()
    except (scenario.ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    system = solver.CoupledSystem(net, scn.inverters)
    rep = solver.solve_power_flow(net, scn.inverters, scn.solver)
    rng = np.random.default_rng(args.seed)
    opts = solver.SolverOptions()
    errs = []
    for _ in range(args.n_states):
        xt = system.clamp(
            rep.state * (1.0 + 0.02 * rng.standard_normal(system.n)), opts)
        ja = system.jacobian(xt).toarray()
        jf = solver.finite_diff_jacobian(system.residual, xt, args.h)
        denom = np.maximum(np.maximum(np.abs(ja), np.abs(jf)), 1.0)
        errs.append(float(np.max(np.abs(ja - jf) / denom)))
    out = report.ensure_outdir(args.out)
    report.write_csv(os.path.join(out, "jacobian_check.csv"),
                     ["state", "max_rel_err"],
                     [(k, e) for k, e in enumerate(errs)])
    if not args.no_plot:
        report.render_jacobian_check(errs, os.path.join(out,
                                                        "jacobian_check.png"))
    worst = max(errs)
    print(f"check-jacobian: worst relative error {worst:.3e} "
          f"over {args.n_states} states")
    return EXIT_OK if worst < 1e-5 else EXIT_INVARIANT


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="tsbigrid",
        description="Loss-aware two-stage inverter grid studies")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pf", help="solve a scenario power flow")
    _common_flags(p)
    _solver_flags(p)
    p.set_defaults(func=cmd_pf)

    p = sub.add_parser("sweep-eff", help="efficiency over a (P, Q) grid")
    _common_flags(p)
    p.add_argument("--v-dc", type=float, default=400.0)
    p.add_argument("--v-grid", type=float, default=240.0)
    p.add_argument("--s-rated", type=float, default=10000.0)
    p.add_argument("--p-min", type=float)
    p.add_argument("--p-max", type=float)
    p.add_argument("--q-min", type=float)
    p.add_argument("--q-max", type=float)
    p.add_argument("--np", type=int, default=50)
    p.add_argument("--nq", type=int, default=21)
    p.add_argument("--eps-sgn", type=float)
    p.set_defaults(func=cmd_sweep_eff)

    p = sub.add_parser("validate-td",
                       help="switching benchmark vs steady-state formulas")
    _common_flags(p)
    p.add_argument("--p-out", type=float, default=1440.0)
    p.add_argument("--v-dc", type=float, default=400.0)
    p.add_argument("--v-grid", type=float, default=240.0)
    p.add_argument("--dt", type=float, default=1e-6)
    p.add_argument("--carrier", type=float, default=16e3)
    p.add_argument("--ref-freq", type=float, default=60.0)
    p.add_argument("--duration", type=float, default=0.5)
    p.add_argument("--record-from", type=float, default=0.1)
    p.add_argument("--window", type=int, default=12,
                   help="measurement window in fundamental cycles")
    p.add_argument("--no-calibrate", action="store_true",
                   help="skip the output-power angle calibration")
    p.add_argument("--dump-waveforms", action="store_true")
    p.add_argument("--dump-cycles", type=float, default=2.0)
    p.set_defaults(func=cmd_validate_td)

    p = sub.add_parser("mpp", help="maximum power point of a PV module")
    _common_flags(p)
    p.add_argument("--i-ph", type=float)
    p.add_argument("--i-0", type=float)
    p.add_argument("--r-s", type=float)
    p.add_argument("--r-sh", type=float)
    p.add_argument("--n-d", type=float)
    p.add_argument("--n-s", type=int)
    p.set_defaults(func=cmd_mpp)

    p = sub.add_parser("dispatch", help="battery schedule on the two-tier day")
    _common_flags(p)
    p.add_argument("--model", choices=("tsbi", "ce_cs", "both"),
                   default="both")
    p.add_argument("--v-dc", type=float, default=400.0)
    p.add_argument("--s-rated", type=float, default=11500.0)
    p.add_argument("--eta-c", type=float)
    p.add_argument("--eta-d", type=float)
    p.add_argument("--eps-cs", type=float, default=1.0)
    p.set_defaults(func=cmd_dispatch)

    p = sub.add_parser("check-jacobian",
                       help="analytic vs finite-difference Jacobian")
    _common_flags(p)
    _solver_flags(p)
    p.add_argument("--n-states", type=int, default=100)
    p.add_argument("--h", type=float, default=1e-7)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_jacobian)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except scenario.ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
