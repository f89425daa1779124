"""Scenario file ingestion and emission.

A scenario is a single strict-schema JSON document: per-unit bases, nodes,
branches, loads, inverters (DER + control + converter parameters) and solver
options.  Unknown keys are rejected everywhere so a misspelled physics
parameter fails loudly instead of silently keeping a default.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import control, dermodels, tsbi
from .netmodel import (
    BranchSpec,
    LoadSpec,
    NetworkModel,
    NodeSpec,
    PerUnitBase,
    Phasor,
)
from .solver import InverterUnit, SolverOptions


class ScenarioError(ValueError):
    """Malformed scenario document."""


@dataclass
class Scenario:
    base: PerUnitBase
    nodes: list[NodeSpec]
    branches: list[BranchSpec]
    loads: list[LoadSpec]
    inverters: list[InverterUnit]
    solver: SolverOptions = field(default_factory=SolverOptions)

    def network(self) -> NetworkModel:
        return NetworkModel(base=self.base, nodes=tuple(self.nodes),
                            branches=tuple(self.branches),
                            loads=tuple(self.loads))


def _check_keys(d: dict, allowed: set[str], required: set[str], ctx: str):
    if not isinstance(d, dict):
        raise ScenarioError(f"{ctx}: expected an object")
    unknown = set(d) - allowed
    if unknown:
        raise ScenarioError(f"{ctx}: unknown fields {sorted(unknown)}")
    missing = required - set(d)
    if missing:
        raise ScenarioError(f"{ctx}: missing fields {sorted(missing)}")


def _num(d, key, ctx, default=None):
    if key not in d:
        if default is None:
            raise ScenarioError(f"{ctx}: missing numeric field {key!r}")
        return default
    v = d[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool) \
            or not math.isfinite(float(v)):
        raise ScenarioError(f"{ctx}: field {key!r} must be a finite number")
    return float(v)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def parse_scenario(doc: dict) -> Scenario:
    _check_keys(doc, {"base", "nodes", "branches", "loads", "inverters",
                      "solver"}, {"base", "nodes"}, "scenario")
    base = _parse_base(doc["base"])
    nodes = [_parse_node(n, i) for i, n in enumerate(doc["nodes"])]
    branches = [_parse_branch(b, i) for i, b in enumerate(doc.get("branches", []))]
    loads = [_parse_load(l, i) for i, l in enumerate(doc.get("loads", []))]
    inverters = [_parse_inverter(v, i) for i, v in
                 enumerate(doc.get("inverters", []))]
    solver = _parse_solver(doc.get("solver", {}))
    scenario = Scenario(base=base, nodes=nodes, branches=branches,
                        loads=loads, inverters=inverters, solver=solver)
    try:
        scenario.network()  # referential integrity check
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    node_keys = {(n.id, ph) for n in nodes for ph in n.phases}
    for inv in inverters:
        if (inv.node, inv.phase) not in node_keys:
            raise ScenarioError(
                f"inverter {inv.id}: attached to unknown {inv.node}:{inv.phase}")
    return scenario


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"invalid JSON: {exc}") from exc
    return parse_scenario(doc)


def _parse_base(d) -> PerUnitBase:
    _check_keys(d, {"s_base", "v_base", "freq"}, {"s_base", "v_base"}, "base")
    return PerUnitBase(s_base=_num(d, "s_base", "base"),
                       v_base=_num(d, "v_base", "base"),
                       freq=_num(d, "freq", "base", 60.0))


def _parse_node(d, i) -> NodeSpec:
    ctx = f"nodes[{i}]"
    _check_keys(d, {"id", "phases", "kind", "slack_voltage"}, {"id"}, ctx)
    kind = d.get("kind", "load")
    sv = ()
    if "slack_voltage" in d:
        sv = tuple(Phasor(float(p[0]), float(p[1])) for p in d["slack_voltage"])
    try:
        return NodeSpec(id=str(d["id"]), phases=d.get("phases", "abc"),
                        kind=kind, slack_voltage=sv)
    except ValueError as exc:
        raise ScenarioError(f"{ctx}: {exc}") from exc


def _parse_matrix(v, ctx) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3, 3):
        raise ScenarioError(f"{ctx}: expected a 3x3 matrix")
    return arr


def _parse_branch(d, i) -> BranchSpec:
    ctx = f"branches[{i}]"
    _check_keys(d, {"from", "to", "g", "b"}, {"from", "to", "g", "b"}, ctx)
    try:
        return BranchSpec(from_node=str(d["from"]), to_node=str(d["to"]),
                          g_block=_parse_matrix(d["g"], ctx),
                          b_block=_parse_matrix(d["b"], ctx))
    except ValueError as exc:
        raise ScenarioError(f"{ctx}: {exc}") from exc


def _parse_load(d, i) -> LoadSpec:
    ctx = f"loads[{i}]"
    _check_keys(d, {"node", "phase", "p", "q"}, {"node", "phase", "p"}, ctx)
    return LoadSpec(node=str(d["node"]), phase=str(d["phase"]),
                    p=_num(d, "p", ctx), q=_num(d, "q", ctx, 0.0))


def _parse_timing(d, ctx) -> tsbi.SwitchTiming:
    _check_keys(d, {"t_delay_on", "t_rise", "t_delay_off", "t_fall"},
                {"t_delay_on", "t_rise", "t_delay_off", "t_fall"}, ctx)
    return tsbi.SwitchTiming(_num(d, "t_delay_on", ctx), _num(d, "t_rise", ctx),
                             _num(d, "t_delay_off", ctx), _num(d, "t_fall", ctx))


def _parse_tsbi(d, ctx) -> tsbi.TsbiParams:
    _check_keys(d, {"v_dc", "s_rated", "eps_sgn", "eps_mag",
                    "fsc", "ssc", "lcl", "freq"}, {"v_dc", "s_rated"}, ctx)
    freq = _num(d, "freq", ctx, 60.0)
    params = tsbi.default_tsbi_params(v_dc=_num(d, "v_dc", ctx),
                                      s_rated=_num(d, "s_rated", ctx),
                                      freq=freq)
    fsc, ssc, lcl = params.fsc, params.ssc, params.lcl
    if "fsc" in d:
        f = d["fsc"]
        fctx = f"{ctx}.fsc"
        _check_keys(f, {"v_t0", "r_t", "r_l", "timing", "f_sw"}, set(), fctx)
        fsc = tsbi.FscParams(
            v_t0=_num(f, "v_t0", fctx, fsc.v_t0),
            r_t=_num(f, "r_t", fctx, fsc.r_t),
            r_l=_num(f, "r_l", fctx, fsc.r_l),
            timing=_parse_timing(f["timing"], fctx) if "timing" in f else fsc.timing,
            f_sw=_num(f, "f_sw", fctx, fsc.f_sw))
    if "ssc" in d:
        s = d["ssc"]
        sctx = f"{ctx}.ssc"
        _check_keys(s, {"v_t", "r_t", "v_d", "r_d", "timing", "t_doff",
                        "f_sw"}, set(), sctx)
        ssc = tsbi.SscParams(
            v_t=_num(s, "v_t", sctx, ssc.v_t),
            r_t=_num(s, "r_t", sctx, ssc.r_t),
            v_d=_num(s, "v_d", sctx, ssc.v_d),
            r_d=_num(s, "r_d", sctx, ssc.r_d),
            timing=_parse_timing(s["timing"], sctx) if "timing" in s else ssc.timing,
            t_doff=_num(s, "t_doff", sctx, ssc.t_doff),
            f_sw=_num(s, "f_sw", sctx, ssc.f_sw))
    if "lcl" in d:
        l = d["lcl"]
        lctx = f"{ctx}.lcl"
        _check_keys(l, {"l1", "l2", "c", "r_damp", "r1", "r2"}, set(), lctx)
        lcl = tsbi.LclParams(
            l1=_num(l, "l1", lctx, lcl.l1), l2=_num(l, "l2", lctx, lcl.l2),
            c=_num(l, "c", lctx, lcl.c),
            r_damp=_num(l, "r_damp", lctx, lcl.r_damp),
            r1=_num(l, "r1", lctx, lcl.r1), r2=_num(l, "r2", lctx, lcl.r2),
            omega=2.0 * math.pi * freq)
    try:
        return tsbi.TsbiParams(
            fsc=fsc, ssc=ssc, lcl=lcl,
            v_dc=_num(d, "v_dc", ctx), s_rated=_num(d, "s_rated", ctx),
            eps_sgn=_num(d, "eps_sgn", ctx, tsbi.DEFAULT_EPS_SGN),
            eps_mag=_num(d, "eps_mag", ctx, tsbi.DEFAULT_EPS_MAG))
    except ValueError as exc:
        raise ScenarioError(f"{ctx}: {exc}") from exc


DER_PRESETS = {
    "powerwall3": dermodels.powerwall3_battery,
    "lg400": dermodels.lg400_pv,
}


def _parse_der(d, ctx):
    _check_keys(d, {"kind", "preset", "soc", "params"}, {"kind"}, ctx)
    if "preset" in d and "params" in d:
        raise ScenarioError(f"{ctx}: give either 'preset' or 'params', not both")
    kind = d["kind"]
    if kind == "battery":
        if "preset" in d:
            if d["preset"] != "powerwall3":
                raise ScenarioError(f"{ctx}: unknown battery preset {d['preset']!r}")
            params = dermodels.powerwall3_battery()
        elif "params" in d:
            p = d["params"]
            pctx = f"{ctx}.params"
            _check_keys(p, {"c_batt", "v_oc_nom", "r_int", "soc_min",
                            "soc_max", "i_max", "v_oc_slope"},
                        {"c_batt", "v_oc_nom"}, pctx)
            params = dermodels.BatteryParams(
                c_batt=_num(p, "c_batt", pctx),
                v_oc_nom=_num(p, "v_oc_nom", pctx),
                r_int=_num(p, "r_int", pctx, 0.0),
                soc_min=_num(p, "soc_min", pctx, 0.0),
                soc_max=_num(p, "soc_max", pctx, 1.0),
                i_max=_num(p, "i_max", pctx, math.inf),
                v_oc_slope=_num(p, "v_oc_slope", pctx, 0.0))
        else:
            raise ScenarioError(f"{ctx}: battery needs 'preset' or 'params'")
        try:
            return dermodels.BatterySource(params, soc=_num(d, "soc", ctx, 0.5))
        except ValueError as exc:
            raise ScenarioError(f"{ctx}: {exc}") from exc
    if kind == "pv":
        if "soc" in d:
            raise ScenarioError(f"{ctx}: 'soc' is a battery field")
        if "preset" in d:
            if d["preset"] != "lg400":
                raise ScenarioError(f"{ctx}: unknown PV preset {d['preset']!r}")
            params = dermodels.lg400_pv()
        elif "params" in d:
            p = d["params"]
            pctx = f"{ctx}.params"
            _check_keys(p, {"i_ph", "i_0", "r_s", "r_sh", "n_d", "n_s", "v_t"},
                        {"i_ph", "i_0", "r_s", "r_sh", "n_d", "n_s"}, pctx)
            params = dermodels.PvParams(
                i_ph=_num(p, "i_ph", pctx), i_0=_num(p, "i_0", pctx),
                r_s=_num(p, "r_s", pctx), r_sh=_num(p, "r_sh", pctx),
                n_d=_num(p, "n_d", pctx), n_s=int(p["n_s"]),
                v_t=_num(p, "v_t", pctx, 0.025693))
        else:
            raise ScenarioError(f"{ctx}: pv needs 'preset' or 'params'")
        return dermodels.PvSource(params)
    raise ScenarioError(f"{ctx}: unknown DER kind {kind!r}")


def _parse_control(d, ctx, s_rated: float) -> control.ControlSpec:
    _check_keys(d, {"p", "q"}, {"p", "q"}, ctx)
    p = d["p"]
    pctx = f"{ctx}.p"
    _check_keys(p, {"law", "p_set"}, {"law"}, pctx)
    if p["law"] == "constant_p":
        p_law = control.ConstantP(_num(p, "p_set", pctx))
    elif p["law"] == "mppt":
        p_law = control.Mppt()
    else:
        raise ScenarioError(f"{pctx}: unknown law {p['law']!r}")

    q = d["q"]
    qctx = f"{ctx}.q"
    _check_keys(q, {"law", "q_set", "pf", "sign", "v1", "v2", "v3", "v4",
                    "q_max", "q_min", "eps_vv"}, {"law"}, qctx)
    try:
        if q["law"] == "constant_q":
            q_law = control.ConstantQ(_num(q, "q_set", qctx))
        elif q["law"] == "constant_pf":
            q_law = control.ConstantPF(_num(q, "pf", qctx),
                                       q.get("sign", "lagging"))
        elif q["law"] == "volt_var":
            default = control.default_voltvar(s_rated)
            q_max = _num(q, "q_max", qctx, default.q_max)
            q_law = control.VoltVar(
                v1=_num(q, "v1", qctx, default.v1),
                v2=_num(q, "v2", qctx, default.v2),
                v3=_num(q, "v3", qctx, default.v3),
                v4=_num(q, "v4", qctx, default.v4),
                q_max=q_max,
                q_min=_num(q, "q_min", qctx, -q_max),
                eps_vv=_num(q, "eps_vv", qctx, default.eps_vv))
        else:
            raise ScenarioError(f"{qctx}: unknown law {q['law']!r}")
    except ValueError as exc:
        raise ScenarioError(f"{qctx}: {exc}") from exc
    return control.ControlSpec(p_law, q_law)


def _parse_inverter(d, i) -> InverterUnit:
    ctx = f"inverters[{i}]"
    _check_keys(d, {"id", "node", "phase", "der", "control", "tsbi"},
                {"id", "node", "phase", "der", "control", "tsbi"}, ctx)
    params = _parse_tsbi(d["tsbi"], f"{ctx}.tsbi")
    der = _parse_der(d["der"], f"{ctx}.der")
    ctrl = _parse_control(d["control"], f"{ctx}.control", params.s_rated)
    try:
        return InverterUnit(id=str(d["id"]), node=str(d["node"]),
                            phase=str(d["phase"]), params=params,
                            der=der, ctrl=ctrl)
    except ValueError as exc:
        raise ScenarioError(f"{ctx}: {exc}") from exc


def _parse_solver(d) -> SolverOptions:
    _check_keys(d, {"tol_inf", "max_iter", "damping", "step_limit_v",
                    "flat_start", "duty_min", "duty_max", "max_backtracks"},
                set(), "solver")
    try:
        return SolverOptions(
            tol_inf=_num(d, "tol_inf", "solver", 1e-8),
            max_iter=int(d.get("max_iter", 50)),
            damping=_num(d, "damping", "solver", 1.0),
            step_limit_v=_num(d, "step_limit_v", "solver", 0.2),
            flat_start=bool(d.get("flat_start", True)),
            duty_min=_num(d, "duty_min", "solver", 0.02),
            duty_max=_num(d, "duty_max", "solver", 0.98),
            max_backtracks=int(d.get("max_backtracks", 20)))
    except ValueError as exc:
        raise ScenarioError(f"solver: {exc}") from exc


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def scenario_to_dict(s: Scenario) -> dict:
    doc = {
        "base": {"s_base": s.base.s_base, "v_base": s.base.v_base,
                 "freq": s.base.freq},
        "nodes": [_node_dict(n) for n in s.nodes],
        "branches": [{"from": b.from_node, "to": b.to_node,
                      "g": b.g_block.tolist(), "b": b.b_block.tolist()}
                     for b in s.branches],
        "loads": [{"node": l.node, "phase": l.phase, "p": l.p, "q": l.q}
                  for l in s.loads],
        "inverters": [_inverter_dict(v) for v in s.inverters],
        "solver": {
            "tol_inf": s.solver.tol_inf, "max_iter": s.solver.max_iter,
            "damping": s.solver.damping,
            "step_limit_v": s.solver.step_limit_v,
            "flat_start": s.solver.flat_start,
            "duty_min": s.solver.duty_min, "duty_max": s.solver.duty_max,
            "max_backtracks": s.solver.max_backtracks,
        },
    }
    return doc


def save_scenario(s: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(s), fh, indent=2)
        fh.write("\n")


def _node_dict(n: NodeSpec) -> dict:
    d = {"id": n.id, "phases": n.phases, "kind": n.kind}
    if n.kind == "slack":
        d["slack_voltage"] = [[v.re, v.im] for v in n.slack_voltage]
    return d


def _timing_dict(t: tsbi.SwitchTiming) -> dict:
    return {"t_delay_on": t.t_delay_on, "t_rise": t.t_rise,
            "t_delay_off": t.t_delay_off, "t_fall": t.t_fall}


def _inverter_dict(v: InverterUnit) -> dict:
    p = v.params
    der = v.der
    if isinstance(der, dermodels.BatterySource):
        bp = der.params
        bp_d = {"c_batt": bp.c_batt, "v_oc_nom": bp.v_oc_nom,
                "r_int": bp.r_int, "soc_min": bp.soc_min,
                "soc_max": bp.soc_max, "v_oc_slope": bp.v_oc_slope}
        if math.isfinite(bp.i_max):
            bp_d["i_max"] = bp.i_max
        der_d = {"kind": "battery", "soc": der.soc, "params": bp_d}
    else:
        pv = der.params
        der_d = {"kind": "pv", "params": {
            "i_ph": pv.i_ph, "i_0": pv.i_0, "r_s": pv.r_s, "r_sh": pv.r_sh,
            "n_d": pv.n_d, "n_s": pv.n_s, "v_t": pv.v_t}}

    p_law = v.ctrl.p_law
    if isinstance(p_law, control.ConstantP):
        p_d = {"law": "constant_p", "p_set": p_law.p_set}
    else:
        p_d = {"law": "mppt"}
    q_law = v.ctrl.q_law
    if isinstance(q_law, control.ConstantQ):
        q_d = {"law": "constant_q", "q_set": q_law.q_set}
    elif isinstance(q_law, control.ConstantPF):
        q_d = {"law": "constant_pf", "pf": q_law.pf, "sign": q_law.sign}
    else:
        q_d = {"law": "volt_var", "v1": q_law.v1, "v2": q_law.v2,
               "v3": q_law.v3, "v4": q_law.v4, "q_max": q_law.q_max,
               "q_min": q_law.q_min, "eps_vv": q_law.eps_vv}

    return {
        "id": v.id, "node": v.node, "phase": v.phase,
        "der": der_d,
        "control": {"p": p_d, "q": q_d},
        "tsbi": {
            "v_dc": p.v_dc, "s_rated": p.s_rated,
            "eps_sgn": p.eps_sgn, "eps_mag": p.eps_mag,
            "freq": p.lcl.omega / (2.0 * math.pi),
            "fsc": {"v_t0": p.fsc.v_t0, "r_t": p.fsc.r_t, "r_l": p.fsc.r_l,
                    "timing": _timing_dict(p.fsc.timing), "f_sw": p.fsc.f_sw},
            "ssc": {"v_t": p.ssc.v_t, "r_t": p.ssc.r_t, "v_d": p.ssc.v_d,
                    "r_d": p.ssc.r_d, "timing": _timing_dict(p.ssc.timing),
                    "t_doff": p.ssc.t_doff, "f_sw": p.ssc.f_sw},
            "lcl": {"l1": p.lcl.l1, "l2": p.lcl.l2, "c": p.lcl.c,
                    "r_damp": p.lcl.r_damp, "r1": p.lcl.r1, "r2": p.lcl.r2},
        },
    }
