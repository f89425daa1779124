"""Built-in scenario builders: a small demo feeder and synthetic large feeders.

Run ``python -m tsbigrid.fixtures out.json`` to emit the four-bus demo
scenario file consumed by the command-line driver.
"""

from __future__ import annotations

import math
import sys

import numpy as np

from . import control, dermodels, tsbi
from .netmodel import BranchSpec, LoadSpec, NetworkModel, NodeSpec, PerUnitBase, Phasor
from .scenario import Scenario, save_scenario
from .solver import InverterUnit, SolverOptions

BALANCED_SLACK = (Phasor.from_polar(1.0, 0.0), Phasor.from_polar(1.0, -120.0),
                  Phasor.from_polar(1.0, 120.0))


def line_blocks(z_self: complex, z_mutual: complex):
    """(G, B) 3x3 blocks from a symmetric phase-impedance matrix."""
    z = np.full((3, 3), z_mutual, dtype=complex)
    np.fill_diagonal(z, z_self)
    y = np.linalg.inv(z)
    return y.real.copy(), y.imag.copy()


def feeder4_scenario(p_set: float = 5000.0,
                     voltvar: bool = False) -> Scenario:
    """Four-bus three-phase demo: battery and PV inverters behind two lines."""
    base = PerUnitBase(s_base=10000.0, v_base=240.0)
    g1, b1 = line_blocks(0.004 + 0.008j, 0.001 + 0.003j)
    g2, b2 = line_blocks(0.006 + 0.012j, 0.002 + 0.004j)
    nodes = [
        NodeSpec("src", "abc", "slack", BALANCED_SLACK),
        NodeSpec("n1", "abc"),
        NodeSpec("n2", "abc"),
        NodeSpec("n3", "abc"),
    ]
    branches = [
        BranchSpec("src", "n1", g1, b1),
        BranchSpec("n1", "n2", g2, b2),
        BranchSpec("n1", "n3", g2, b2),
    ]
    loads = [
        LoadSpec("n1", "a", 0.30, 0.10),
        LoadSpec("n1", "b", 0.25, 0.08),
        LoadSpec("n1", "c", 0.28, 0.09),
        LoadSpec("n2", "a", 0.40, 0.15),
        LoadSpec("n2", "b", 0.35, 0.12),
        LoadSpec("n2", "c", 0.38, 0.13),
        LoadSpec("n3", "a", 0.20, 0.06),
        LoadSpec("n3", "b", 0.22, 0.07),
        LoadSpec("n3", "c", 0.18, 0.05),
    ]
    params = tsbi.default_tsbi_params(v_dc=400.0, s_rated=10000.0)
    if voltvar:
        q_law = control.default_voltvar(params.s_rated)
    else:
        q_law = control.ConstantQ(0.0)
    inverters = [
        InverterUnit(
            "bess1", "n2", "a", params,
            dermodels.BatterySource(
                dermodels.BatteryParams(c_batt=972000.0, v_oc_nom=400.0,
                                        r_int=0.05), soc=0.5),
            control.ControlSpec(control.ConstantP(p_set), q_law)),
        InverterUnit(
            "pv1", "n3", "b", params,
            dermodels.PvSource(dermodels.lg400_pv()),
            control.ControlSpec(control.Mppt(), q_law)),
    ]
    return Scenario(base=base, nodes=nodes, branches=branches, loads=loads,
                    inverters=inverters,
                    solver=SolverOptions(tol_inf=1e-8, max_iter=50))


def synthetic_feeder(n_nodes: int = 1000, n_inverters: int = 100,
                     seed: int = 7, q_mode: str = "upf",
                     p_set: float = 5000.0):
    """Random bushy three-phase feeder with inverter-equipped load buses.

    Returns (NetworkModel, [InverterUnit]).  q_mode selects the reactive law
    of every inverter: 'upf' (constant Q = 0), 'voltvar', or 'cpf'.
    """
    rng = np.random.default_rng(seed)
    base = PerUnitBase(s_base=10000.0, v_base=240.0)
    nodes = [NodeSpec("n0", "abc", "slack", BALANCED_SLACK)]
    for k in range(1, n_nodes):
        nodes.append(NodeSpec(f"n{k}", "abc"))

    g_blk, b_blk = line_blocks(0.0010 + 0.0020j, 0.0003 + 0.0006j)
    branches = []
    for k in range(1, n_nodes):
        parent = int(rng.integers(0, k))
        branches.append(BranchSpec(f"n{parent}", f"n{k}", g_blk, b_blk))

    loads = []
    for k in range(1, n_nodes):
        for ph in "abc":
            p = float(rng.uniform(0.020, 0.055))
            loads.append(LoadSpec(f"n{k}", ph, p, 0.3 * p))

    net = NetworkModel(base=base, nodes=tuple(nodes), branches=tuple(branches),
                       loads=tuple(loads))

    params = tsbi.default_tsbi_params(v_dc=400.0, s_rated=10000.0)
    batt = dermodels.BatteryParams(c_batt=972000.0, v_oc_nom=400.0, r_int=0.05)
    picks = rng.choice(np.arange(1, n_nodes), size=n_inverters, replace=False)
    phases = rng.choice(list("abc"), size=n_inverters)
    inverters = []
    for j, (node_k, ph) in enumerate(zip(picks, phases)):
        if q_mode == "voltvar":
            q_law = control.default_voltvar(params.s_rated)
        elif q_mode == "cpf":
            q_law = control.ConstantPF(0.95, "lagging")
        elif q_mode == "upf":
            q_law = control.ConstantQ(0.0)
        else:
            raise ValueError(f"unknown q_mode {q_mode!r}")
        inverters.append(InverterUnit(
            f"inv{j}", f"n{int(node_k)}", str(ph), params,
            dermodels.BatterySource(batt, soc=0.5),
            control.ControlSpec(control.ConstantP(p_set), q_law)))
    return net, inverters


def deadband_distance(v_mag: float, v_lo: float = 0.98,
                      v_hi: float = 1.02) -> float:
    """How far a voltage magnitude sits outside the Volt-VAR dead band."""
    if v_mag < v_lo:
        return v_lo - v_mag
    if v_mag > v_hi:
        return v_mag - v_hi
    return 0.0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m tsbigrid.fixtures OUT.json", file=sys.stderr)
        return 2
    save_scenario(feeder4_scenario(), argv[0])
    print(f"wrote demo scenario to {argv[0]}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
