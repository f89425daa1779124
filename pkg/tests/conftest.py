import numpy as np
import pytest

from tsbigrid import control, dermodels, solver, tsbi
from tsbigrid.netmodel import PerUnitBase


@pytest.fixture(scope="session")
def base():
    return PerUnitBase(s_base=10000.0, v_base=240.0)


@pytest.fixture(scope="session")
def params():
    return tsbi.default_tsbi_params(v_dc=400.0, s_rated=10000.0)


@pytest.fixture(scope="session")
def battery_400v():
    return dermodels.BatteryParams(c_batt=972000.0, v_oc_nom=400.0, r_int=0.05)


@pytest.fixture(scope="session")
def constant_pq_5kw(params, base, battery_400v):
    """Converged 5 kW forward operating point against a stiff 1 p.u. bus."""
    der = dermodels.BatterySource(battery_400v, soc=0.5)
    ctrl = control.ControlSpec(control.ConstantP(5000.0),
                               control.ConstantQ(0.0))
    state, rep = solver.solve_single_inverter(params, der, ctrl, base)
    assert rep.converged
    return state


def rng(seed=0):
    return np.random.default_rng(seed)
