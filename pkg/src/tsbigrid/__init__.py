"""Loss-aware two-stage bidirectional inverter models coupled to unbalanced
three-phase distribution power flow, with a switching-level validation bench
and battery dispatch studies."""

from .control import (
    ConstantP,
    ConstantPF,
    ConstantQ,
    ControlSpec,
    Mppt,
    VoltVar,
)
from .dermodels import (
    BatteryParams,
    BatterySource,
    MppPoint,
    PvParams,
    PvSource,
    solve_mpp,
)
from .netmodel import (
    BranchSpec,
    LoadSpec,
    NetworkModel,
    NodeSpec,
    PerUnitBase,
    Phasor,
)
from .scenario import Scenario, ScenarioError, load_scenario, save_scenario
from .solver import (
    InverterUnit,
    SolveReport,
    SolverOptions,
    solve_power_flow,
    solve_single_inverter,
)
from .tsbi import (
    FscParams,
    LclParams,
    LossBreakdown,
    SscParams,
    SwitchTiming,
    TsbiParams,
    TsbiState,
    default_tsbi_params,
)

__version__ = "0.1.0"

__all__ = [
    "BatteryParams", "BatterySource", "BranchSpec", "ConstantP", "ConstantPF",
    "ConstantQ", "ControlSpec", "FscParams", "InverterUnit", "LclParams",
    "LoadSpec", "LossBreakdown", "MppPoint", "Mppt", "NetworkModel",
    "NodeSpec", "PerUnitBase", "Phasor", "PvParams", "PvSource", "Scenario",
    "ScenarioError", "SolveReport", "SolverOptions", "SscParams",
    "SwitchTiming", "TsbiParams", "TsbiState", "VoltVar",
    "default_tsbi_params", "load_scenario", "save_scenario", "solve_mpp",
    "solve_power_flow", "solve_single_inverter",
]
