"""Inverter control laws as residual rows of the steady-state system.

An active-power law (constant-P or MPPT) and a reactive-power law
(constant-Q, constant power factor, or Volt-VAR) each contribute one
algebraic equation; the controlled current source at the grid terminal
contributes two more.  Everything is smooth so the rows drop straight into
the Newton system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Union

from . import dermodels
from .netmodel import Phasor, load_injection_current
from .smoothing import smooth_ramp, smooth_ramp_d


@dataclass(frozen=True)
class ConstantP:
    p_set: float  # W injected at the grid terminal


@dataclass(frozen=True)
class Mppt:
    """Track the PV maximum power point; valid only with a PV source."""


@dataclass(frozen=True)
class ConstantQ:
    q_set: float  # var


@dataclass(frozen=True)
class ConstantPF:
    pf: float
    sign: str = "lagging"  # "lagging" injects positive Q, "leading" negative

    def __post_init__(self):
        if not (0.0 < self.pf <= 1.0):
            raise ValueError("power factor must be in (0, 1]")
        if self.sign not in ("lagging", "leading"):
            raise ValueError("sign must be 'lagging' or 'leading'")

    @property
    def sign_factor(self) -> float:
        return 1.0 if self.sign == "lagging" else -1.0


@dataclass(frozen=True)
class VoltVar:
    """Piecewise Q(V) curve smoothed with |x| -> sqrt(x^2 + eps_vv).

    Injects q_max below v1, ramps to zero over [v1, v2], holds zero in the
    dead band [v2, v3], ramps to q_min over [v3, v4], holds q_min above v4.
    """

    v1: float
    v2: float
    v3: float
    v4: float
    q_max: float
    q_min: float
    eps_vv: float = 1e-8  # p.u.^2

    def __post_init__(self):
        if not (self.v1 < self.v2 <= self.v3 < self.v4):
            raise ValueError("need v1 < v2 <= v3 < v4")
        if not (self.q_max >= 0.0 >= self.q_min):
            raise ValueError("need q_max >= 0 >= q_min")
        if self.eps_vv <= 0.0:
            raise ValueError("eps_vv must be positive")


PLaw = Union[ConstantP, Mppt]
QLaw = Union[ConstantQ, ConstantPF, VoltVar]


@dataclass(frozen=True)
class ControlSpec:
    p_law: PLaw
    q_law: QLaw

    def validate_der(self, der) -> None:
        if isinstance(self.p_law, Mppt) and not isinstance(der, dermodels.PvSource):
            raise ValueError("MPPT control requires a PV source")


def default_voltvar(s_rated: float) -> VoltVar:
    """Deadband curve with |Q| capped at 0.25 of the rating."""
    return VoltVar(0.90, 0.98, 1.02, 1.10, 0.25 * s_rated, -0.25 * s_rated)


def ctrl_current(v_t2: Phasor, p_ctrl: float, q_ctrl: float,
                 eps_v: float = 0.0) -> Phasor:
    """Controlled source current delivering (p_ctrl, q_ctrl) at voltage v_t2."""
    return load_injection_current(v_t2, p_ctrl, q_ctrl, eps_v)


def p_law_residual(law: PLaw, state, der) -> float:
    """Active-power equation row.

    Constant-P pins p_ctrl; MPPT pins the DC terminal to the stationary
    point of P(V) on the PV curve: i_t1 + v_t1 * dI/dV = 0.
    """
    if isinstance(law, ConstantP):
        return state.p_ctrl - law.p_set
    if isinstance(law, Mppt):
        if not isinstance(der, dermodels.PvSource):
            raise ValueError("MPPT control requires a PV source")
        slope = dermodels.pv_didv(der.params, state.v_t1, state.i_t1)
        return state.i_t1 + state.v_t1 * slope
    raise TypeError(f"unknown active-power law {law!r}")


def voltvar_q(spec: VoltVar, v_mag: float) -> float:
    """Smooth Volt-VAR reactive setpoint at per-unit voltage magnitude v_mag."""
    e = spec.eps_vv
    up = smooth_ramp(v_mag - spec.v1, e) - smooth_ramp(v_mag - spec.v2, e)
    dn = smooth_ramp(v_mag - spec.v3, e) - smooth_ramp(v_mag - spec.v4, e)
    return (spec.q_max
            - spec.q_max / (spec.v2 - spec.v1) * up
            + spec.q_min / (spec.v4 - spec.v3) * dn)


def voltvar_q_d(spec: VoltVar, v_mag: float) -> float:
    """dQ/dV of the smooth Volt-VAR curve."""
    e = spec.eps_vv
    up = smooth_ramp_d(v_mag - spec.v1, e) - smooth_ramp_d(v_mag - spec.v2, e)
    dn = smooth_ramp_d(v_mag - spec.v3, e) - smooth_ramp_d(v_mag - spec.v4, e)
    return (-spec.q_max / (spec.v2 - spec.v1) * up
            + spec.q_min / (spec.v4 - spec.v3) * dn)


def voltvar_piecewise(spec: VoltVar, v: float) -> float:
    """Exact (non-smooth) piecewise curve, used as the smoothing reference."""
    if v <= spec.v1:
        return spec.q_max
    if v < spec.v2:
        return spec.q_max * (spec.v2 - v) / (spec.v2 - spec.v1)
    if v <= spec.v3:
        return 0.0
    if v < spec.v4:
        return spec.q_min * (v - spec.v3) / (spec.v4 - spec.v3)
    return spec.q_min


def q_law_residual(law: QLaw, state, v_t2_mag: float) -> float:
    """Reactive-power equation row; v_t2_mag is the sensed p.u. magnitude."""
    if isinstance(law, ConstantQ):
        return state.q_ctrl - law.q_set
    if isinstance(law, ConstantPF):
        return (state.q_ctrl * law.pf
                - law.sign_factor * state.p_ctrl * math.sqrt(1.0 - law.pf * law.pf))
    if isinstance(law, VoltVar):
        return state.q_ctrl - voltvar_q(law, v_t2_mag)
    raise TypeError(f"unknown reactive-power law {law!r}")


class ApparentPowerCheck(NamedTuple):
    s_mag: float
    s_rated: float
    ok: bool


def apparent_power_check(p_ctrl: float, q_ctrl: float,
                         s_rated: float) -> ApparentPowerCheck:
    """Flag operating points beyond the apparent-power rating (warning only)."""
    s = math.hypot(p_ctrl, q_ctrl)
    return ApparentPowerCheck(s, s_rated, s <= s_rated)
