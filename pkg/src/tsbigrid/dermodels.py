"""DC-side device models: zeroth-order battery and single-diode PV.

The battery reduces to an open-circuit source behind an internal resistance,
with state of charge advanced by trapezoidal integration of terminal current
(discharge positive).  The PV module is the implicit single-diode equation
solved with a safeguarded Newton; the maximum power point comes from solving
the dP/dV = 0 condition simultaneously with the device I-V curve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

# exp() argument clamp: exp(350) ~ 1e152 stays finite in double precision
EXP_CLAMP = 350.0

SOC_TOL = 1e-9


@dataclass(frozen=True)
class BatteryParams:
    c_batt: float          # charge capacity, coulombs
    v_oc_nom: float        # nominal open-circuit voltage, V
    r_int: float = 0.0     # internal resistance, ohm
    soc_min: float = 0.0
    soc_max: float = 1.0
    i_max: float = math.inf
    v_oc_slope: float = 0.0  # optional affine V_OC = v_oc_nom + slope*(soc - 0.5)

    def __post_init__(self):
        if self.c_batt <= 0 or self.r_int < 0:
            raise ValueError("battery capacity must be > 0 and r_int >= 0")
        if not (0.0 <= self.soc_min < self.soc_max <= 1.0):
            raise ValueError("need 0 <= soc_min < soc_max <= 1")

    def v_oc(self, soc: float) -> float:
        return self.v_oc_nom + self.v_oc_slope * (soc - 0.5)


def battery_terminal_voltage(params: BatteryParams, soc: float, i_batt: float) -> float:
    """Terminal voltage V_OC(soc) - i_batt * r_int (discharge current positive)."""
    if not (params.soc_min <= soc <= params.soc_max):
        raise ValueError(f"soc {soc} outside [{params.soc_min}, {params.soc_max}]")
    return params.v_oc(soc) - i_batt * params.r_int


def soc_update(params: BatteryParams, soc_t: float, i_t: float, i_t1: float,
               dt: float) -> float:
    """Trapezoidal SOC step: soc - dt/(2*c_batt) * (i_t + i_t1).

    Raises if the result violates the SOC window by more than SOC_TOL,
    signalling an infeasible schedule; inside-tolerance excursions are
    clamped to the bound.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    soc = soc_t - dt / (2.0 * params.c_batt) * (i_t + i_t1)
    if soc < params.soc_min - SOC_TOL or soc > params.soc_max + SOC_TOL:
        raise ValueError(f"soc update to {soc} violates limits")
    return min(max(soc, params.soc_min), params.soc_max)


@dataclass(frozen=True)
class PvParams:
    i_ph: float            # photocurrent, A
    i_0: float             # reverse saturation current, A
    r_s: float             # series resistance, ohm
    r_sh: float            # shunt resistance, ohm
    n_d: float             # diode ideality factor
    n_s: int               # series cells
    v_t: float = 0.025693  # thermal voltage per cell at 25 C, V

    def __post_init__(self):
        ok = (self.i_ph >= 0 and self.i_0 > 0 and self.r_s >= 0
              and self.r_sh > 0 and self.n_d > 0 and self.n_s >= 1
              and self.v_t > 0)
        if not ok:
            raise ValueError("invalid single-diode parameters")

    @property
    def v_th(self) -> float:
        """Modified thermal voltage n_d * n_s * v_t of the whole string."""
        return self.n_d * self.n_s * self.v_t


class MppPoint(NamedTuple):
    v_mp: float
    i_mp: float
    p_mp: float
    converged: bool = True
    iterations: int = 0


def _diode_exp(arg: float) -> float:
    return math.exp(min(arg, EXP_CLAMP))


def pv_residual(params: PvParams, v: float, i: float) -> float:
    """F(V, I) = I - I_ph + I_0*(exp((V + I*Rs)/Vth) - 1) + (V + I*Rs)/Rsh."""
    vd = v + i * params.r_s
    return (i - params.i_ph
            + params.i_0 * (_diode_exp(vd / params.v_th) - 1.0)
            + vd / params.r_sh)


def pv_residual_partials(params: PvParams, v: float, i: float) -> tuple[float, float]:
    """(dF/dV, dF/dI) of pv_residual."""
    vd = v + i * params.r_s
    e = params.i_0 * _diode_exp(vd / params.v_th) / params.v_th
    dv = e + 1.0 / params.r_sh
    return dv, 1.0 + params.r_s * dv


def pv_current(params: PvParams, v_pv: float, tol: float = 1e-10,
               max_iter: int = 200) -> float:
    """Output current at terminal voltage v_pv from the implicit diode equation.

    Safeguarded Newton: F is strictly increasing in I, so a sign-bracketing
    interval exists and bisection backs up any rejected Newton step.
    """
    hi = params.i_ph + 1.0  # F(i_ph) >= 0 for v_pv >= 0
    lo = -1.0
    guard = 0
    while pv_residual(params, v_pv, lo) > 0.0:
        lo = 2.0 * lo - 1.0
        guard += 1
        if guard > 200:
            raise ValueError("cannot bracket PV operating point; check parameters")
    i = 0.5 * (lo + hi)
    for _ in range(max_iter):
        f = pv_residual(params, v_pv, i)
        if abs(f) < tol:
            return i
        if f < 0.0:
            lo = i
        else:
            hi = i
        _, dfdi = pv_residual_partials(params, v_pv, i)
        i_new = i - f / dfdi
        if not (lo < i_new < hi):
            i_new = 0.5 * (lo + hi)
        i = i_new
    return i


def pv_didv(params: PvParams, v: float, i: float) -> float:
    """Slope dI/dV of the device curve at an operating point on the curve."""
    dv, di = pv_residual_partials(params, v, i)
    return -dv / di


def pv_open_circuit_voltage(params: PvParams, tol: float = 1e-10) -> float:
    """Terminal voltage where the device current crosses zero."""
    lo, hi = 0.0, params.v_th
    # F(V, 0) is increasing in V; expand until positive
    guard = 0
    while pv_residual(params, hi, 0.0) < 0.0:
        hi *= 2.0
        guard += 1
        if guard > 200:
            raise ValueError("cannot bracket open-circuit voltage")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if pv_residual(params, mid, 0.0) > 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class BatterySource:
    """Battery operated at a frozen SOC for one steady-state solve."""

    params: BatteryParams
    soc: float = 0.5
    kind: str = field(default="battery", init=False)

    def __post_init__(self):
        if not (self.params.soc_min <= self.soc <= self.params.soc_max):
            raise ValueError("initial soc outside battery limits")

    # terminal equation in volts: v - V_OC(soc) + i * r_int = 0
    def iv_residual(self, v: float, i: float) -> float:
        return v - self.params.v_oc(self.soc) + i * self.params.r_int

    def iv_partials(self, v: float, i: float) -> tuple[float, float]:
        return 1.0, self.params.r_int

    iv_unit = "volts"

    def init_voltage(self) -> float:
        return self.params.v_oc(self.soc)


@dataclass(frozen=True)
class PvSource:
    """PV string presented to the converter through the single-diode curve."""

    params: PvParams
    kind: str = field(default="pv", init=False)

    # terminal equation in amps: the implicit diode relation
    def iv_residual(self, v: float, i: float) -> float:
        return pv_residual(self.params, v, i)

    def iv_partials(self, v: float, i: float) -> tuple[float, float]:
        return pv_residual_partials(self.params, v, i)

    iv_unit = "amps"

    def init_voltage(self) -> float:
        return mpp_estimate(self.params).v_mp


def powerwall3_battery() -> BatteryParams:
    """13.5 kWh pack at 50 V nominal: 972000 C, 36 mOhm internal."""
    return BatteryParams(c_batt=972000.0, v_oc_nom=50.0, r_int=0.036)


def lg400_pv() -> PvParams:
    """72-cell module fitted to datasheet anchors V_MP=40.6 V, I_MP=9.86 A.

    Least-squares fit of (I_ph, I_0, R_s, R_sh) to the short-circuit,
    open-circuit and maximum-power conditions with n_d fixed at 1.1.
    """
    return PvParams(
        i_ph=10.475927140487196,
        i_0=3.118864028739927e-10,
        r_s=0.26626584445868107,
        r_sh=470.3454942746519,
        n_d=1.1,
        n_s=72,
    )


def _mpp_system(params: PvParams, v: float, i: float):
    """Residuals and Jacobian of the two MPP conditions.

    f1: device curve   I = I_ph - I_0*(chi - 1) - V_D/R_sh
    f2: stationarity   I = V * (I_0*R_sh*chi + Vth) /
                           (I_0*Rs*R_sh*chi + Vth*(Rs + R_sh))
    with V_D = V + I*Rs and chi = exp(V_D / Vth).
    """
    vth, rs, rsh, i0 = params.v_th, params.r_s, params.r_sh, params.i_0
    vd = v + i * rs
    chi = _diode_exp(vd / vth)
    dchi_dv = chi / vth
    dchi_di = chi * rs / vth

    f1 = i - params.i_ph + i0 * (chi - 1.0) + vd / rsh
    df1_dv = i0 * dchi_dv + 1.0 / rsh
    df1_di = 1.0 + i0 * dchi_di + rs / rsh

    num = i0 * rsh * chi + vth
    den = i0 * rs * rsh * chi + vth * (rs + rsh)
    f2 = i - v * num / den
    dnum_dv = i0 * rsh * dchi_dv
    dden_dv = i0 * rs * rsh * dchi_dv
    dnum_di = i0 * rsh * dchi_di
    dden_di = i0 * rs * rsh * dchi_di
    df2_dv = -(num / den) - v * (dnum_dv * den - num * dden_dv) / (den * den)
    df2_di = 1.0 - v * (dnum_di * den - num * dden_di) / (den * den)
    return f1, f2, df1_dv, df1_di, df2_dv, df2_di


def mpp_estimate(params: PvParams, n: int = 50) -> MppPoint:
    """Coarse maximum-power estimate from an n-point sweep of P(V)."""
    voc = pv_open_circuit_voltage(params)
    vs = np.linspace(0.02 * voc, 0.99 * voc, n)
    ps = [v * pv_current(params, v) for v in vs]
    k = int(np.argmax(ps))
    v = float(vs[k])
    i = pv_current(params, v)
    return MppPoint(v, i, v * i, False, 0)


def solve_mpp(params: PvParams, tol: float = 1e-10, max_iter: int = 100) -> MppPoint:
    """Maximum power point via 2-variable Newton on (V_MP, I_MP).

    Initialized from a coarse 50-point sweep of the P(V) curve; a diverged
    run returns the last iterate flagged converged=False.
    """
    voc = pv_open_circuit_voltage(params)
    est = mpp_estimate(params)
    v, i = est.v_mp, est.i_mp

    for it in range(1, max_iter + 1):
        f1, f2, a, b, c, d = _mpp_system(params, v, i)
        if abs(f1) < tol and abs(f2) < tol:
            return MppPoint(v, i, v * i, True, it)
        det = a * d - b * c
        if det == 0.0 or not math.isfinite(det):
            break
        dv = (-f1 * d + f2 * b) / det
        di = (-f2 * a + f1 * c) / det
        # keep the iterate on the physical branch
        limit = 0.5 * voc
        if abs(dv) > limit:
            scale = limit / abs(dv)
            dv *= scale
            di *= scale
        v = min(max(v + dv, 1e-6), voc)
        i = i + di
    return MppPoint(v, i, v * i, False, max_iter)
