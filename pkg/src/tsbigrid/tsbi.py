"""Two-stage bidirectional inverter equivalent circuit with loss sources.

The converter chain is: DER terminal (T1) -> four-switch buck-boost DC-DC
stage -> DC link at fixed V_DC -> H-bridge DC-AC stage under unipolar SPWM
-> LCL filter -> grid terminal (T2).  Both stages are ideal transformers
augmented with controlled sources for switching and conduction losses; all
loss expressions are smooth and sign-aware so one equation set covers both
power directions.

Source placement (fixed circuit topology):
  * T1 side: shunt switching-loss current source at the terminal, then a
    series conduction drop into the DC-DC ideal transformer.
  * DC side: series conduction drop out of the transformer, then a shunt
    switching source at the DC link; the H-bridge switching + reverse
    recovery loss is a second shunt source at the DC link.
  * AC side: series conduction voltage source between the modulation
    transformer output and the filter input.

Sign convention: i_t1 > 0 flows from the DER into the converter, i_dc > 0
from the DC-DC stage into the H-bridge, i_t2 > 0 is injected into the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import control
from .netmodel import Phasor, load_injection_partials
from .smoothing import (
    smooth_abs,
    smooth_abs_d,
    smooth_mag,
    smooth_sgn,
    smooth_sgn_d,
)

SQRT2 = math.sqrt(2.0)
TWO_SQRT2_OVER_PI = 2.0 * SQRT2 / math.pi

DEFAULT_EPS_SGN = 1e-6   # A^2, current sign/magnitude smoothing
DEFAULT_EPS_MAG = 1e-9   # A^2, phasor magnitude regularization
EPS_MC = 1e-10           # dimensionless, |M cos(phi)| smoothing in residuals
CTRL_EPS_V_PU = 1e-12    # p.u.^2, controlled-source voltage guard


# ---------------------------------------------------------------------------
# parameter records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SwitchTiming:
    t_delay_on: float
    t_rise: float
    t_delay_off: float
    t_fall: float

    def __post_init__(self):
        if min(self.t_delay_on, self.t_rise, self.t_delay_off, self.t_fall) < 0:
            raise ValueError("switch timings must be non-negative")

    @property
    def t_on(self) -> float:
        return self.t_delay_on + self.t_rise

    @property
    def t_off(self) -> float:
        return self.t_delay_off + self.t_fall


@dataclass(frozen=True)
class FscParams:
    v_t0: float                 # switch threshold voltage, V
    r_t: float                  # switch on-resistance, ohm
    r_l: float                  # inductor parasitic resistance, ohm
    timing: SwitchTiming
    f_sw: float                 # switching frequency, Hz

    def __post_init__(self):
        if min(self.v_t0, self.r_t, self.r_l, self.f_sw) < 0:
            raise ValueError("FSC parameters must be non-negative")
        if self.f_sw * (self.timing.t_on + self.timing.t_off) >= 1.0:
            raise ValueError("switch transitions exceed the switching period")

    @property
    def k_sw(self) -> float:
        """f_sw * (t_on + t_off), the per-side switching-loss current gain."""
        return self.f_sw * (self.timing.t_on + self.timing.t_off)

    @property
    def r_cond(self) -> float:
        """Series resistance of one conduction path: two switches + inductor."""
        return 2.0 * self.r_t + self.r_l


@dataclass(frozen=True)
class SscParams:
    v_t: float                  # transistor threshold, V
    r_t: float                  # transistor on-resistance, ohm
    v_d: float                  # diode threshold, V
    r_d: float                  # diode on-resistance, ohm
    timing: SwitchTiming
    t_doff: float               # effective reverse-recovery duration, s
    f_sw: float

    def __post_init__(self):
        if min(self.v_t, self.r_t, self.v_d, self.r_d, self.t_doff, self.f_sw) < 0:
            raise ValueError("SSC parameters must be non-negative")

    @property
    def k_sw(self) -> float:
        """(2*sqrt(2)/pi) * f_sw * (t_on + t_off): transistor switching gain."""
        return TWO_SQRT2_OVER_PI * self.f_sw * (self.timing.t_on + self.timing.t_off)

    @property
    def k_rr(self) -> float:
        """(2*sqrt(2)/pi) * f_sw * t_doff: reverse-recovery gain."""
        return TWO_SQRT2_OVER_PI * self.f_sw * self.t_doff


@dataclass(frozen=True)
class LclParams:
    l1: float                   # converter-side inductance, H
    l2: float                   # grid-side inductance, H
    c: float                    # damping-branch capacitance, F
    r_damp: float               # damping resistance, ohm
    r1: float = 0.0             # L1 parasitic, ohm
    r2: float = 0.0             # L2 parasitic, ohm
    omega: float = 2.0 * math.pi * 60.0

    def __post_init__(self):
        if min(self.l1, self.l2, self.c) <= 0:
            raise ValueError("LCL inductances and capacitance must be positive")
        if min(self.r_damp, self.r1, self.r2) < 0 or self.omega <= 0:
            raise ValueError("LCL resistances must be >= 0 and omega > 0")

    @property
    def x1(self) -> float:
        return self.omega * self.l1

    @property
    def x2(self) -> float:
        return self.omega * self.l2

    @property
    def xc(self) -> float:
        return 1.0 / (self.omega * self.c)

    def damping_admittance(self) -> tuple[float, float]:
        """(G, B) of the series R-C damping branch: 1/(r_damp - j*xc)."""
        z2 = self.r_damp * self.r_damp + self.xc * self.xc
        return self.r_damp / z2, self.xc / z2


@dataclass(frozen=True)
class TsbiParams:
    fsc: FscParams
    ssc: SscParams
    lcl: LclParams
    v_dc: float
    s_rated: float
    eps_sgn: float = DEFAULT_EPS_SGN
    eps_mag: float = DEFAULT_EPS_MAG

    def __post_init__(self):
        if self.v_dc <= 0 or self.s_rated <= 0:
            raise ValueError("v_dc and s_rated must be positive")
        if self.eps_sgn <= 0 or self.eps_mag <= 0:
            raise ValueError("smoothing constants must be positive")


# state layout inside the per-inverter block of the solution vector
STATE_FIELDS = (
    "v_t1", "i_t1", "d", "i_dc", "m_r", "m_i",
    "v_ac_r", "v_ac_i", "i_ac_r", "i_ac_i", "v_m_r", "v_m_i",
    "i_t2_r", "i_t2_i", "p_ctrl", "q_ctrl",
)
N_STATE = len(STATE_FIELDS)


@dataclass
class TsbiState:
    v_t1: float
    i_t1: float
    d: float
    i_dc: float
    m_r: float
    m_i: float
    v_ac_r: float
    v_ac_i: float
    i_ac_r: float
    i_ac_i: float
    v_m_r: float
    v_m_i: float
    i_t2_r: float
    i_t2_i: float
    p_ctrl: float
    q_ctrl: float

    @property
    def v_ac(self) -> Phasor:
        return Phasor(self.v_ac_r, self.v_ac_i)

    @property
    def i_ac(self) -> Phasor:
        return Phasor(self.i_ac_r, self.i_ac_i)

    @property
    def v_m(self) -> Phasor:
        return Phasor(self.v_m_r, self.v_m_i)

    @property
    def i_t2(self) -> Phasor:
        return Phasor(self.i_t2_r, self.i_t2_i)

    @property
    def m_mag(self) -> float:
        return math.hypot(self.m_r, self.m_i)

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in STATE_FIELDS])

    @classmethod
    def from_vector(cls, x) -> "TsbiState":
        x = np.asarray(x, dtype=float)
        if x.shape != (N_STATE,):
            raise ValueError(f"state vector must have {N_STATE} entries")
        return cls(*x)

    def validate(self) -> None:
        if not (0.0 < self.d < 1.0):
            raise ValueError("duty cycle must lie in (0, 1)")
        if self.m_mag > 1.0 + 1e-9:
            raise ValueError("modulation magnitude exceeds 1")
        if not all(math.isfinite(getattr(self, f)) for f in STATE_FIELDS):
            raise ValueError("non-finite inverter state")


@dataclass(frozen=True)
class LossBreakdown:
    fsc_switching: float
    fsc_conduction: float
    ssc_switching: float
    ssc_reverse_recovery: float
    ssc_conduction: float
    lcl_resistive: float

    @property
    def total(self) -> float:
        return (self.fsc_switching + self.fsc_conduction + self.ssc_switching
                + self.ssc_reverse_recovery + self.ssc_conduction
                + self.lcl_resistive)

    def as_tuple(self) -> tuple[float, ...]:
        return (self.fsc_switching, self.fsc_conduction, self.ssc_switching,
                self.ssc_reverse_recovery, self.ssc_conduction,
                self.lcl_resistive)


# ---------------------------------------------------------------------------
# DC-DC stage (four-switch buck-boost)
# ---------------------------------------------------------------------------

def fsc_voltage_gain(d: float) -> float:
    """Ideal transformation ratio d / (1 - d); unity at d = 0.5."""
    if not (0.0 < d < 1.0):
        raise ValueError("duty cycle must lie strictly inside (0, 1)")
    return d / (1.0 - d)


def fsc_switching_currents(p: FscParams, i_t1: float, i_dc: float,
                           eps_sgn: float = DEFAULT_EPS_SGN):
    """Shunt loss currents f_sw*(t_on+t_off)*|i| on the T1 and DC sides."""
    return p.k_sw * smooth_abs(i_t1, eps_sgn), p.k_sw * smooth_abs(i_dc, eps_sgn)


def fsc_conduction_drops(p: FscParams, d: float, i_t1: float, i_dc: float,
                         eps_sgn: float = DEFAULT_EPS_SGN):
    """Series conduction drops on each side, sign-aware threshold terms.

    V_C = duty * (2*sgn(i)*V_T0 + i*(2*R_T + R_L)), with duty d on the T1
    side and (1 - d) on the DC side.
    """
    vc_t1 = d * (2.0 * smooth_sgn(i_t1, eps_sgn) * p.v_t0 + i_t1 * p.r_cond)
    vc_dc = (1.0 - d) * (2.0 * smooth_sgn(i_dc, eps_sgn) * p.v_t0
                         + i_dc * p.r_cond)
    return vc_t1, vc_dc


def fsc_residuals(p: TsbiParams, s: TsbiState) -> tuple[float, float]:
    """KVL/KCL residual pair of the lossy DC-DC stage.

    r1: v_dc = gain(d) * (v_t1 - V_C_T1) - V_C_DC
    r2: i_dc = (i_t1 - I_SW_T1) / gain(d) - I_SW_DC
    """
    g = fsc_voltage_gain(s.d)
    vc1, vcd = fsc_conduction_drops(p.fsc, s.d, s.i_t1, s.i_dc, p.eps_sgn)
    isw1, iswd = fsc_switching_currents(p.fsc, s.i_t1, s.i_dc, p.eps_sgn)
    r1 = p.v_dc - g * (s.v_t1 - vc1) + vcd
    r2 = s.i_dc - (s.i_t1 - isw1) / g + iswd
    return r1, r2


# ---------------------------------------------------------------------------
# DC-AC stage (H-bridge under unipolar SPWM)
# ---------------------------------------------------------------------------

def ssc_switching_current(p: SscParams, i_ac_mag: float) -> float:
    """DC-side shunt loss current (2*sqrt(2)/pi)*f*(t_on+t_off+t_doff)*|I_AC|."""
    if i_ac_mag < 0:
        raise ValueError("current magnitude must be non-negative")
    return (p.k_sw + p.k_rr) * i_ac_mag


def ssc_device_currents(m_cosphi: float, i_ac_mag: float):
    """Per-device average and RMS currents of the modulated bridge.

    Returns (avg_T, rms_T, avg_D, rms_D).  Transistors and diodes split the
    sinusoidal current according to the modulation duty; the split depends
    only on |M cos(phi)|.
    """
    a = abs(m_cosphi)
    avg_t = SQRT2 * i_ac_mag / (8.0 * math.pi) * (4.0 + math.pi * a)
    avg_d = SQRT2 * i_ac_mag / (8.0 * math.pi) * (4.0 - math.pi * a)
    rms_t = i_ac_mag / (6.0 * math.sqrt(math.pi)) * math.sqrt(9.0 * math.pi + 24.0 * a)
    rms_d = i_ac_mag / (6.0 * math.sqrt(math.pi)) * math.sqrt(9.0 * math.pi - 24.0 * a)
    return avg_t, rms_t, avg_d, rms_d


def ssc_conduction_loss(p: SscParams, m_cosphi: float, i_ac_mag: float,
                        eps_mc: float = 0.0) -> float:
    """Total conduction loss of four transistors and four diodes.

    P_C = sqrt(2)|I|/(2 pi) * [V_T(pi*a + 4) + V_D(4 - pi*a)]
        + |I|^2/(3 pi)      * [R_T(8a + 3 pi) + R_D(3 pi - 8a)]
    with a = |M cos(phi)| (smoothed when eps_mc > 0).
    """
    a = smooth_abs(m_cosphi, eps_mc) if eps_mc > 0.0 else abs(m_cosphi)
    lin = (SQRT2 * i_ac_mag / (2.0 * math.pi)
           * (p.v_t * (math.pi * a + 4.0) + p.v_d * (4.0 - math.pi * a)))
    quad = (i_ac_mag * i_ac_mag / (3.0 * math.pi)
            * (p.r_t * (8.0 * a + 3.0 * math.pi)
               + p.r_d * (3.0 * math.pi - 8.0 * a)))
    return lin + quad


def ssc_conduction_voltage(p_c: float, i_ac: Phasor, eps_mag: float) -> Phasor:
    """Series voltage source aligned with the current so Q contribution is 0."""
    den = i_ac.re * i_ac.re + i_ac.im * i_ac.im + eps_mag
    return Phasor(p_c * i_ac.re / den, p_c * i_ac.im / den)


def m_cosphi(m_r: float, m_i: float, i_ac: Phasor, eps_mag: float) -> float:
    """Modulation-power-factor product (m . i)/(|i| + sqrt(eps)), in [-1, 1]."""
    mc = (m_r * i_ac.re + m_i * i_ac.im) / (i_ac.mag + math.sqrt(eps_mag))
    return min(max(mc, -1.0), 1.0)


def ssc_residuals(p: TsbiParams, s: TsbiState) -> tuple[float, float, float]:
    """Voltage pair and power balance of the lossy H-bridge.

    r1/r2: v_ac = m * v_dc/sqrt(2) - V_C (series conduction drop)
    r3:    v_dc*(i_dc - I_SW) = Re{(m * v_dc/sqrt(2)) . i_ac}
    """
    i_mag = smooth_mag(s.i_ac_r, s.i_ac_i, p.eps_mag)
    mc = ((s.m_r * s.i_ac_r + s.m_i * s.i_ac_i)
          / (i_mag + math.sqrt(p.eps_mag)))
    p_c = ssc_conduction_loss(p.ssc, mc, i_mag, EPS_MC)
    v_c = ssc_conduction_voltage(p_c, s.i_ac, p.eps_mag)
    i_sw = ssc_switching_current(p.ssc, i_mag)
    e = p.v_dc / SQRT2
    r1 = s.v_ac_r - s.m_r * e + v_c.re
    r2 = s.v_ac_i - s.m_i * e + v_c.im
    r3 = (p.v_dc * (s.i_dc - i_sw)
          - e * s.m_r * s.i_ac_r - e * s.m_i * s.i_ac_i)
    return r1, r2, r3


# ---------------------------------------------------------------------------
# LCL filter
# ---------------------------------------------------------------------------

def lcl_residuals(p: LclParams, v_ac: Phasor, i_ac: Phasor, v_m: Phasor,
                  v_t2: Phasor, i_t2: Phasor):
    """Six real equations: two branch KVLs and the midpoint KCL.

    branch 1: v_ac - v_m = (r1 + j w l1) i_ac
    node m:   i_ac = v_m / (r_damp - j/(w c)) + i_t2
    branch 2: v_m - v_t2 = (r2 + j w l2) i_t2
    """
    gc, bc = p.damping_admittance()
    r = np.empty(6)
    r[0] = v_ac.re - v_m.re - p.r1 * i_ac.re + p.x1 * i_ac.im
    r[1] = v_ac.im - v_m.im - p.r1 * i_ac.im - p.x1 * i_ac.re
    r[2] = i_ac.re - (gc * v_m.re - bc * v_m.im) - i_t2.re
    r[3] = i_ac.im - (gc * v_m.im + bc * v_m.re) - i_t2.im
    r[4] = v_m.re - v_t2.re - p.r2 * i_t2.re + p.x2 * i_t2.im
    r[5] = v_m.im - v_t2.im - p.r2 * i_t2.im - p.x2 * i_t2.re
    return r


# ---------------------------------------------------------------------------
# assembled per-inverter block
# ---------------------------------------------------------------------------

def assemble_inverter_block(p: TsbiParams, s: TsbiState, der,
                            ctrl: control.ControlSpec, v_t2: Phasor,
                            v_base: float = 1.0) -> np.ndarray:
    """All sixteen residuals of one inverter at grid voltage v_t2 (SI volts).

    Row order: DER I-V (1), DC-DC stage (2), H-bridge (3), LCL (6),
    controlled-source currents (2), active-power law (1), reactive-power
    law (1).  v_base converts v_t2 to per-unit for voltage-sensing controls.
    """
    r = np.empty(N_STATE)
    r[0] = der.iv_residual(s.v_t1, s.i_t1)
    r[1], r[2] = fsc_residuals(p, s)
    r[3], r[4], r[5] = ssc_residuals(p, s)
    r[6:12] = lcl_residuals(p.lcl, s.v_ac, s.i_ac, s.v_m, v_t2, s.i_t2)
    eps_v = CTRL_EPS_V_PU * v_base * v_base
    den = v_t2.re * v_t2.re + v_t2.im * v_t2.im + eps_v
    r[12] = s.i_t2_r - (s.p_ctrl * v_t2.re + s.q_ctrl * v_t2.im) / den
    r[13] = s.i_t2_i - (s.p_ctrl * v_t2.im - s.q_ctrl * v_t2.re) / den
    r[14] = control.p_law_residual(ctrl.p_law, s, der)
    v_mag_pu = smooth_mag(v_t2.re / v_base, v_t2.im / v_base, CTRL_EPS_V_PU)
    r[15] = control.q_law_residual(ctrl.q_law, s, v_mag_pu)
    return r


def inverter_block_jacobian(p: TsbiParams, s: TsbiState, der,
                            ctrl: control.ControlSpec, v_t2: Phasor,
                            v_base: float = 1.0):
    """Analytic Jacobian of assemble_inverter_block.

    Returns (J, J_v) with J of shape (16, 16) over the state fields in
    STATE_FIELDS order and J_v of shape (16, 2) over (v_t2.re, v_t2.im) in
    SI volts.
    """
    J = np.zeros((N_STATE, N_STATE))
    Jv = np.zeros((N_STATE, 2))
    eps = p.eps_sgn

    # row 0: DER terminal curve
    dv, di = der.iv_partials(s.v_t1, s.i_t1)
    J[0, 0] = dv
    J[0, 1] = di

    # rows 1-2: DC-DC stage
    g = s.d / (1.0 - s.d)
    gp = 1.0 / ((1.0 - s.d) * (1.0 - s.d))
    h = 1.0 / g
    fsc = p.fsc
    vc1, vcd = fsc_conduction_drops(fsc, s.d, s.i_t1, s.i_dc, eps)
    isw1, iswd = fsc_switching_currents(fsc, s.i_t1, s.i_dc, eps)
    dvc1_di = s.d * (2.0 * smooth_sgn_d(s.i_t1, eps) * fsc.v_t0 + fsc.r_cond)
    dvcd_di = (1.0 - s.d) * (2.0 * smooth_sgn_d(s.i_dc, eps) * fsc.v_t0
                             + fsc.r_cond)
    dvc1_dd = vc1 / s.d
    dvcd_dd = -vcd / (1.0 - s.d)
    disw1_di = fsc.k_sw * smooth_abs_d(s.i_t1, eps)
    diswd_di = fsc.k_sw * smooth_abs_d(s.i_dc, eps)

    J[1, 0] = -g
    J[1, 1] = g * dvc1_di
    J[1, 2] = -gp * (s.v_t1 - vc1) + g * dvc1_dd + dvcd_dd
    J[1, 3] = dvcd_di

    J[2, 1] = -h * (1.0 - disw1_di)
    J[2, 2] = (s.i_t1 - isw1) / (s.d * s.d)
    J[2, 3] = 1.0 + diswd_di

    # rows 3-5: H-bridge
    ssc = p.ssc
    n = s.i_ac_r * s.i_ac_r + s.i_ac_i * s.i_ac_i
    dmag = n + p.eps_mag              # = smooth magnitude squared
    i_mag = math.sqrt(dmag)
    sq_eps = math.sqrt(p.eps_mag)
    w = i_mag + sq_eps
    u = s.m_r * s.i_ac_r + s.m_i * s.i_ac_i
    mc = u / w
    dmc = {
        "m_r": s.i_ac_r / w,
        "m_i": s.i_ac_i / w,
        "i_r": (s.m_r - mc * s.i_ac_r / i_mag) / w,
        "i_i": (s.m_i - mc * s.i_ac_i / i_mag) / w,
    }
    a = math.sqrt(mc * mc + EPS_MC)
    da_dmc = mc / a
    lin_c = (ssc.v_t * (math.pi * a + 4.0) + ssc.v_d * (4.0 - math.pi * a))
    quad_c = (ssc.r_t * (8.0 * a + 3.0 * math.pi)
              + ssc.r_d * (3.0 * math.pi - 8.0 * a))
    p_c = (SQRT2 * i_mag / (2.0 * math.pi) * lin_c
           + i_mag * i_mag / (3.0 * math.pi) * quad_c)
    dpc_dmag = (SQRT2 / (2.0 * math.pi) * lin_c
                + 2.0 * i_mag / (3.0 * math.pi) * quad_c)
    dpc_da = (SQRT2 * i_mag / 2.0 * (ssc.v_t - ssc.v_d)
              + i_mag * i_mag * 8.0 / (3.0 * math.pi) * (ssc.r_t - ssc.r_d))
    dmag_dir = s.i_ac_r / i_mag
    dmag_dii = s.i_ac_i / i_mag
    dpc = {
        "m_r": dpc_da * da_dmc * dmc["m_r"],
        "m_i": dpc_da * da_dmc * dmc["m_i"],
        "i_r": dpc_da * da_dmc * dmc["i_r"] + dpc_dmag * dmag_dir,
        "i_i": dpc_da * da_dmc * dmc["i_i"] + dpc_dmag * dmag_dii,
    }
    e = p.v_dc / SQRT2
    k2 = ssc.k_sw + ssc.k_rr
    # r3 = v_ac_r - m_r*e + p_c*i_r/dmag
    J[3, 6] = 1.0
    J[3, 4] = -e + dpc["m_r"] * s.i_ac_r / dmag
    J[3, 5] = dpc["m_i"] * s.i_ac_r / dmag
    J[3, 8] = ((dpc["i_r"] * s.i_ac_r + p_c) / dmag
               - p_c * s.i_ac_r * 2.0 * s.i_ac_r / (dmag * dmag))
    J[3, 9] = (dpc["i_i"] * s.i_ac_r / dmag
               - p_c * s.i_ac_r * 2.0 * s.i_ac_i / (dmag * dmag))
    # r4 = v_ac_i - m_i*e + p_c*i_i/dmag
    J[4, 7] = 1.0
    J[4, 4] = dpc["m_r"] * s.i_ac_i / dmag
    J[4, 5] = -e + dpc["m_i"] * s.i_ac_i / dmag
    J[4, 8] = (dpc["i_r"] * s.i_ac_i / dmag
               - p_c * s.i_ac_i * 2.0 * s.i_ac_r / (dmag * dmag))
    J[4, 9] = ((dpc["i_i"] * s.i_ac_i + p_c) / dmag
               - p_c * s.i_ac_i * 2.0 * s.i_ac_i / (dmag * dmag))
    # r5 = v_dc*(i_dc - k2*i_mag) - e*(m_r*i_r + m_i*i_i)
    J[5, 3] = p.v_dc
    J[5, 4] = -e * s.i_ac_r
    J[5, 5] = -e * s.i_ac_i
    J[5, 8] = -p.v_dc * k2 * dmag_dir - e * s.m_r
    J[5, 9] = -p.v_dc * k2 * dmag_dii - e * s.m_i

    # rows 6-11: LCL (linear)
    lcl = p.lcl
    gc, bc = lcl.damping_admittance()
    J[6, 6] = 1.0
    J[6, 10] = -1.0
    J[6, 8] = -lcl.r1
    J[6, 9] = lcl.x1
    J[7, 7] = 1.0
    J[7, 11] = -1.0
    J[7, 9] = -lcl.r1
    J[7, 8] = -lcl.x1
    J[8, 8] = 1.0
    J[8, 10] = -gc
    J[8, 11] = bc
    J[8, 12] = -1.0
    J[9, 9] = 1.0
    J[9, 11] = -gc
    J[9, 10] = -bc
    J[9, 13] = -1.0
    J[10, 10] = 1.0
    J[10, 12] = -lcl.r2
    J[10, 13] = lcl.x2
    Jv[10, 0] = -1.0
    J[11, 11] = 1.0
    J[11, 13] = -lcl.r2
    J[11, 12] = -lcl.x2
    Jv[11, 1] = -1.0

    # rows 12-13: controlled source currents
    eps_v = CTRL_EPS_V_PU * v_base * v_base
    den = v_t2.re * v_t2.re + v_t2.im * v_t2.im + eps_v
    J[12, 12] = 1.0
    J[12, 14] = -v_t2.re / den
    J[12, 15] = -v_t2.im / den
    J[13, 13] = 1.0
    J[13, 14] = -v_t2.im / den
    J[13, 15] = v_t2.re / den
    drr, dri, dir_, dii = load_injection_partials(
        v_t2.re, v_t2.im, s.p_ctrl, s.q_ctrl, eps_v)
    Jv[12, 0] = -drr
    Jv[12, 1] = -dri
    Jv[13, 0] = -dir_
    Jv[13, 1] = -dii

    # row 14: active-power law
    if isinstance(ctrl.p_law, control.ConstantP):
        J[14, 14] = 1.0
    elif isinstance(ctrl.p_law, control.Mppt):
        pv = der.params
        vth = pv.v_th
        vd = s.v_t1 + s.i_t1 * pv.r_s
        expo = math.exp(min(vd / vth, 350.0))
        alpha = pv.i_0 * expo / vth + 1.0 / pv.r_sh
        beta = pv.i_0 * expo / (vth * vth)
        denom = 1.0 + pv.r_s * alpha
        J[14, 0] = -alpha / denom - s.v_t1 * beta / (denom * denom)
        J[14, 1] = 1.0 - s.v_t1 * beta * pv.r_s / (denom * denom)
    else:
        raise TypeError(f"unknown active-power law {ctrl.p_law!r}")

    # row 15: reactive-power law
    if isinstance(ctrl.q_law, control.ConstantQ):
        J[15, 15] = 1.0
    elif isinstance(ctrl.q_law, control.ConstantPF):
        J[15, 15] = ctrl.q_law.pf
        J[15, 14] = -ctrl.q_law.sign_factor * math.sqrt(
            1.0 - ctrl.q_law.pf * ctrl.q_law.pf)
    elif isinstance(ctrl.q_law, control.VoltVar):
        J[15, 15] = 1.0
        vr_pu = v_t2.re / v_base
        vi_pu = v_t2.im / v_base
        vmag = smooth_mag(vr_pu, vi_pu, CTRL_EPS_V_PU)
        slope = control.voltvar_q_d(ctrl.q_law, vmag)
        Jv[15, 0] = -slope * (vr_pu / vmag) / v_base
        Jv[15, 1] = -slope * (vi_pu / vmag) / v_base
    else:
        raise TypeError(f"unknown reactive-power law {ctrl.q_law!r}")

    return J, Jv


def loss_breakdown(p: TsbiParams, s: TsbiState) -> LossBreakdown:
    """Dissipation of every loss source at the given state.

    Each entry is the exact power absorbed by the corresponding controlled
    source in the equivalent circuit, so at any state satisfying the block
    residuals the components sum to P(T1) - P(T2) to rounding error.
    """
    isw1, iswd = fsc_switching_currents(p.fsc, s.i_t1, s.i_dc, p.eps_sgn)
    vc1, vcd = fsc_conduction_drops(p.fsc, s.d, s.i_t1, s.i_dc, p.eps_sgn)
    fsc_sw = s.v_t1 * isw1 + p.v_dc * iswd
    fsc_cond = vc1 * (s.i_t1 - isw1) + vcd * (s.i_dc + iswd)

    i_mag = smooth_mag(s.i_ac_r, s.i_ac_i, p.eps_mag)
    ssc_sw = p.v_dc * p.ssc.k_sw * i_mag
    ssc_rr = p.v_dc * p.ssc.k_rr * i_mag
    mc = ((s.m_r * s.i_ac_r + s.m_i * s.i_ac_i)
          / (i_mag + math.sqrt(p.eps_mag)))
    p_c = ssc_conduction_loss(p.ssc, mc, i_mag, EPS_MC)
    v_c = ssc_conduction_voltage(p_c, s.i_ac, p.eps_mag)
    ssc_cond = v_c.re * s.i_ac_r + v_c.im * s.i_ac_i

    gc, bc = p.lcl.damping_admittance()
    icap_r = gc * s.v_m_r - bc * s.v_m_i
    icap_i = gc * s.v_m_i + bc * s.v_m_r
    lcl_w = (p.lcl.r1 * (s.i_ac_r ** 2 + s.i_ac_i ** 2)
             + p.lcl.r2 * (s.i_t2_r ** 2 + s.i_t2_i ** 2)
             + p.lcl.r_damp * (icap_r ** 2 + icap_i ** 2))
    return LossBreakdown(fsc_sw, fsc_cond, ssc_sw, ssc_rr, ssc_cond, lcl_w)


def terminal_powers(s: TsbiState, v_t2: Phasor) -> tuple[float, float]:
    """(P at T1, P at T2): DC input power and AC power injected at the grid."""
    p_t1 = s.v_t1 * s.i_t1
    p_t2 = v_t2.re * s.i_t2_r + v_t2.im * s.i_t2_i
    return p_t1, p_t2


# ---------------------------------------------------------------------------
# component presets (manufacturer datasheet values)
# ---------------------------------------------------------------------------

def mosfet_spw47n60c3() -> dict:
    return {
        "v_t0": 0.30,
        "r_t": 0.025,
        "timing": SwitchTiming(14e-9, 15e-9, 58e-9, 11e-9),
    }


def diode_mur460() -> dict:
    return {"v_d": 1.10, "r_d": 0.050, "t_rr": 75e-9}


def lcl_reznik(omega: float = 2.0 * math.pi * 60.0) -> LclParams:
    return LclParams(l1=2.23e-3, l2=0.045e-3, c=15e-6, r_damp=0.55,
                     r1=5e-3, r2=5e-3, omega=omega)


RATED_KVA = (5800.0, 7600.0, 10000.0, 11500.0)

FSC_F_SW = 50e3
SSC_F_SW = 16e3
FSC_R_L = 1.8e-3


def default_fsc_params() -> FscParams:
    m = mosfet_spw47n60c3()
    return FscParams(v_t0=m["v_t0"], r_t=m["r_t"], r_l=FSC_R_L,
                     timing=m["timing"], f_sw=FSC_F_SW)


def default_ssc_params() -> SscParams:
    m = mosfet_spw47n60c3()
    dio = diode_mur460()
    return SscParams(v_t=m["v_t0"], r_t=m["r_t"], v_d=dio["v_d"],
                     r_d=dio["r_d"], timing=m["timing"],
                     t_doff=dio["t_rr"], f_sw=SSC_F_SW)


def default_tsbi_params(v_dc: float = 400.0, s_rated: float = 10000.0,
                        freq: float = 60.0, **overrides) -> TsbiParams:
    params = TsbiParams(
        fsc=default_fsc_params(),
        ssc=default_ssc_params(),
        lcl=lcl_reznik(2.0 * math.pi * freq),
        v_dc=v_dc,
        s_rated=s_rated,
    )
    return replace(params, **overrides) if overrides else params
