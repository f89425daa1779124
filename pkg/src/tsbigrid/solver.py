"""Damped Newton solution of the coupled network + inverter system.

The unknown vector stacks the network voltages (two reals per node/phase,
per-unit) followed by sixteen SI states per inverter.  Rows mirror columns:
network KCL (slack rows replaced by voltage pins), then the sixteen
per-inverter equations.  Rows are scaled into comparable per-unit-like
magnitudes; convergence is measured on the scaled residual inf-norm.

The Jacobian is analytic throughout: the network part is the constant branch
stamp plus load-injection partials, the inverter blocks come from
tsbi.inverter_block_jacobian, and the only cross terms are the inverter
current injected into its node's KCL rows and the node voltage seen by the
inverter equations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import control, tsbi
from .dermodels import mpp_estimate
from .netmodel import (
    NetworkModel,
    NodeSpec,
    PerUnitBase,
    Phasor,
    load_injection_partials,
)
from .tsbi import N_STATE, TsbiParams, TsbiState

log = logging.getLogger("tsbigrid")

PHASE_ANGLE = {"a": 0.0, "b": -2.0 * math.pi / 3.0, "c": 2.0 * math.pi / 3.0}

INVERTER_ROW_NAMES = (
    "der_iv", "fsc_v", "fsc_i", "ssc_vr", "ssc_vi", "ssc_p",
    "lcl_b1r", "lcl_b1i", "lcl_mr", "lcl_mi", "lcl_b2r", "lcl_b2i",
    "ctrl_ir", "ctrl_ii", "p_law", "q_law",
)


@dataclass(frozen=True)
class SolverOptions:
    tol_inf: float = 1e-8
    max_iter: int = 50
    damping: float = 1.0          # initial step factor per iteration
    step_limit_v: float = 0.2     # max p.u. voltage component update
    flat_start: bool = True
    duty_min: float = 0.02
    duty_max: float = 0.98
    max_backtracks: int = 20

    def __post_init__(self):
        if self.tol_inf <= 0 or self.max_iter < 1:
            raise ValueError("tol_inf must be > 0 and max_iter >= 1")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping must lie in (0, 1]")


@dataclass(frozen=True)
class InverterUnit:
    """One single-phase inverter attached phase-to-neutral at a network node."""

    id: str
    node: str
    phase: str
    params: TsbiParams
    der: object                      # dermodels.BatterySource | PvSource
    ctrl: control.ControlSpec

    def __post_init__(self):
        self.ctrl.validate_der(self.der)


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residual_history: list[float]
    state: np.ndarray
    losses: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)  # (iter, resid_inf, step, damping)
    message: str = ""


class CoupledSystem:
    """Residual/Jacobian evaluator for a network plus attached inverters."""

    def __init__(self, net: NetworkModel, inverters: list[InverterUnit]):
        self.net = net
        self.inverters = list(inverters)
        self.n_net = net.n_vars
        self.n = self.n_net + N_STATE * len(self.inverters)
        self._offsets = [self.n_net + N_STATE * k
                         for k in range(len(self.inverters))]
        self._slots = []
        for inv in self.inverters:
            key = (inv.node, inv.phase)
            if key not in net.slot_of:
                raise ValueError(f"inverter {inv.id} attached to unknown {key}")
            self._slots.append(net.slot_of[key])
        self._slack = set(int(k) for k in net.slack_slots)
        self._row_scale = self._build_row_scale()
        # below this size a dense Jacobian beats sparse assembly overhead
        self.dense_threshold = 200
        self._lin_dense = None

    # -- bookkeeping -------------------------------------------------------
    def _build_row_scale(self) -> np.ndarray:
        scale = np.ones(self.n)
        for inv, off in zip(self.inverters, self._offsets):
            v_s = 1.0 / inv.params.v_dc
            i_s = inv.params.v_dc / inv.params.s_rated
            p_s = 1.0 / inv.params.s_rated
            row = {
                "der_iv": v_s if inv.der.iv_unit == "volts" else i_s,
                "fsc_v": v_s, "fsc_i": i_s,
                "ssc_vr": v_s, "ssc_vi": v_s, "ssc_p": p_s,
                "lcl_b1r": v_s, "lcl_b1i": v_s,
                "lcl_mr": i_s, "lcl_mi": i_s,
                "lcl_b2r": v_s, "lcl_b2i": v_s,
                "ctrl_ir": i_s, "ctrl_ii": i_s,
                "p_law": i_s if isinstance(inv.ctrl.p_law, control.Mppt) else p_s,
                "q_law": p_s,
            }
            for k, name in enumerate(INVERTER_ROW_NAMES):
                scale[off + k] = row[name]
        return scale

    def row_name(self, r: int) -> str:
        if r < self.n_net:
            node, ph = self.net.slots[r // 2]
            part = "re" if r % 2 == 0 else "im"
            kind = "slack" if (r // 2) in self._slack else "kcl"
            return f"{kind}:{node}:{ph}:{part}"
        k, j = divmod(r - self.n_net, N_STATE)
        return f"{self.inverters[k].id}:{INVERTER_ROW_NAMES[j]}"

    def inverter_state(self, x: np.ndarray, k: int) -> TsbiState:
        off = self._offsets[k]
        return TsbiState.from_vector(x[off:off + N_STATE])

    def node_voltage_si(self, x: np.ndarray, k: int) -> Phasor:
        slot = self._slots[k]
        vb = self.net.base.v_base
        return Phasor(x[2 * slot] * vb, x[2 * slot + 1] * vb)

    # -- residual and Jacobian ----------------------------------------------
    def residual(self, x: np.ndarray) -> np.ndarray:
        r = np.zeros(self.n)
        r[:self.n_net] = self.net.kcl_residual(x[:self.n_net])
        i_base = self.net.base.i_base
        for k, (inv, off, slot) in enumerate(
                zip(self.inverters, self._offsets, self._slots)):
            s = self.inverter_state(x, k)
            v_t2 = self.node_voltage_si(x, k)
            r[off:off + N_STATE] = tsbi.assemble_inverter_block(
                inv.params, s, inv.der, inv.ctrl, v_t2, self.net.base.v_base)
            if slot not in self._slack:
                # generator-sign injection into the node KCL rows
                r[2 * slot] -= s.i_t2_r / i_base
                r[2 * slot + 1] -= s.i_t2_i / i_base
        return r * self._row_scale

    def jacobian(self, x: np.ndarray) -> sp.csc_matrix:
        rows: list[np.ndarray] = []
        cols: list[np.ndarray] = []
        vals: list[np.ndarray] = []

        jn = self.net.kcl_jacobian(x[:self.n_net]).tocoo()
        rows.append(jn.row)
        cols.append(jn.col)
        vals.append(jn.data)

        vb = self.net.base.v_base
        i_base = self.net.base.i_base
        for k, (inv, off, slot) in enumerate(
                zip(self.inverters, self._offsets, self._slots)):
            s = self.inverter_state(x, k)
            v_t2 = self.node_voltage_si(x, k)
            J, Jv = tsbi.inverter_block_jacobian(
                inv.params, s, inv.der, inv.ctrl, v_t2, vb)
            rr, cc = np.nonzero(J)
            rows.append(rr + off)
            cols.append(cc + off)
            vals.append(J[rr, cc])
            # inverter equations see the node voltage in SI volts
            rr, cc = np.nonzero(Jv)
            rows.append(rr + off)
            cols.append(2 * slot + cc)
            vals.append(Jv[rr, cc] * vb)
            if slot not in self._slack:
                it2r = off + tsbi.STATE_FIELDS.index("i_t2_r")
                rows.append(np.array([2 * slot, 2 * slot + 1]))
                cols.append(np.array([it2r, it2r + 1]))
                vals.append(np.array([-1.0 / i_base, -1.0 / i_base]))

        row = np.concatenate(rows)
        col = np.concatenate(cols)
        val = np.concatenate(vals) * self._row_scale[row]
        return sp.csc_matrix((val, (row, col)), shape=(self.n, self.n))

    def jacobian_dense(self, x: np.ndarray) -> np.ndarray:
        """Same matrix as jacobian() assembled densely (small systems)."""
        if self._lin_dense is None:
            self._lin_dense = self.net._lin.toarray()
        J = np.zeros((self.n, self.n))
        nn = self.n_net
        J[:nn, :nn] = self._lin_dense
        net = self.net
        for k, p, q in zip(net._load_slot, net._load_p, net._load_q):
            vr, vi = x[2 * k], x[2 * k + 1]
            drr, dri, dir_, dii = load_injection_partials(vr, vi, p, q, net.eps_v)
            J[2 * k, 2 * k] += drr
            J[2 * k, 2 * k + 1] += dri
            J[2 * k + 1, 2 * k] += dir_
            J[2 * k + 1, 2 * k + 1] += dii
        vb = net.base.v_base
        i_base = net.base.i_base
        for k, (inv, off, slot) in enumerate(
                zip(self.inverters, self._offsets, self._slots)):
            s = self.inverter_state(x, k)
            v_t2 = self.node_voltage_si(x, k)
            Jb, Jv = tsbi.inverter_block_jacobian(
                inv.params, s, inv.der, inv.ctrl, v_t2, vb)
            J[off:off + N_STATE, off:off + N_STATE] = Jb
            J[off:off + N_STATE, 2 * slot:2 * slot + 2] += Jv * vb
            if slot not in self._slack:
                it2r = off + tsbi.STATE_FIELDS.index("i_t2_r")
                J[2 * slot, it2r] -= 1.0 / i_base
                J[2 * slot + 1, it2r + 1] -= 1.0 / i_base
        return J * self._row_scale[:, None]

    # -- state utilities -----------------------------------------------------
    def clamp(self, x: np.ndarray, opts: SolverOptions) -> np.ndarray:
        x = x.copy()
        for inv, off in zip(self.inverters, self._offsets):
            di = off + tsbi.STATE_FIELDS.index("d")
            x[di] = min(max(x[di], opts.duty_min), opts.duty_max)
            mr = off + tsbi.STATE_FIELDS.index("m_r")
            mag = math.hypot(x[mr], x[mr + 1])
            if mag > 1.0:
                x[mr] /= mag
                x[mr + 1] /= mag
        return x

    def initialize(self) -> np.ndarray:
        """Flat start: balanced network voltages, converter at unity-gain rest."""
        x = np.zeros(self.n)
        x[:self.n_net] = self.net.flat_voltages()
        for inv, off in zip(self.inverters, self._offsets):
            ang = PHASE_ANGLE[inv.phase]
            m_r = 0.8 * math.cos(ang)
            m_i = 0.8 * math.sin(ang)
            e = inv.params.v_dc / tsbi.SQRT2
            p0 = q0 = 0.0
            if isinstance(inv.ctrl.p_law, control.ConstantP):
                p0 = inv.ctrl.p_law.p_set
            elif isinstance(inv.ctrl.p_law, control.Mppt):
                p0 = mpp_estimate(inv.der.params).p_mp
            if isinstance(inv.ctrl.q_law, control.ConstantQ):
                q0 = inv.ctrl.q_law.q_set
            elif isinstance(inv.ctrl.q_law, control.ConstantPF):
                q0 = (inv.ctrl.q_law.sign_factor * p0
                      * math.sqrt(1.0 - inv.ctrl.q_law.pf ** 2)
                      / inv.ctrl.q_law.pf)
            s = TsbiState(
                v_t1=inv.der.init_voltage(), i_t1=0.0, d=0.5, i_dc=0.0,
                m_r=m_r, m_i=m_i,
                v_ac_r=m_r * e, v_ac_i=m_i * e,
                i_ac_r=0.0, i_ac_i=0.0,
                v_m_r=m_r * e, v_m_i=m_i * e,
                i_t2_r=0.0, i_t2_i=0.0,
                p_ctrl=p0, q_ctrl=q0,
            )
            x[off:off + N_STATE] = s.to_vector()
        return x

    def losses(self, x: np.ndarray) -> dict:
        out = {}
        for k, inv in enumerate(self.inverters):
            out[inv.id] = tsbi.loss_breakdown(inv.params, self.inverter_state(x, k))
        return out


def initialize_state(net: NetworkModel, inverters: list[InverterUnit]) -> np.ndarray:
    return CoupledSystem(net, inverters).initialize()


def finite_diff_jacobian(fun, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Dense central-difference Jacobian of fun at x (test oracle).

    Per-variable step h * max(1, |x_i|); O(h^2) accurate.
    """
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x))
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        hi = h * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += hi
        xm[i] -= hi
        J[:, i] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2.0 * hi)
    return J


def analytic_jacobian(system: CoupledSystem, x: np.ndarray) -> sp.csc_matrix:
    return system.jacobian(x)


def _limit_step(system: CoupledSystem, dx: np.ndarray, limit: float) -> np.ndarray:
    vmax = np.max(np.abs(dx[:system.n_net])) if system.n_net else 0.0
    if vmax > limit:
        dx = dx * (limit / vmax)
    return dx


def solve_power_flow(net: NetworkModel, inverters: list[InverterUnit],
                     opts: SolverOptions = SolverOptions(),
                     x0: np.ndarray | None = None) -> SolveReport:
    """Damped Newton with residual-norm backtracking (factor 1/2).

    Accepted steps never increase the scaled residual inf-norm; the run
    terminates converged when the norm falls below opts.tol_inf, or
    non-converged at max_iter / when no descent step of at least
    2^-max_backtracks survives.
    """
    system = CoupledSystem(net, inverters)
    if x0 is not None:
        x = system.clamp(np.asarray(x0, dtype=float), opts)
    else:
        x = system.clamp(system.initialize(), opts)

    r = system.residual(x)
    rn = float(np.max(np.abs(r)))
    history = [rn]
    trace = [(0, rn, 0.0, 0.0)]
    msg = ""
    converged = rn < opts.tol_inf
    it = 0
    dense = system.n <= system.dense_threshold
    while not converged and it < opts.max_iter:
        it += 1
        try:
            if dense:
                J = system.jacobian_dense(x)
                dx = np.linalg.solve(J, -r)
            else:
                J = system.jacobian(x)
                dx = spla.splu(J.tocsc()).solve(-r)
        except (RuntimeError, np.linalg.LinAlgError) as exc:
            if dense:
                row_sums = np.abs(J).sum(axis=1)
            else:
                row_sums = np.asarray(np.abs(J).sum(axis=1)).ravel()
            dead = [system.row_name(int(i)) for i in
                    np.flatnonzero(row_sums == 0.0)][:5]
            msg = f"singular Jacobian at iteration {it}"
            if dead:
                msg += f"; empty rows: {', '.join(dead)}"
            else:
                msg += f" ({exc})"
            log.warning(msg)
            break
        if not np.all(np.isfinite(dx)):
            msg = f"non-finite Newton step at iteration {it}"
            break
        dx = _limit_step(system, dx, opts.step_limit_v)
        t = opts.damping
        accepted = False
        for _ in range(opts.max_backtracks + 1):
            x_try = system.clamp(x + t * dx, opts)
            r_try = system.residual(x_try)
            rn_try = float(np.max(np.abs(r_try)))
            if math.isfinite(rn_try) and rn_try <= rn:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            msg = f"no descent step found at iteration {it}"
            break
        step = float(np.max(np.abs(x_try - x)))
        x, r, rn = x_try, r_try, rn_try
        history.append(rn)
        trace.append((it, rn, step, t))
        converged = rn < opts.tol_inf
    if not converged and not msg:
        msg = f"max_iter={opts.max_iter} reached, residual {rn:.3e}"

    report = SolveReport(
        converged=converged,
        iterations=it,
        residual_history=history,
        state=x,
        losses=system.losses(x) if inverters else {},
        trace=trace,
        message=msg,
    )
    if converged:
        log.info("converged in %d iterations, residual %.3e", it, rn)
    else:
        log.warning("not converged: %s", msg)
    return report


# ---------------------------------------------------------------------------
# reduced single-inverter solve (stiff AC bus, no feeder)
# ---------------------------------------------------------------------------

def single_bus_network(base: PerUnitBase, v_pu: float = 1.0,
                       phase: str = "a") -> NetworkModel:
    """One slack node holding the inverter's AC terminal at a fixed phasor."""
    node = NodeSpec(id="bus", phases=phase, kind="slack",
                    slack_voltage=(Phasor.from_polar(
                        v_pu, math.degrees(PHASE_ANGLE[phase])),))
    return NetworkModel(base=base, nodes=(node,), branches=(), loads=())


def solve_single_inverter(params: TsbiParams, der, ctrl: control.ControlSpec,
                          base: PerUnitBase, v_pu: float = 1.0,
                          opts: SolverOptions | None = None,
                          x0: np.ndarray | None = None, phase: str = "a"):
    """Solve one inverter against a stiff bus; returns (TsbiState, SolveReport)."""
    if opts is None:
        opts = SolverOptions(tol_inf=1e-12, max_iter=60)
    net = single_bus_network(base, v_pu, phase)
    inv = InverterUnit(id="inv", node="bus", phase=phase,
                       params=params, der=der, ctrl=ctrl)
    report = solve_power_flow(net, [inv], opts, x0=x0)
    state = CoupledSystem(net, [inv]).inverter_state(report.state, 0)
    return state, report
