"""Desk-scale multiperiod battery scheduling behind one inverter.

Two converter abstractions are contrasted on the same cost-minimization
problem: a constant-efficiency model with a complementarity-slackness
product constraint coupling separate charge/discharge variables (CE-CS),
and the full loss-aware converter model with one signed AC power variable
per step.  The signed-variable route cannot charge and discharge at once by
construction; the CE-CS route needs its product constraint driven to the
slackness target by escalating quadratic penalties.

Both solve by projected gradient descent with smooth penalties on the SOC
window; the converter map of the loss-aware route comes from reduced
single-inverter solves at the nominal AC voltage (no feeder).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import control
from .dermodels import BatteryParams, BatterySource
from .netmodel import PerUnitBase
from .smoothing import smooth_max0, smooth_max0_d
from .solver import (
    CoupledSystem,
    InverterUnit,
    SolverOptions,
    single_bus_network,
    solve_power_flow,
)
from .tsbi import N_STATE, STATE_FIELDS, TsbiParams

J_PER_KWH = 3.6e6
EPS_GRID = 1.0  # W^2 smoothing of the import hinge


@dataclass(frozen=True)
class CeCsModel:
    """Constant charge/discharge efficiencies with P_c*P_d = eps_cs coupling."""
    eta_c: float
    eta_d: float
    eps_cs: float = 1.0  # W^2

    def __post_init__(self):
        if not (0.0 < self.eta_c <= 1.0 and 0.0 < self.eta_d <= 1.0):
            raise ValueError("efficiencies must lie in (0, 1]")
        if self.eps_cs <= 0.0:
            raise ValueError("eps_cs must be positive")


@dataclass(frozen=True)
class TsbiDispatchModel:
    """Loss-aware converter evaluated per step at the nominal AC voltage."""
    params: TsbiParams


DispatchModel = Union[CeCsModel, TsbiDispatchModel]


@dataclass(frozen=True)
class DispatchScenario:
    dt: float                    # seconds per step
    price: np.ndarray            # currency per kWh
    load: np.ndarray             # W
    pv: np.ndarray               # W available
    battery: BatteryParams
    soc0: float
    model: DispatchModel
    base: PerUnitBase
    p_max: float = 5000.0        # max |AC power| per step, W

    def __post_init__(self):
        price = np.asarray(self.price, dtype=float)
        load = np.asarray(self.load, dtype=float)
        pv = np.asarray(self.pv, dtype=float)
        if not (price.size == load.size == pv.size) or price.size < 1:
            raise ValueError("price, load and pv must share a length >= 1")
        object.__setattr__(self, "price", price)
        object.__setattr__(self, "load", load)
        object.__setattr__(self, "pv", pv)
        if self.dt <= 0 or self.p_max <= 0:
            raise ValueError("dt and p_max must be positive")

    @property
    def horizon(self) -> int:
        return self.price.size


@dataclass
class Schedule:
    p_inv: np.ndarray            # signed AC export per step, W
    p_charge: np.ndarray         # CE-CS charge variable (zeros for TSBI)
    p_discharge: np.ndarray      # CE-CS discharge variable (zeros for TSBI)
    i_batt: np.ndarray           # battery current per step, A (discharge > 0)
    soc: np.ndarray              # SOC after each step
    grid: np.ndarray             # W imported from the grid
    objective: float             # energy cost of the schedule
    converged: bool
    gradient_norm: float
    iterations: int
    model: str = ""
    notes: str = ""


def complementarity_residual(schedule: Schedule) -> float:
    """max over steps of P_c * P_d; structurally zero for signed schedules."""
    return float(np.max(schedule.p_charge * schedule.p_discharge, initial=0.0))


# ---------------------------------------------------------------------------
# converter map: signed AC power -> battery current
# ---------------------------------------------------------------------------

class _TsbiPowerMap:
    """Reduced single-inverter solves i_batt(p_ac) with warm-started states."""

    def __init__(self, params: TsbiParams, battery: BatteryParams,
                 soc: float, base: PerUnitBase):
        self.params = params
        self.der = BatterySource(battery, soc)
        self.base = base
        self.net = single_bus_network(base, 1.0, "a")
        self.opts = SolverOptions(tol_inf=1e-11, max_iter=40)
        self._warm: np.ndarray | None = None
        self._warm_p: float | None = None
        # the map is one-dimensional and shared by all steps
        self._memo: dict[float, tuple] = {}

    def _solve(self, p_ac: float):
        ctrl = control.ControlSpec(control.ConstantP(p_ac),
                                   control.ConstantQ(0.0))
        inv = InverterUnit("inv", "bus", "a", self.params, self.der, ctrl)
        system = CoupledSystem(self.net, [inv])
        # a warm start only helps near the previous operating point, on the
        # same side of the power-direction flip and away from the smoothed
        # zero-power kink
        x0 = self._warm
        kink = 0.01 * self.params.s_rated
        if x0 is not None and (abs(p_ac - self._warm_p) > 0.2 * self.params.s_rated
                               or p_ac * self._warm_p < 0.0
                               or abs(p_ac) < kink or abs(self._warm_p) < kink):
            x0 = None
        report = solve_power_flow(self.net, [inv], self.opts, x0=x0)
        if not report.converged:
            report = solve_power_flow(self.net, [inv], self.opts)
        if not report.converged:
            raise RuntimeError(
                f"reduced converter solve failed at p_ac={p_ac:.1f} W: "
                f"{report.message}")
        self._warm = report.state
        self._warm_p = p_ac
        return system, report.state

    def current_and_sensitivity(self, p_ac: float) -> tuple[float, float]:
        """(i_batt, d i_batt / d p_ac) at the converged operating point."""
        key = round(float(p_ac), 6)
        hit = self._memo.get(key)
        if hit is not None:
            return hit[0], hit[1]
        system, x = self._solve(p_ac)
        off = system.n_net
        i_idx = off + STATE_FIELDS.index("i_t1")
        v_idx = off + STATE_FIELDS.index("v_t1")
        # implicit sensitivity: J dx = -dR/dp_set; only the p-law row moves
        J = system.jacobian_dense(x)
        rhs = np.zeros(system.n)
        p_row = off + 14  # p_law row
        rhs[p_row] = system._row_scale[p_row]  # dR_scaled/dp_set = -scale
        dx = np.linalg.solve(J, rhs)
        out = (float(x[i_idx]), float(dx[i_idx]),
               float(x[v_idx] * x[i_idx]))
        self._memo[key] = out
        return out[0], out[1]

    def dc_power(self, p_ac: float) -> float:
        key = round(float(p_ac), 6)
        if key in self._memo:
            return self._memo[key][2]
        self.current_and_sensitivity(p_ac)
        return self._memo[key][2]


def effective_weighted_efficiency(params: TsbiParams, operating_grid,
                                  battery: BatteryParams | None = None,
                                  soc: float = 0.5,
                                  base: PerUnitBase | None = None):
    """Energy-weighted converter efficiencies (eta_c, eta_d) over a power grid.

    Charge points are the negative entries of ``operating_grid`` (AC watts),
    discharge points the positive ones; each direction averages total output
    energy over total input energy across its points.
    """
    grid = np.asarray(operating_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("operating grid must be non-empty")
    if battery is None:
        battery = BatteryParams(c_batt=972000.0, v_oc_nom=params.v_dc)
    if base is None:
        base = PerUnitBase(s_base=params.s_rated, v_base=240.0)
    pmap = _TsbiPowerMap(params, battery, soc, base)
    c_in = c_out = d_in = d_out = 0.0
    for p in grid:
        if p == 0.0:
            continue
        p_dc = pmap.dc_power(float(p))
        if p > 0.0:   # discharging: DC in, AC out
            d_in += p_dc
            d_out += p
        else:         # charging: AC in, DC out (into the battery)
            c_in += -p
            c_out += -p_dc
    eta_d = d_out / d_in if d_in > 0.0 else math.nan
    eta_c = c_out / c_in if c_in > 0.0 else math.nan
    return eta_c, eta_d


# ---------------------------------------------------------------------------
# objective and penalties
# ---------------------------------------------------------------------------

def _soc_chain(i_batt: np.ndarray, scn: DispatchScenario) -> np.ndarray:
    """Trapezoidal SOC trajectory; the pre-horizon current is zero."""
    c = scn.battery.c_batt
    prev = np.concatenate(([0.0], i_batt[:-1]))
    return scn.soc0 - np.cumsum(prev + i_batt) * scn.dt / (2.0 * c)


def _soc_weights(horizon: int, k: int, scn: DispatchScenario) -> np.ndarray:
    """d soc_j / d i_k for j = 0..horizon-1 (row vector over j)."""
    w = np.zeros(horizon)
    c = scn.battery.c_batt
    w[k] = -scn.dt / (2.0 * c)
    if k + 1 < horizon:
        w[k + 1:] = -scn.dt / c
    return w


def _cost(price, grid_w, dt) -> float:
    imports = smooth_max0(grid_w, EPS_GRID)
    return float(np.sum(price * imports) * dt / J_PER_KWH)


def _cost_grad_wrt_grid(price, grid_w, dt) -> np.ndarray:
    return price * smooth_max0_d(grid_w, EPS_GRID) * dt / J_PER_KWH


def _soc_penalty(soc, scn, w_soc) -> float:
    lo = np.maximum(scn.battery.soc_min - soc, 0.0)
    hi = np.maximum(soc - scn.battery.soc_max, 0.0)
    return w_soc * float(np.sum(lo * lo + hi * hi))


def _soc_penalty_grad(soc, scn, w_soc) -> np.ndarray:
    lo = np.maximum(scn.battery.soc_min - soc, 0.0)
    hi = np.maximum(soc - scn.battery.soc_max, 0.0)
    return w_soc * (2.0 * hi - 2.0 * lo)


# ---------------------------------------------------------------------------
# the two dispatch solvers
# ---------------------------------------------------------------------------

def _projected_descent(x0, objective, gradient, project, max_iter=400,
                       tol_step=1e-3, alpha0=None):
    """Plain projected gradient descent with adaptive step and backtracking.

    Returns (x, f, projected_gradient_norm, iterations, stalled) where
    stalled=True means descent stopped on its own rather than at max_iter.
    """
    x = project(x0.copy())
    f = objective(x)
    g = gradient(x)
    alpha = alpha0 if alpha0 is not None else 1.0
    it = 0
    stalled = False
    for it in range(1, max_iter + 1):
        moved = False
        for _ in range(40):
            x_try = project(x - alpha * g)
            f_try = objective(x_try)
            if f_try < f - 1e-15:
                moved = True
                break
            alpha *= 0.5
            if alpha * float(np.max(np.abs(g), initial=0.0)) < tol_step:
                break
        if not moved:
            stalled = True
            break
        step = float(np.max(np.abs(x_try - x)))
        x, f = x_try, f_try
        g = gradient(x)
        alpha *= 2.0
        if step < tol_step:
            stalled = True
            break
    pg = x - project(x - g)  # projected-gradient stationarity measure
    return x, f, float(np.linalg.norm(pg)), it, stalled


def solve_dispatch(scn: DispatchScenario, max_iter: int = 300,
                   w_soc: float = 1e6) -> Schedule:
    if isinstance(scn.model, TsbiDispatchModel):
        return _solve_tsbi(scn, max_iter, w_soc)
    if isinstance(scn.model, CeCsModel):
        return _solve_cecs(scn, max_iter, w_soc)
    raise TypeError(f"unknown dispatch model {scn.model!r}")


def _arbitrage_seed(scn: DispatchScenario, round_trip_eta: float = 0.8) -> np.ndarray:
    """Heuristic start: discharge at top-price hours, pre-charge at cheap ones.

    Sized from the SOC window so the seed is feasible; descent polishes it.
    """
    horizon = scn.horizon
    batt = scn.battery
    e_cap = batt.c_batt * batt.v_oc_nom  # J at nominal voltage
    peak = scn.price >= np.max(scn.price) - 1e-12
    if np.all(peak) or not np.any(peak):
        return np.zeros(horizon)
    first_peak = int(np.argmax(peak))
    p = np.zeros(horizon)
    headroom = (batt.soc_max - scn.soc0) * e_cap
    cheap = np.flatnonzero(~peak[:first_peak])
    if cheap.size:
        p_chg = min(scn.p_max, headroom / (cheap.size * scn.dt) * round_trip_eta)
        p[cheap] = -p_chg
        stored = (scn.soc0 - batt.soc_min) * e_cap + p_chg * cheap.size * scn.dt
    else:
        stored = (scn.soc0 - batt.soc_min) * e_cap
    n_peak = int(np.sum(peak))
    p[peak] = min(scn.p_max, round_trip_eta * stored / (n_peak * scn.dt))
    return p


def _solve_tsbi(scn: DispatchScenario, max_iter: int, w_soc: float) -> Schedule:
    horizon = scn.horizon
    pmap = _TsbiPowerMap(scn.model.params, scn.battery, scn.soc0, scn.base)

    cache: dict[bytes, tuple] = {}

    def evaluate(p: np.ndarray):
        key = p.tobytes()
        if key not in cache:
            cur = np.empty(horizon)
            sens = np.empty(horizon)
            for k in range(horizon):
                cur[k], sens[k] = pmap.current_and_sensitivity(float(p[k]))
            soc = _soc_chain(cur, scn)
            cache.clear()
            cache[key] = (cur, sens, soc)
        return cache[key]

    def objective(p):
        cur, _, soc = evaluate(p)
        grid = scn.load - scn.pv - p
        return _cost(scn.price, grid, scn.dt) + _soc_penalty(soc, scn, w_soc)

    def gradient(p):
        cur, sens, soc = evaluate(p)
        grid = scn.load - scn.pv - p
        g = -_cost_grad_wrt_grid(scn.price, grid, scn.dt)
        lam = _soc_penalty_grad(soc, scn, w_soc)
        for k in range(horizon):
            g[k] += float(lam @ _soc_weights(horizon, k, scn)) * sens[k]
        return g

    def project(p):
        return np.clip(p, -scn.p_max, scn.p_max)

    p0 = project(_arbitrage_seed(scn))
    p, _, gnorm, iters, stalled = _projected_descent(
        p0, objective, gradient, project, max_iter=max_iter, alpha0=2e7)

    cur, _, soc = evaluate(p)
    grid = scn.load - scn.pv - p
    cost = _cost(scn.price, grid, scn.dt)
    idle_cost = _cost(scn.price, scn.load - scn.pv, scn.dt)
    notes = ""
    if cost > idle_cost:
        # descent safeguard: never return worse than leaving the battery idle
        p = np.zeros(horizon)
        cur, _, soc = evaluate(p)
        grid = scn.load - scn.pv - p
        cost = idle_cost
        notes = "fell back to idle schedule"
    return Schedule(
        p_inv=p, p_charge=np.zeros(horizon), p_discharge=np.zeros(horizon),
        i_batt=cur, soc=soc, grid=grid, objective=cost, converged=stalled,
        gradient_norm=gnorm, iterations=iters, model="tsbi", notes=notes)


def _solve_cecs(scn: DispatchScenario, max_iter: int, w_soc: float) -> Schedule:
    horizon = scn.horizon
    m: CeCsModel = scn.model
    v_oc = scn.battery.v_oc_nom

    def split(x):
        return x[:horizon], x[horizon:]

    def currents(pc, pd):
        return (pd / m.eta_d - m.eta_c * pc) / v_oc

    def objective_with(w_cs):
        def objective(x):
            pc, pd = split(x)
            soc = _soc_chain(currents(pc, pd), scn)
            grid = scn.load - scn.pv - (pd - pc)
            cs = pc * pd - m.eps_cs
            return (_cost(scn.price, grid, scn.dt)
                    + _soc_penalty(soc, scn, w_soc)
                    + w_cs * float(np.sum(cs * cs)))
        return objective

    def gradient_with(w_cs):
        def gradient(x):
            pc, pd = split(x)
            cur = currents(pc, pd)
            soc = _soc_chain(cur, scn)
            grid = scn.load - scn.pv - (pd - pc)
            gc = _cost_grad_wrt_grid(scn.price, grid, scn.dt)
            lam = _soc_penalty_grad(soc, scn, w_soc)
            # SOC chain pulled back to currents
            lam_i = np.empty(horizon)
            for k in range(horizon):
                lam_i[k] = float(lam @ _soc_weights(horizon, k, scn))
            cs = 2.0 * w_cs * (pc * pd - m.eps_cs)
            g_pc = gc + lam_i * (-m.eta_c / v_oc) + cs * pd
            g_pd = -gc + lam_i / (m.eta_d * v_oc) + cs * pc
            return np.concatenate([g_pc, g_pd])
        return gradient

    def project(x):
        return np.clip(x, 0.0, scn.p_max)

    seed = _arbitrage_seed(scn)
    x = np.concatenate([np.maximum(-seed, 0.0), np.maximum(seed, 0.0)])
    x = project(x)
    w_cs = 1e-8
    gnorm, iters_total = 0.0, 0
    stalled = True
    for _ in range(5):  # escalate the complementarity penalty
        x, _, gnorm, iters, stalled = _projected_descent(
            x, objective_with(w_cs), gradient_with(w_cs), project,
            max_iter=max_iter, alpha0=2e7)
        iters_total += iters
        w_cs *= 10.0

    pc, pd = split(x)
    # slackness polish: scale the smaller variable so P_c*P_d <= eps_cs
    over = pc * pd > m.eps_cs
    for k in np.flatnonzero(over):
        if pc[k] <= pd[k]:
            pc[k] = m.eps_cs / pd[k]
        else:
            pd[k] = m.eps_cs / pc[k]

    cur = currents(pc, pd)
    soc = _soc_chain(cur, scn)
    p_net = pd - pc
    grid = scn.load - scn.pv - p_net
    cost = _cost(scn.price, grid, scn.dt)
    idle_cost = _cost(scn.price, scn.load - scn.pv, scn.dt)
    notes = ""
    if cost > idle_cost:
        pc = np.zeros(horizon)
        pd = np.zeros(horizon)
        cur = currents(pc, pd)
        soc = _soc_chain(cur, scn)
        p_net = pd - pc
        grid = scn.load - scn.pv - p_net
        cost = idle_cost
        notes = "fell back to idle schedule"
    return Schedule(
        p_inv=p_net, p_charge=pc, p_discharge=pd, i_batt=cur, soc=soc,
        grid=grid, objective=cost, converged=stalled, gradient_norm=gnorm,
        iterations=iters_total, model="ce_cs", notes=notes)


# ---------------------------------------------------------------------------
# synthetic day fixture
# ---------------------------------------------------------------------------

def two_tier_day_fixture(model: DispatchModel,
                         battery: BatteryParams | None = None,
                         base: PerUnitBase | None = None) -> DispatchScenario:
    """24-step hourly day: cheap off-peak, 17:00-21:00 peak price, midday PV
    bell, evening-peak load."""
    hours = np.arange(24)
    price = np.where((hours >= 17) & (hours < 21), 0.30, 0.10)
    pv = 4000.0 * np.exp(-0.5 * ((hours - 12.5) / 2.2) ** 2)
    load = (900.0
            + 1500.0 * np.exp(-0.5 * ((hours - 19.0) / 2.0) ** 2)
            + 400.0 * np.exp(-0.5 * ((hours - 7.0) / 1.5) ** 2))
    if battery is None:
        battery = BatteryParams(c_batt=972000.0, v_oc_nom=50.0, r_int=0.036,
                                soc_min=0.1, soc_max=0.9)
    if base is None:
        base = PerUnitBase(s_base=10000.0, v_base=240.0)
    return DispatchScenario(dt=3600.0, price=price, load=load, pv=pv,
                            battery=battery, soc0=0.5, model=model,
                            base=base, p_max=5000.0)
