"""Battery and PV device-model tests with independent brute-force oracles."""

import math

import numpy as np
import pytest

from tsbigrid import dermodels as dm


def bisect_pv_current(p: dm.PvParams, v: float, iters: int = 80) -> float:
    """Pure-bisection oracle for the implicit diode equation."""
    lo, hi = -2.0 * p.i_ph - 2.0, p.i_ph + 1.0
    while dm.pv_residual(p, v, lo) > 0.0:
        lo = 2.0 * lo - 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if dm.pv_residual(p, v, mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def sweep_mpp(p: dm.PvParams, n: int = 2000):
    """Dense bisection-based P(V) sweep; argmax is the MPP oracle."""
    voc = dm.pv_open_circuit_voltage(p)
    vs = np.linspace(1e-3, voc, n)
    ps = np.array([v * bisect_pv_current(p, v) for v in vs])
    k = int(np.argmax(ps))
    return vs[k], ps[k]


BATT = dm.BatteryParams(c_batt=972000.0, v_oc_nom=50.0, r_int=0.036)


class TestBattery:
    def test_open_circuit(self):
        assert dm.battery_terminal_voltage(BATT, 0.5, 0.0) == 50.0

    def test_discharge_drop(self):
        assert dm.battery_terminal_voltage(BATT, 0.5, 10.0) == pytest.approx(49.64)

    def test_charge_rise(self):
        assert dm.battery_terminal_voltage(BATT, 0.5, -10.0) == pytest.approx(50.36)

    def test_soc_range_enforced(self):
        with pytest.raises(ValueError):
            dm.battery_terminal_voltage(BATT, 1.5, 0.0)

    def test_soc_zero_current(self):
        assert dm.soc_update(BATT, 0.5, 0.0, 0.0, 300.0) == 0.5

    def test_soc_trapezoid_hand_value(self):
        soc = dm.soc_update(BATT, 0.5, 10.0, 10.0, 300.0)
        assert soc - 0.5 == pytest.approx(-300.0 * 20.0 / (2.0 * 972000.0),
                                          rel=1e-12)

    def test_trapezoid_equals_rectangle_for_constant_current(self):
        a = dm.soc_update(BATT, 0.5, 7.0, 7.0, 120.0)
        assert a == pytest.approx(0.5 - 120.0 * 7.0 / 972000.0, rel=1e-14)

    def test_time_reversal_symmetry(self):
        soc = 0.42
        fwd = dm.soc_update(BATT, soc, 25.0, 25.0, 600.0)
        back = dm.soc_update(BATT, fwd, -25.0, -25.0, 600.0)
        assert abs(back - soc) < 1e-15

    def test_bound_violation_raises(self):
        with pytest.raises(ValueError):
            dm.soc_update(BATT, 0.999, -400.0, -400.0, 3600.0)

    def test_terminal_power_below_source_power_on_discharge(self):
        i = 30.0
        v = dm.battery_terminal_voltage(BATT, 0.5, i)
        assert v * i < BATT.v_oc_nom * i
        assert BATT.v_oc_nom * i - v * i == pytest.approx(i * i * BATT.r_int)


class TestPvCurrent:
    def test_short_circuit_without_series_resistance(self):
        p = dm.PvParams(i_ph=9.0, i_0=1e-9, r_s=0.0, r_sh=300.0, n_d=1.2, n_s=60)
        assert dm.pv_current(p, 0.0) == pytest.approx(9.0, abs=1e-9)

    def test_dark_shorted(self):
        p = dm.PvParams(i_ph=0.0, i_0=1e-9, r_s=0.0, r_sh=300.0, n_d=1.2, n_s=60)
        assert dm.pv_current(p, 0.0) == pytest.approx(0.0, abs=1e-10)

    def test_matches_bisection_oracle(self):
        p = dm.lg400_pv()
        voc = dm.pv_open_circuit_voltage(p)
        for v in np.linspace(0.0, voc, 25):
            assert dm.pv_current(p, v) == pytest.approx(
                bisect_pv_current(p, v), abs=1e-8)

    def test_strictly_decreasing_in_voltage(self):
        p = dm.lg400_pv()
        voc = dm.pv_open_circuit_voltage(p)
        vs = np.linspace(0.0, voc, 200)
        cur = [dm.pv_current(p, v) for v in vs]
        assert all(b < a for a, b in zip(cur, cur[1:]))


class TestMpp:
    def test_ideal_device_stationarity(self):
        # r_s = 0, huge r_sh: check the defining conditions by substitution
        p = dm.PvParams(i_ph=9.0, i_0=1e-9, r_s=0.0, r_sh=1e12, n_d=1.2, n_s=60)
        mpp = dm.solve_mpp(p)
        assert mpp.converged
        vth = p.v_th
        i_curve = p.i_ph - p.i_0 * (math.exp(mpp.v_mp / vth) - 1.0)
        assert mpp.i_mp == pytest.approx(i_curve, rel=1e-9)
        didv = -p.i_0 * math.exp(mpp.v_mp / vth) / vth
        assert mpp.i_mp + mpp.v_mp * didv == pytest.approx(0.0, abs=1e-7)

    def test_lg400_anchor_point(self):
        mpp = dm.solve_mpp(dm.lg400_pv())
        assert mpp.converged
        assert mpp.v_mp == pytest.approx(40.6, rel=1e-3)
        assert mpp.i_mp == pytest.approx(9.86, rel=1e-3)

    def test_lg400_against_dense_sweep(self):
        p = dm.lg400_pv()
        mpp = dm.solve_mpp(p)
        _, p_best = sweep_mpp(p)
        assert mpp.p_mp >= p_best * (1.0 - 1e-3)
        assert abs(mpp.p_mp - p_best) <= 1e-3 * p_best

    def test_scaling_photocurrent_increases_power(self):
        p = dm.lg400_pv()
        p2 = dm.PvParams(i_ph=2 * p.i_ph, i_0=p.i_0, r_s=p.r_s, r_sh=p.r_sh,
                         n_d=p.n_d, n_s=p.n_s, v_t=p.v_t)
        assert dm.solve_mpp(p2).p_mp > dm.solve_mpp(p).p_mp

    def test_randomized_against_sweep(self):
        r = np.random.default_rng(11)
        for _ in range(10):
            p = dm.PvParams(
                i_ph=r.uniform(2.0, 12.0),
                i_0=10.0 ** r.uniform(-11.0, -8.0),
                r_s=r.uniform(0.0, 0.5),
                r_sh=r.uniform(80.0, 1000.0),
                n_d=r.uniform(0.9, 1.6),
                n_s=int(r.choice([36, 60, 72, 96])))
            mpp = dm.solve_mpp(p)
            assert mpp.converged
            _, p_best = sweep_mpp(p, 500)
            assert abs(mpp.p_mp - p_best) <= 1e-3 * p_best

    def test_mpp_point_invariant(self):
        mpp = dm.solve_mpp(dm.lg400_pv())
        assert mpp.p_mp == pytest.approx(mpp.v_mp * mpp.i_mp, rel=1e-14)
