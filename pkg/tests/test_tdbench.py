"""Switching-benchmark tests: waveform sanity, metric extraction against
closed forms, energy audit, step-size independence, and the reference error
table."""

import math

import numpy as np
import pytest

from tsbigrid import tdbench, tsbi

SQRT2 = math.sqrt(2.0)


@pytest.fixture(scope="module")
def stages():
    return tsbi.default_ssc_params(), tsbi.lcl_reznik()


@pytest.fixture(scope="module")
def operating_point(stages):
    """Calibration-free 1440 W forward operating point shared by the tests."""
    ssc, lcl = stages
    m_r, m_i = tdbench.find_modulation_for_power(ssc, lcl, 400.0, 240 + 0j,
                                                 1440.0, 0.0)
    op = tdbench.phasor_operating_point(ssc, lcl, 400.0, m_r, m_i, 240 + 0j)
    return m_r, m_i, op


def synthetic_wave(i_fn, gate_weight_fn, dt=1e-5, cycles=4, freq=60.0,
                   ssc=None, lcl=None):
    """Build a Waveforms record from closed-form current and gating weights.

    gate_weight_fn(theta) returns (transistor_weight, diode_weight) of the
    two-leg conduction path at electrical angle theta.
    """
    n = int(round(cycles / freq / dt))
    t = np.arange(n + 1) * dt
    th = 2 * math.pi * freq * t
    i = i_fn(th)
    tm = 0.5 * (th[:-1] + th[1:])
    im = i_fn(tm)
    wt, wd = gate_weight_fn(tm)
    z = np.zeros(n)
    return tdbench.Waveforms(
        dt=dt, ref_freq=freq, v_dc=400.0,
        i1=i, i2=np.zeros(n + 1), v_c=np.zeros(n + 1), v_g=np.zeros(n + 1),
        s_a=np.zeros(n + 1, np.int8), s_b=np.zeros(n + 1, np.int8),
        it_int=wt * np.abs(im) * dt, it2_int=wt * im * im * dt,
        id_int=wd * np.abs(im) * dt, id2_int=wd * im * im * dt,
        drop_int=z.copy(), vout_int=z.copy(), esrc_int=z.copy(),
        edev_int=z.copy(), efil_int=z.copy(), eload_int=z.copy(),
        ssc=ssc or tsbi.default_ssc_params(), lcl=lcl or tsbi.lcl_reznik(),
        load=tdbench.GridLoad(0.0), record_start=0)


class TestExtraction:
    def test_rectified_sine_mean(self):
        # sqrt(2)*10*sin through ideal half-cycle gating on one device path
        wave = synthetic_wave(
            lambda th: SQRT2 * 10.0 * np.sin(th),
            lambda th: (4.0 * (np.sin(th) > 0), np.zeros_like(th)))
        met = tdbench.extract_metrics(wave, 4)
        assert met.i_t_avg == pytest.approx(2 * SQRT2 * 10.0 / (2 * math.pi),
                                            rel=1e-3)
        assert met.i_t_avg == pytest.approx(4.502, rel=1e-2)

    def test_dc_waveform_avg_equals_rms(self):
        wave = synthetic_wave(
            lambda th: 7.0 * np.ones_like(th),
            lambda th: (4.0 * np.ones_like(th), np.zeros_like(th)))
        met = tdbench.extract_metrics(wave, 4)
        assert met.i_t_avg == pytest.approx(7.0, rel=1e-12)
        assert met.i_t_rms == pytest.approx(7.0, rel=1e-12)

    def test_rms_not_below_avg(self):
        wave = synthetic_wave(
            lambda th: SQRT2 * 5.0 * np.sin(th),
            lambda th: (2.0 * np.ones_like(th), 2.0 * np.ones_like(th)))
        met = tdbench.extract_metrics(wave, 4)
        assert met.i_t_rms >= met.i_t_avg
        assert met.i_d_rms >= met.i_d_avg

    def test_window_validation(self):
        wave = synthetic_wave(lambda th: np.sin(th),
                              lambda th: (np.ones_like(th), np.zeros_like(th)))
        with pytest.raises(ValueError):
            tdbench.extract_metrics(wave, 50)


class TestReferenceErrorTable:
    MODEL = tdbench.TdMetrics(4.4612, 7.7975, 0.8893, 3.1363, 1.4567, 1.0)
    BENCH = tdbench.TdMetrics(4.4310, 7.8160, 0.8662, 3.0870, 1.4010, 1.0)

    def test_published_reference_magnitudes(self):
        err = tdbench.compare_with_steady_state(self.BENCH, self.MODEL)
        expect = {"i_t_avg": 0.68, "i_t_rms": 0.24, "i_d_avg": 2.67,
                  "i_d_rms": 1.60, "v_cond_avg": 3.97}
        # the published row is rounded to two decimals after computing the
        # ratios from unrounded data, so allow one unit in the last place
        for name, val in expect.items():
            assert err[name] == pytest.approx(val, abs=0.01)

    def test_identical_inputs_zero_error(self):
        err = tdbench.compare_with_steady_state(self.BENCH, self.BENCH)
        assert all(v == 0.0 for v in err.values())

    def test_scaled_model_shows_scale_error(self):
        scaled = tdbench.TdMetrics(*(1.1 * v for v in self.BENCH))
        err = tdbench.compare_with_steady_state(self.BENCH, scaled)
        for v in err.values():
            assert v == pytest.approx(10.0, abs=1e-9)


class TestSimulation:
    def test_zero_modulation_decays(self, stages):
        ssc, lcl = stages
        cfg = tdbench.TdConfig(v_dc=400.0, m=0.0, theta=0.0,
                               load=tdbench.GridLoad(0.0), duration=0.12,
                               record_from=0.05)
        wave = tdbench.simulate(cfg, ssc, lcl, (5.0, 5.0, 0.0))
        met = tdbench.extract_metrics(wave, 3)
        assert met.i_t_avg < 1e-3
        assert met.i_d_avg < 1e-3
        assert abs(met.p_out_avg) < 0.1

    def test_resistive_load_fundamental_rms(self, stages):
        ssc, lcl = stages
        cfg = tdbench.TdConfig(v_dc=400.0, m=0.8, theta=0.0,
                               load=tdbench.ImpedanceLoad(30.0),
                               duration=0.25, record_from=0.1)
        wave = tdbench.simulate(cfg, ssc, lcl)
        n_win = int(round(6 / (60.0 * cfg.dt)))
        vout = tdbench.step_average_vout(wave)[-n_win:]
        spec = np.fft.rfft(vout) / n_win
        freqs = np.fft.rfftfreq(n_win, cfg.dt)
        k = int(np.argmin(np.abs(freqs - 60.0)))
        fund_rms = SQRT2 * np.abs(spec[k])
        assert fund_rms == pytest.approx(0.8 * 400.0 / SQRT2, rel=0.02)

    def test_energy_audit_within_half_percent(self, stages, operating_point):
        ssc, lcl = stages
        m_r, m_i, op = operating_point
        cfg = tdbench.TdConfig(v_dc=400.0, m=math.hypot(m_r, m_i),
                               theta=math.atan2(m_i, m_r),
                               load=tdbench.GridLoad(240.0),
                               duration=0.2, record_from=0.08)
        wave = tdbench.simulate(cfg, ssc, lcl,
                                tdbench.initial_state_from_phasors(op, lcl))
        audit = tdbench.energy_audit(wave, 6)
        assert audit["relative_mismatch"] < 0.005
        assert audit["device"] > 0.0
        assert audit["filter"] > 0.0

    def test_step_halving_stability(self, stages, operating_point):
        ssc, lcl = stages
        m_r, m_i, op = operating_point
        init = tdbench.initial_state_from_phasors(op, lcl)
        mets = []
        for dt in (1e-6, 0.5e-6):
            cfg = tdbench.TdConfig(v_dc=400.0, m=math.hypot(m_r, m_i),
                                   theta=math.atan2(m_i, m_r),
                                   load=tdbench.GridLoad(240.0),
                                   duration=0.3, record_from=0.1, dt=dt)
            wave = tdbench.simulate(cfg, ssc, lcl, init)
            mets.append(tdbench.extract_metrics(wave, 10))
        for name in tdbench.TdMetrics._fields:
            a, b = getattr(mets[0], name), getattr(mets[1], name)
            assert abs(a - b) / abs(b) < 0.002, name

    def test_leg_conduction_exclusive(self, stages, operating_point):
        ssc, lcl = stages
        m_r, m_i, op = operating_point
        cfg = tdbench.TdConfig(v_dc=400.0, m=math.hypot(m_r, m_i),
                               theta=math.atan2(m_i, m_r),
                               load=tdbench.GridLoad(240.0),
                               duration=0.12, record_from=0.05)
        wave = tdbench.simulate(cfg, ssc, lcl,
                                tdbench.initial_state_from_phasors(op, lcl))
        a_t, b_t = tdbench.device_conduction_masks(wave.i1, wave.s_a, wave.s_b)
        a_d = ~a_t & (wave.i1 != 0.0)
        b_d = ~b_t & (wave.i1 != 0.0)
        assert not np.any(a_t & a_d)
        assert not np.any(b_t & b_d)
        # both legs conduct one device each: combined conduction-time weight
        # never exceeds two leg-paths at the peak current
        peak = np.max(np.abs(wave.i1))
        assert np.all(wave.it_int + wave.id_int <= 2 * peak * wave.dt + 1e-12)

    def test_rms_identity_against_fundamental(self, stages, operating_point):
        ssc, lcl = stages
        m_r, m_i, op = operating_point
        cfg = tdbench.TdConfig(v_dc=400.0, m=math.hypot(m_r, m_i),
                               theta=math.atan2(m_i, m_r),
                               load=tdbench.GridLoad(240.0),
                               duration=0.2, record_from=0.08)
        wave = tdbench.simulate(cfg, ssc, lcl,
                                tdbench.initial_state_from_phasors(op, lcl))
        met = tdbench.extract_metrics(wave, 6)
        # the oracle's own fundamental current ties the identity
        n_win = int(round(6 / (60.0 * cfg.dt)))
        i1 = wave.i1[-n_win:]
        spec = np.fft.rfft(i1) / n_win
        freqs = np.fft.rfftfreq(n_win, cfg.dt)
        k = int(np.argmin(np.abs(freqs - 60.0)))
        i_fund_rms = SQRT2 * np.abs(spec[k])
        assert met.i_t_rms ** 2 + met.i_d_rms ** 2 == pytest.approx(
            i_fund_rms ** 2 / 2.0, rel=0.03)

    def test_instability_detected(self, stages):
        ssc, _ = stages
        lcl = tsbi.LclParams(l1=2.23e-3, l2=5e-8, c=15e-6, r_damp=0.55,
                             r1=0.005, r2=0.005)
        cfg = tdbench.TdConfig(v_dc=400.0, m=0.8, theta=0.0,
                               load=tdbench.GridLoad(240.0), duration=0.05,
                               record_from=0.01, dt=2e-6)
        with pytest.raises(FloatingPointError):
            tdbench.simulate(cfg, ssc, lcl)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            tdbench.TdConfig(v_dc=400.0, m=0.8, theta=0.0,
                             load=tdbench.GridLoad(240.0), dt=5e-6)
        with pytest.raises(ValueError):
            tdbench.TdConfig(v_dc=400.0, m=1.5, theta=0.0,
                             load=tdbench.GridLoad(240.0))


class TestModelPredictions:
    def test_phasor_operating_point_consistency(self, stages, operating_point):
        ssc, lcl = stages
        m_r, m_i, op = operating_point
        # the fixed-point drop must satisfy the filter KVL chain
        e = op["e"]
        z1 = complex(lcl.r1, lcl.x1)
        z2 = complex(lcl.r2, lcl.x2)
        yc = 1.0 / complex(lcl.r_damp, -lcl.xc)
        lhs = e - op["v_cond"] - op["v_m"] - z1 * op["i_ac"]
        assert abs(lhs) < 1e-9
        assert abs(op["i_ac"] - yc * op["v_m"] - op["i_t2"]) < 1e-9
        assert abs(op["v_m"] - 240.0 - z2 * op["i_t2"]) < 1e-9

    def test_conduction_drop_average_against_device_currents(self, stages):
        ssc, _ = stages
        avg_t, _, avg_d, _ = tsbi.ssc_device_currents(0.85, 8.0)
        v = tdbench.conduction_drop_average(ssc, 0.85, 8.0)
        expect = (2 * ssc.v_t * (0.5 + 0.85 / math.pi)
                  + 2 * ssc.v_d * (0.5 - 0.85 / math.pi)
                  + 4 * ssc.r_t * avg_t + 4 * ssc.r_d * avg_d)
        assert v == pytest.approx(expect, rel=1e-12)
