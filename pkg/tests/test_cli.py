"""End-to-end command-line tests: artifact emission, exit codes, paired
control-mode comparisons."""

import json
import os

import numpy as np
import pytest

from tsbigrid import cli, report, scenario
from tsbigrid.fixtures import deadband_distance, feeder4_scenario


def run(argv):
    return cli.main(argv)


@pytest.fixture()
def demo_path(tmp_path):
    path = tmp_path / "demo.json"
    scenario.save_scenario(feeder4_scenario(), path)
    return str(path)


class TestPf:
    def test_converged_run_writes_artifacts(self, demo_path, tmp_path):
        out = str(tmp_path / "pf")
        assert run(["pf", "--scenario", demo_path, "--out", out]) == 0
        for name in ("voltages.csv", "inverters.csv", "trace.csv",
                     "voltages.png", "trace.png", "inverters.png"):
            assert os.path.exists(os.path.join(out, name)), name
        header, rows = report.read_csv(os.path.join(out, "voltages.csv"))
        assert header == ["node", "phase", "v_re_pu", "v_im_pu", "v_mag_pu",
                          "angle_deg"]
        mags = [float(r[4]) for r in rows]
        assert all(0.8 < m < 1.1 for m in mags)
        header, _ = report.read_csv(os.path.join(out, "inverters.csv"))
        assert header == ["inverter_id", "p_t1_w", "p_t2_w", "fsc_sw_w",
                          "fsc_cond_w", "ssc_sw_w", "ssc_rr_w", "ssc_cond_w",
                          "lcl_w", "eta"]

    def test_no_plot_skips_figures(self, demo_path, tmp_path):
        out = str(tmp_path / "pf2")
        assert run(["pf", "--scenario", demo_path, "--out", out,
                    "--no-plot"]) == 0
        assert os.path.exists(os.path.join(out, "voltages.csv"))
        assert not os.path.exists(os.path.join(out, "voltages.png"))

    def test_plain_power_flow_without_inverters(self, tmp_path):
        scn = feeder4_scenario()
        scn.inverters = []
        path = tmp_path / "plain.json"
        scenario.save_scenario(scn, path)
        out = str(tmp_path / "plain_out")
        assert run(["pf", "--scenario", str(path), "--out", out]) == 0
        _, rows = report.read_csv(os.path.join(out, "inverters.csv"))
        assert rows == []

    def test_voltvar_moves_buses_toward_dead_band(self, tmp_path):
        def solve(voltvar, tag):
            path = tmp_path / f"{tag}.json"
            scenario.save_scenario(feeder4_scenario(p_set=3000.0,
                                                    voltvar=voltvar), path)
            out = str(tmp_path / tag)
            assert run(["pf", "--scenario", str(path), "--out", out]) == 0
            _, rows = report.read_csv(os.path.join(out, "voltages.csv"))
            return {(r[0], r[1]): float(r[4]) for r in rows}

        upf = solve(False, "upf")
        vv = solve(True, "vv")
        buses = [("n2", "a"), ("n3", "b")]
        d_upf = np.mean([deadband_distance(upf[b]) for b in buses])
        d_vv = np.mean([deadband_distance(vv[b]) for b in buses])
        assert d_vv <= d_upf

    def test_parse_error_exit_2(self, tmp_path):
        path = tmp_path / "bad.json"
        doc = scenario.scenario_to_dict(feeder4_scenario())
        doc["inverters"][0]["tsbi"]["vdc_typo"] = 1.0
        path.write_text(json.dumps(doc))
        assert run(["pf", "--scenario", str(path), "--out",
                    str(tmp_path / "x")]) == 2

    def test_missing_file_exit_2(self, tmp_path):
        assert run(["pf", "--scenario", str(tmp_path / "nope.json"),
                    "--out", str(tmp_path / "x")]) == 2

    def test_non_convergence_exit_3_with_artifacts(self, demo_path, tmp_path):
        out = str(tmp_path / "stall")
        code = run(["pf", "--scenario", demo_path, "--out", out,
                    "--max-iter", "1"])
        assert code == 3
        assert os.path.exists(os.path.join(out, "voltages.csv"))
        assert os.path.exists(os.path.join(out, "trace.csv"))


class TestSweep:
    def test_small_grid(self, tmp_path):
        out = str(tmp_path / "sweep")
        assert run(["sweep-eff", "--np", "6", "--nq", "3", "--out", out]) == 0
        header, rows = report.read_csv(os.path.join(out, "efficiency.csv"))
        assert header[:3] == ["p_w", "q_var", "eta"]
        assert len(rows) == 18
        # row-major emission: p varies slowest
        ps = [float(r[0]) for r in rows]
        assert ps == sorted(ps)
        assert os.path.exists(os.path.join(out, "efficiency.png"))

    def test_threaded_matches_serial(self, tmp_path):
        a = str(tmp_path / "serial")
        b = str(tmp_path / "threads")
        assert run(["sweep-eff", "--np", "4", "--nq", "3", "--out", a,
                    "--no-plot"]) == 0
        assert run(["sweep-eff", "--np", "4", "--nq", "3", "--out", b,
                    "--no-plot", "--threads", "4"]) == 0
        with open(os.path.join(a, "efficiency.csv"), "rb") as fa, \
                open(os.path.join(b, "efficiency.csv"), "rb") as fb:
            assert fa.read() == fb.read()

    def test_empty_range_exit_2(self, tmp_path):
        assert run(["sweep-eff", "--p-min", "5000", "--p-max", "1000",
                    "--out", str(tmp_path / "bad")]) == 2


class TestOthers:
    def test_mpp_cmd(self, tmp_path):
        out = str(tmp_path / "mpp")
        assert run(["mpp", "--out", out]) == 0
        header, rows = report.read_csv(os.path.join(out, "mpp.csv"))
        assert float(rows[0][0]) == pytest.approx(40.6, rel=1e-3)
        assert os.path.exists(os.path.join(out, "pv_curve.png"))

    def test_mpp_custom_params(self, tmp_path):
        out = str(tmp_path / "mpp2")
        assert run(["mpp", "--i-ph", "9.0", "--i-0", "1e-9", "--r-s", "0.2",
                    "--r-sh", "300", "--n-d", "1.2", "--n-s", "60",
                    "--out", out]) == 0

    def test_mpp_invalid_params_exit_2(self, tmp_path):
        assert run(["mpp", "--i-ph", "9.0", "--out",
                    str(tmp_path / "bad")]) == 2

    def test_dispatch_cecs(self, tmp_path):
        out = str(tmp_path / "disp")
        assert run(["dispatch", "--model", "ce_cs", "--eta-c", "0.95",
                    "--eta-d", "0.95", "--out", out]) == 0
        header, rows = report.read_csv(os.path.join(out,
                                                    "schedule_ce_cs.csv"))
        assert header == ["step", "price", "load_w", "pv_w", "p_inv_w",
                          "soc", "grid_w", "cost"]
        assert len(rows) == 24
        assert os.path.exists(os.path.join(out, "dispatch.png"))

    def test_check_jacobian(self, tmp_path):
        out = str(tmp_path / "jac")
        assert run(["check-jacobian", "--n-states", "5", "--out", out]) == 0
        _, rows = report.read_csv(os.path.join(out, "jacobian_check.csv"))
        assert len(rows) == 5
        assert all(float(r[1]) < 1e-5 for r in rows)

    def test_validate_td_short(self, tmp_path):
        out = str(tmp_path / "td")
        code = run(["validate-td", "--duration", "0.15", "--record-from",
                    "0.05", "--window", "5", "--no-calibrate", "--out", out,
                    "--dump-waveforms"])
        assert code == 0
        header, rows = report.read_csv(os.path.join(out, "td_validation.csv"))
        assert rows[0][0] == "model" and rows[1][0] == "benchmark"
        errs = [float(v) for v in rows[2][1:6]]
        assert max(errs) < 5.0
        assert os.path.exists(os.path.join(out, "td_waveforms.csv"))
        assert os.path.exists(os.path.join(out, "td_validation.png"))
