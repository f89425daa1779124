"""Scenario schema tests: strict parsing, round-trip identity, presets,
full-precision CSV re-ingestion."""

import json

import numpy as np
import pytest

from tsbigrid import control, report, scenario, solver
from tsbigrid.fixtures import feeder4_scenario


@pytest.fixture()
def demo():
    return feeder4_scenario(voltvar=True)


class TestRoundTrip:
    def test_dict_identity(self, demo):
        d1 = scenario.scenario_to_dict(demo)
        d2 = scenario.scenario_to_dict(scenario.parse_scenario(d1))
        assert d1 == d2

    def test_file_identity(self, demo, tmp_path):
        path = tmp_path / "scn.json"
        scenario.save_scenario(demo, path)
        loaded = scenario.load_scenario(path)
        assert scenario.scenario_to_dict(loaded) == scenario.scenario_to_dict(demo)

    def test_json_serializable(self, demo):
        json.dumps(scenario.scenario_to_dict(demo))


class TestStrictSchema:
    def base_doc(self, demo):
        return scenario.scenario_to_dict(demo)

    def test_unknown_root_field(self, demo):
        doc = self.base_doc(demo)
        doc["phyics"] = {}
        with pytest.raises(scenario.ScenarioError, match="phyics"):
            scenario.parse_scenario(doc)

    def test_unknown_node_field(self, demo):
        doc = self.base_doc(demo)
        doc["nodes"][0]["voltage"] = 1.0
        with pytest.raises(scenario.ScenarioError, match="voltage"):
            scenario.parse_scenario(doc)

    def test_misspelled_converter_parameter(self, demo):
        doc = self.base_doc(demo)
        doc["inverters"][0]["tsbi"]["fsc"]["r_tt"] = 0.01
        with pytest.raises(scenario.ScenarioError, match="r_tt"):
            scenario.parse_scenario(doc)

    def test_unknown_control_law(self, demo):
        doc = self.base_doc(demo)
        doc["inverters"][0]["control"]["q"]["law"] = "volt_watt"
        with pytest.raises(scenario.ScenarioError, match="volt_watt"):
            scenario.parse_scenario(doc)

    def test_missing_required(self, demo):
        doc = self.base_doc(demo)
        del doc["base"]
        with pytest.raises(scenario.ScenarioError, match="base"):
            scenario.parse_scenario(doc)

    def test_invalid_json_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(scenario.ScenarioError):
            scenario.load_scenario(path)

    def test_mppt_on_battery_rejected(self, demo):
        doc = self.base_doc(demo)
        doc["inverters"][0]["der"] = {"kind": "battery", "preset": "powerwall3",
                                      "soc": 0.5}
        doc["inverters"][0]["control"]["p"] = {"law": "mppt"}
        with pytest.raises(scenario.ScenarioError, match="PV"):
            scenario.parse_scenario(doc)

    def test_inverter_attachment_checked(self, demo):
        doc = self.base_doc(demo)
        doc["inverters"][0]["node"] = "missing"
        with pytest.raises(scenario.ScenarioError, match="missing"):
            scenario.parse_scenario(doc)

    def test_nonfinite_number_rejected(self, demo):
        doc = self.base_doc(demo)
        doc["loads"][0]["p"] = float("nan")
        with pytest.raises(scenario.ScenarioError):
            scenario.parse_scenario(doc)


class TestPresets:
    def test_der_presets(self, demo):
        doc = scenario.scenario_to_dict(demo)
        doc["inverters"][0]["der"] = {"kind": "battery",
                                      "preset": "powerwall3", "soc": 0.4}
        doc["inverters"][1]["der"] = {"kind": "pv", "preset": "lg400"}
        scn = scenario.parse_scenario(doc)
        assert scn.inverters[0].der.params.c_batt == 972000.0
        assert scn.inverters[0].der.params.v_oc_nom == 50.0
        assert scn.inverters[0].der.params.r_int == 0.036
        assert scn.inverters[1].der.params.n_s == 72

    def test_tsbi_defaults_carry_datasheet_values(self, demo):
        scn = scenario.parse_scenario(scenario.scenario_to_dict(demo))
        p = scn.inverters[0].params
        assert p.fsc.v_t0 == 0.30
        assert p.fsc.r_t == 0.025
        assert p.ssc.v_d == 1.10
        assert p.ssc.t_doff == 75e-9
        assert p.fsc.f_sw == 50e3
        assert p.ssc.f_sw == 16e3
        assert p.lcl.l1 == 2.23e-3
        assert p.lcl.r_damp == 0.55

    def test_voltvar_defaults(self, demo):
        scn = scenario.parse_scenario(scenario.scenario_to_dict(demo))
        q = scn.inverters[0].ctrl.q_law
        assert (q.v1, q.v2, q.v3, q.v4) == (0.90, 0.98, 1.02, 1.10)
        assert q.q_max == 0.25 * scn.inverters[0].params.s_rated


class TestCsvReingestion:
    def test_float_repr_round_trip(self):
        r = np.random.default_rng(9)
        for x in r.uniform(-1e6, 1e6, 200):
            assert float(report.fmt(float(x))) == float(x)
        for x in (1e-308, 1.5e300, 0.1, 2.0 / 3.0):
            assert float(report.fmt(x)) == x

    def test_reingested_solution_reproduces_residual(self, demo, tmp_path):
        net = demo.network()
        rep = solver.solve_power_flow(net, demo.inverters, demo.solver)
        assert rep.converged
        rows = []
        for k, (node, ph) in enumerate(net.slots):
            rows.append((node, ph, rep.state[2 * k], rep.state[2 * k + 1]))
        path = tmp_path / "voltages.csv"
        report.write_csv(path, ["node", "phase", "v_re_pu", "v_im_pu"], rows)

        _, parsed = report.read_csv(path)
        x2 = rep.state.copy()
        for node, ph, vr, vi in parsed:
            k = net.slot_of[(node, ph)]
            x2[2 * k] = float(vr)
            x2[2 * k + 1] = float(vi)
        assert np.array_equal(x2, rep.state)
        system = solver.CoupledSystem(net, demo.inverters)
        assert float(np.max(np.abs(system.residual(x2)))) < demo.solver.tol_inf
