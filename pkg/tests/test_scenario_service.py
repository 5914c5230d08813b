import json
import tempfile
import unittest
from fractions import Fraction
from pathlib import Path

from hypothesis import given, settings
from hypothesis import strategies as st

from app.models import ChannelMode, InterclassRule, Policy, QoSKind, StaticTraffic
from app.services.scenario_service import (
    ArrivalAfterDuration,
    DuplicateFlowId,
    DuplicatePriority,
    InvalidProbability,
    InvalidSeed,
    InvalidSizeDistribution,
    MalformedScenario,
    MissingMandatoryParam,
    NonPositiveRate,
    NonPositiveWeight,
    PacketTooLarge,
    QuantumBelowMaxPacket,
    ScenarioError,
    UnexpectedParam,
    UnknownPolicy,
    UnknownQoSKind,
    load_scenario,
    max_packet_size,
    parse_scenario,
    serialize_scenario,
    validate_scenario,
    with_overrides,
)
from tests.factories import SCENARIO_DIR, build_scenario, qos, scenario_document, static_flow


def _poisson_flow(flow_id: int, priority: int, **traffic_overrides) -> dict:
    traffic = {
        "type": "poisson",
        "rate_pps": "1.40625",
        "size": {"type": "uniform", "low": 50, "high": 750},
        "cap_bytes": 750,
    }
    traffic.update(traffic_overrides)
    return {"flow_id": flow_id, "priority": priority, "qos": qos("rtPS"), "traffic": traffic}


class TestLoadScenario(unittest.TestCase):
    def test_golden_fig1_loads(self) -> None:
        scenario = load_scenario(SCENARIO_DIR / "golden_fig1.json")

        self.assertEqual(scenario.name, "golden-fig1")
        self.assertIs(scenario.policy, Policy.ODRR)
        self.assertIs(scenario.channel_mode, ChannelMode.SCRIPTED)
        self.assertEqual(scenario.output_rate_bps, 9000)
        self.assertEqual([flow.flow_id for flow in scenario.flows], [1, 2])
        self.assertEqual(scenario.flow(2).quantum, 750)
        script = scenario.flow(2).traffic.packets[3].error_script
        self.assertEqual(script, (False,))

    def test_every_shipped_scenario_is_valid(self) -> None:
        for path in sorted(SCENARIO_DIR.glob("*.json")):
            with self.subTest(path=path.name):
                scenario = load_scenario(path)
                self.assertGreaterEqual(len(scenario.flows), 1)

    def test_defaults_are_filled(self) -> None:
        document = scenario_document([static_flow(1, 1, [500])])
        del document["seed"]
        del document["channel"]
        del document["policy"]

        scenario = validate_scenario(document)

        self.assertEqual(scenario.seed, 42)
        self.assertIs(scenario.policy, Policy.DRR)
        self.assertIs(scenario.channel_mode, ChannelMode.PERFECT)
        self.assertIs(scenario.interclass_rule, InterclassRule.GAP)
        self.assertFalse(scenario.interclass_gating)
        flow = scenario.flow(1)
        self.assertEqual(flow.weight, Fraction(1))
        self.assertEqual(flow.p_err, Fraction(0))
        self.assertIs(flow.qos.kind, QoSKind.BE)
        self.assertEqual(flow.qos.class_index, 3)

    def test_default_class_index_per_kind(self) -> None:
        flows = [
            {**static_flow(1, 1, [100]), "qos": qos("UGS")},
            {**static_flow(2, 2, [100]), "qos": qos("rtPS")},
            {**static_flow(3, 3, [100]), "qos": qos("ertPS")},
            {**static_flow(4, 4, [100]), "qos": qos("nrtPS")},
        ]
        scenario = build_scenario(flows)

        self.assertEqual([flow.qos.class_index for flow in scenario.flows], [0, 1, 1, 2])
        self.assertEqual(
            [flow.qos.latency_critical for flow in scenario.flows],
            [True, True, True, False],
        )

    def test_rationals_are_exact(self) -> None:
        scenario = build_scenario(
            [static_flow(1, 1, [100], arrivals=["1/3"], weight="0.1", p_err=0.25)],
            duration="2.5",
        )

        self.assertEqual(scenario.duration, Fraction(5, 2))
        self.assertEqual(scenario.flow(1).weight, Fraction(1, 10))
        self.assertEqual(scenario.flow(1).p_err, Fraction(1, 4))
        self.assertEqual(scenario.flow(1).traffic.packets[0].arrival_time, Fraction(1, 3))

    def test_missing_file_raises_os_error(self) -> None:
        with self.assertRaises(OSError):
            load_scenario(SCENARIO_DIR / "does-not-exist.json")


class TestScenarioValidationErrors(unittest.TestCase):
    def test_duplicate_priority(self) -> None:
        with self.assertRaises(DuplicatePriority) as ctx:
            build_scenario([static_flow(1, 1, [500]), static_flow(2, 1, [500])])

        self.assertTrue(str(ctx.exception).startswith("DuplicatePriority:"))
        self.assertEqual(ctx.exception.flow_id, 2)

    def test_duplicate_flow_id(self) -> None:
        with self.assertRaises(DuplicateFlowId):
            build_scenario([static_flow(1, 1, [500]), static_flow(1, 2, [500])])

    def test_quantum_below_max_packet(self) -> None:
        with self.assertRaises(QuantumBelowMaxPacket) as ctx:
            build_scenario([static_flow(1, 1, [700], quantum=500)])

        self.assertIn("quantum 500", str(ctx.exception))

    def test_small_quantum_allowed_when_flagged(self) -> None:
        scenario = build_scenario([static_flow(1, 1, [1400], quantum=750)], allow_small_quantum=True)

        self.assertEqual(scenario.flow(1).quantum, 750)

    def test_poisson_cap_counts_as_declared_maximum(self) -> None:
        with self.assertRaises(QuantumBelowMaxPacket):
            build_scenario([_poisson_flow(1, 1)], quantum_default=700)

    def test_rtps_missing_maximum_latency_names_the_parameter(self) -> None:
        flow = static_flow(1, 1, [500], kind="rtPS")
        del flow["qos"]["params"]["maximum_latency"]

        with self.assertRaises(MissingMandatoryParam) as ctx:
            build_scenario([flow])

        self.assertIn("maximum_latency", str(ctx.exception))
        self.assertTrue(str(ctx.exception).startswith("MissingMandatoryParam:"))

    def test_unexpected_parameter(self) -> None:
        flow = static_flow(1, 1, [500], kind="ertPS")
        flow["qos"]["params"]["tolerated_jitter"] = "0.1"

        with self.assertRaises(UnexpectedParam):
            build_scenario([flow])

    def test_unknown_qos_kind(self) -> None:
        flow = static_flow(1, 1, [500])
        flow["qos"]["kind"] = "GOLD"

        with self.assertRaises(UnknownQoSKind):
            build_scenario([flow])

    def test_non_positive_rates(self) -> None:
        with self.assertRaises(NonPositiveRate):
            build_scenario([static_flow(1, 1, [500])], output_rate_bps=0)
        with self.assertRaises(NonPositiveRate):
            build_scenario([_poisson_flow(1, 1, rate_pps="0")])

    def test_non_positive_weight(self) -> None:
        with self.assertRaises(NonPositiveWeight):
            build_scenario([static_flow(1, 1, [500], weight=0)])

    def test_arrival_after_duration(self) -> None:
        with self.assertRaises(ArrivalAfterDuration):
            build_scenario([static_flow(1, 1, [500], arrivals=["21"])], duration=20)

    def test_packet_above_max_packet_bytes(self) -> None:
        with self.assertRaises(PacketTooLarge):
            build_scenario([static_flow(1, 1, [800], quantum=800)], max_packet_bytes=750)

    def test_invalid_size_distributions(self) -> None:
        with self.assertRaises(InvalidSizeDistribution):
            build_scenario([_poisson_flow(1, 1, size={"type": "uniform", "low": 700, "high": 100})])
        with self.assertRaises(InvalidSizeDistribution):
            build_scenario([_poisson_flow(1, 1, size={"type": "fixed", "bytes": 800})])
        with self.assertRaises(InvalidSizeDistribution):
            build_scenario([_poisson_flow(1, 1, size={"type": "uniform", "low": 50, "high": 5000}, cap_bytes=600)])
        with self.assertRaises(InvalidSizeDistribution):
            build_scenario([static_flow(1, 1, [0])])

    def test_probability_outside_unit_interval(self) -> None:
        with self.assertRaises(InvalidProbability):
            build_scenario([static_flow(1, 1, [500], p_err="1.5")])

    def test_unknown_policy(self) -> None:
        with self.assertRaises(UnknownPolicy):
            build_scenario([static_flow(1, 1, [500])], policy="wfq")

    def test_invalid_seed(self) -> None:
        with self.assertRaises(InvalidSeed):
            build_scenario([static_flow(1, 1, [500])], seed=-1)

    def test_malformed_documents(self) -> None:
        with self.assertRaises(MalformedScenario):
            parse_scenario("{not json")
        with self.assertRaises(MalformedScenario):
            parse_scenario("[1, 2]")
        with self.assertRaises(MalformedScenario):
            validate_scenario(scenario_document([static_flow(1, 1, [500])], colour="blue"))
        with self.assertRaises(MalformedScenario):
            validate_scenario(scenario_document([]))

    def test_every_error_is_a_value_error(self) -> None:
        self.assertTrue(issubclass(ScenarioError, ValueError))
        self.assertTrue(issubclass(DuplicatePriority, ScenarioError))


class TestSerialization(unittest.TestCase):
    def test_serialize_is_canonical(self) -> None:
        scenario = load_scenario(SCENARIO_DIR / "golden_walkthrough.json")

        text = serialize_scenario(scenario)
        document = json.loads(text)

        self.assertTrue(text.endswith("\n"))
        self.assertEqual(list(document), sorted(document))
        self.assertEqual(document["duration"], "20")
        self.assertEqual(document["flows"][0]["qos"]["class_index"], 0)
        self.assertEqual(document["flows"][0]["traffic"]["packets"][1]["error_script"], ["fail", "ok"])

    def test_serialized_scenario_reloads_to_the_same_bytes(self) -> None:
        for path in sorted(SCENARIO_DIR.glob("*.json")):
            with self.subTest(path=path.name):
                text = serialize_scenario(load_scenario(path))
                with tempfile.TemporaryDirectory() as temp_dir:
                    copy = Path(temp_dir) / "copy.json"
                    copy.write_text(text, encoding="utf-8")
                    self.assertEqual(serialize_scenario(load_scenario(copy)), text)

    @settings(max_examples=50, deadline=None)
    @given(
        sizes=st.lists(st.integers(min_value=1, max_value=750), min_size=1, max_size=6),
        weight=st.fractions(min_value=Fraction(1, 100), max_value=10),
        p_err=st.fractions(min_value=0, max_value=1),
    )
    def test_validated_scenario_survives_serialization(self, sizes, weight, p_err) -> None:
        scenario = build_scenario([
            static_flow(1, 1, sizes, weight=str(weight), p_err=str(p_err)),
        ])

        again = validate_scenario(json.loads(serialize_scenario(scenario)))

        self.assertEqual(again, scenario)


class TestOverrides(unittest.TestCase):
    def test_with_overrides_replaces_only_given_fields(self) -> None:
        scenario = load_scenario(SCENARIO_DIR / "golden_fig1.json")

        changed = with_overrides(scenario, policy="ODRRSDC", seed=9, interclass_gating=True)

        self.assertIs(changed.policy, Policy.ODRRSDC)
        self.assertEqual(changed.seed, 9)
        self.assertTrue(changed.interclass_gating)
        self.assertEqual(changed.flows, scenario.flows)
        self.assertIs(scenario.policy, Policy.ODRR)
        self.assertIs(with_overrides(scenario), scenario)

    def test_with_overrides_rejects_bad_values(self) -> None:
        scenario = load_scenario(SCENARIO_DIR / "golden_fig1.json")

        with self.assertRaises(UnknownPolicy):
            with_overrides(scenario, policy="fifo")
        with self.assertRaises(InvalidSeed):
            with_overrides(scenario, seed=-5)

    def test_max_packet_size_uses_expanded_traces(self) -> None:
        self.assertEqual(max_packet_size(load_scenario(SCENARIO_DIR / "golden_fig1.json")), 750)
        scenario = load_scenario(SCENARIO_DIR / "desk_scale.json")
        self.assertNotIsInstance(scenario.flow(1).traffic, StaticTraffic)
        self.assertTrue(50 <= max_packet_size(scenario) <= 750)


if __name__ == "__main__":
    unittest.main()
