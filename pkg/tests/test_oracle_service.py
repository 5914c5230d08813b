import random
import unittest

from app.models import Policy
from app.services.oracle_service import OracleUnsupported, ScenarioTooLarge, oracle_simulate
from app.services.scenario_service import load_scenario
from app.services.scheduler_service import Engine
from tests.factories import SCENARIO_DIR, build_scenario, random_static_scenario, static_flow


class TestOracleAgreement(unittest.TestCase):
    def test_engine_matches_oracle_on_random_scenarios(self) -> None:
        rng = random.Random(4242)
        for index in range(200):
            seed = rng.randrange(1 << 30)
            for policy in Policy:
                scenario = random_static_scenario(random.Random(seed), policy.value)
                with self.subTest(case=index, policy=policy.value):
                    expected = oracle_simulate(scenario)
                    actual = Engine(scenario).run_to_completion().completion_rounds
                    self.assertEqual(actual, expected)


class TestOracleLimits(unittest.TestCase):
    def test_too_many_flows(self) -> None:
        scenario = build_scenario([static_flow(i, i, [100]) for i in range(1, 10)])

        with self.assertRaises(ScenarioTooLarge):
            oracle_simulate(scenario)
        self.assertEqual(len(oracle_simulate(scenario, max_flows=9)), 9)

    def test_too_many_packets(self) -> None:
        scenario = build_scenario([static_flow(1, 1, [100] * 11)])

        with self.assertRaises(ScenarioTooLarge):
            oracle_simulate(scenario)

    def test_unsupported_scenarios(self) -> None:
        with self.assertRaises(OracleUnsupported):
            oracle_simulate(load_scenario(SCENARIO_DIR / "desk_scale.json"))
        with self.assertRaises(OracleUnsupported):
            oracle_simulate(build_scenario([static_flow(1, 1, [100], arrivals=["1"])]))
        with self.assertRaises(OracleUnsupported):
            oracle_simulate(build_scenario([static_flow(1, 1, [100])], interclass_gating=True))
        with self.assertRaises(OracleUnsupported):
            oracle_simulate(build_scenario([static_flow(1, 1, [100])], channel={"mode": "bernoulli"}))


if __name__ == "__main__":
    unittest.main()
