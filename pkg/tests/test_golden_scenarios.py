"""End-to-end checks against hand-computed schedules."""

import unittest

from app.models import Policy
from app.services.metrics_service import cumulative_served, potential_throughput
from app.services.oracle_service import oracle_simulate
from app.services.report_service import events_to_ndjson
from app.services.scenario_service import load_scenario, with_overrides
from app.services.scheduler_service import Engine, FinalReport
from tests.factories import GOLDEN_DIR, SCENARIO_DIR

WALKTHROUGH_COMPLETION = {
    Policy.DRR: {1: 3, 2: 2, 3: 3, 4: 2},
    Policy.ODRR: {1: 5, 2: 4, 3: 3, 4: 2},
    Policy.ODRREDC: {1: 4, 2: 4, 3: 3, 4: 2},
    Policy.ODRRSDC: {1: 4, 2: 4, 3: 3, 4: 2},
}


def _walkthrough(policy: Policy) -> FinalReport:
    scenario = with_overrides(load_scenario(SCENARIO_DIR / "golden_walkthrough.json"), policy=policy)
    return Engine(scenario).run_until()


def _transfers(report: FinalReport) -> list[tuple]:
    transfers = []
    for event in report.events:
        if event["event"] == "donate":
            transfers.append((event["round"], event["donor"], event["recipient"], event["bytes"]))
        elif event["event"] == "discard" and event["reason"] == "no_recipient":
            transfers.append((event["round"], event["flow"], None, event["bytes"]))
    return transfers


class TestGoldenFig1(unittest.TestCase):
    def setUp(self) -> None:
        self.scenario = load_scenario(SCENARIO_DIR / "golden_fig1.json")

    def test_odrr_event_log_matches_golden_file(self) -> None:
        report = Engine(self.scenario).run_until()

        expected = (GOLDEN_DIR / "fig1_odrr_events.ndjson").read_text(encoding="utf-8")
        self.assertEqual(events_to_ndjson(report.events), expected)

    def test_event_log_is_reproducible(self) -> None:
        first = Engine(self.scenario).run_until()
        second = Engine(self.scenario).run_until()

        self.assertEqual(events_to_ndjson(first.events), events_to_ndjson(second.events))

    def test_suspended_flow_completes_one_round_after_readmission(self) -> None:
        report = Engine(self.scenario).run_until()

        self.assertEqual(report.completion_rounds, {1: 3, 2: 4})
        self.assertEqual(report.bytes_served, {1: 2100, 2: 2050})
        self.assertEqual(potential_throughput(report.ledger, 2, 2), 550)

    def test_drr_retries_in_the_next_round(self) -> None:
        report = Engine(with_overrides(self.scenario, policy=Policy.DRR)).run_until()

        self.assertEqual(report.completion_rounds, {1: 3, 2: 3})


class TestGoldenWalkthrough(unittest.TestCase):
    def test_completion_rounds_per_policy(self) -> None:
        for policy, expected in WALKTHROUGH_COMPLETION.items():
            with self.subTest(policy=policy.value):
                self.assertEqual(_walkthrough(policy).completion_rounds, expected)

    def test_deficits_after_first_round(self) -> None:
        for policy in Policy:
            with self.subTest(policy=policy.value):
                ledger = _walkthrough(policy).ledger
                self.assertEqual([ledger.record_for(flow_id, 1).dc_end for flow_id in (1, 2, 3, 4)],
                                 [350, 250, 50, 50])

    def test_equal_split_transfers(self) -> None:
        self.assertEqual(
            _transfers(_walkthrough(Policy.ODRREDC)),
            [
                (2, 4, 1, 17), (2, 4, 2, 17), (2, 4, 3, 16),
                (3, 3, 1, 83), (3, 3, 2, 83),
                (4, 2, None, 300),
            ],
        )

    def test_single_recipient_transfers(self) -> None:
        self.assertEqual(
            _transfers(_walkthrough(Policy.ODRRSDC)),
            [(2, 4, 1, 50), (3, 3, 1, 150), (4, 1, 2, 100), (4, 2, None, 300)],
        )

    def test_cumulative_service_per_round(self) -> None:
        edc = _walkthrough(Policy.ODRREDC).ledger
        odrr = _walkthrough(Policy.ODRR).ledger

        self.assertEqual([cumulative_served(edc, 1, r) for r in range(1, 5)], [400, 400, 400, 1600])
        self.assertEqual([cumulative_served(odrr, 1, r) for r in range(1, 6)], [400, 400, 400, 1400, 1600])
        self.assertEqual(cumulative_served(edc, 2, 4), 1300)
        self.assertEqual(cumulative_served(odrr, 2, 4), 1300)
        for ledger in (edc, odrr):
            self.assertEqual([cumulative_served(ledger, 3, r) for r in range(1, 4)], [700, 1400, 2100])

    def test_redistribution_never_serves_less_than_odrr(self) -> None:
        odrr = _walkthrough(Policy.ODRR)
        for policy in (Policy.ODRREDC, Policy.ODRRSDC):
            with self.subTest(policy=policy.value):
                other = _walkthrough(policy)
                for flow_id in (1, 2, 3, 4):
                    for round_index in range(1, odrr.rounds + 1):
                        self.assertGreaterEqual(
                            cumulative_served(other.ledger, flow_id, round_index),
                            cumulative_served(odrr.ledger, flow_id, round_index),
                        )

    def test_oracle_agrees_on_golden_scenarios(self) -> None:
        for name in ("golden_fig1.json", "golden_walkthrough.json"):
            for policy in Policy:
                with self.subTest(scenario=name, policy=policy.value):
                    scenario = with_overrides(load_scenario(SCENARIO_DIR / name), policy=policy)
                    self.assertEqual(oracle_simulate(scenario), Engine(scenario).run_until().completion_rounds)


if __name__ == "__main__":
    unittest.main()
