import tempfile
import unittest
from fractions import Fraction
from pathlib import Path

from hypothesis import given, settings
from hypothesis import strategies as st

from app.models import FixedSize, PoissonTraffic, UniformSize
from app.services.scenario_service import load_scenario, with_overrides
from app.services.traffic_service import (
    arrivals_in,
    build_trace,
    expand_trace,
    trace_to_csv,
    write_trace_csv,
)
from tests.factories import SCENARIO_DIR, build_scenario, static_flow

DESK_RATE = Fraction(45, 32)


class TestStaticTraces(unittest.TestCase):
    def test_trace_is_ordered_by_arrival_then_flow_position(self) -> None:
        scenario = build_scenario([
            static_flow(5, 2, [100, 200], arrivals=["1", "0"]),
            static_flow(3, 1, [300, 400], arrivals=["0", "1"]),
        ])

        trace = build_trace(scenario)

        self.assertEqual([packet.id for packet in trace], [1, 2, 3, 4])
        self.assertEqual(
            [(packet.flow_id, packet.size) for packet in trace],
            [(5, 200), (3, 300), (5, 100), (3, 400)],
        )

    def test_error_scripts_are_carried(self) -> None:
        trace = build_trace(load_scenario(SCENARIO_DIR / "golden_fig1.json"))

        scripted = [packet for packet in trace if packet.error_script is not None]
        self.assertEqual(len(scripted), 1)
        self.assertEqual((scripted[0].flow_id, scripted[0].size), (2, 150))


class TestPoissonTraces(unittest.TestCase):
    def _spec(self, **overrides) -> PoissonTraffic:
        values = {
            "rate_pps": DESK_RATE,
            "size": UniformSize(50, 750),
            "cap_bytes": 750,
        }
        values.update(overrides)
        return PoissonTraffic(**values)

    def test_packet_count_matches_rate(self) -> None:
        duration = Fraction(20000)

        trace = expand_trace(self._spec(), duration, seed=3)

        expected = float(DESK_RATE * duration)
        self.assertLess(abs(len(trace) - expected) / expected, 0.05)

    def test_arrivals_are_quantized_and_within_duration(self) -> None:
        trace = expand_trace(self._spec(), Fraction(20), seed=5, resolution=1000)

        for packet in trace:
            self.assertEqual(1000 % packet.arrival_time.denominator, 0)
            self.assertGreaterEqual(packet.arrival_time, 0)
            self.assertLessEqual(packet.arrival_time, 20)
        times = [packet.arrival_time for packet in trace]
        self.assertEqual(times, sorted(times))

    def test_uniform_sizes_spread_over_the_whole_range(self) -> None:
        trace = expand_trace(self._spec(size=UniformSize(50, 600), cap_bytes=600), Fraction(500), seed=8)
        sizes = [packet.size for packet in trace]

        self.assertTrue(all(50 <= size <= 600 for size in sizes))
        self.assertLessEqual(min(sizes), 60)
        self.assertGreaterEqual(max(sizes), 590)
        self.assertLess(sizes.count(600), 10)

        fixed = expand_trace(self._spec(size=FixedSize(300)), Fraction(50), seed=8)
        self.assertEqual({packet.size for packet in fixed}, {300})

    def test_max_packets_caps_the_flow(self) -> None:
        trace = expand_trace(self._spec(max_packets=6), Fraction(10000), seed=1)

        self.assertEqual(len(trace), 6)

    def test_same_seed_same_trace(self) -> None:
        first = expand_trace(self._spec(), Fraction(100), seed=42, flow_id=2)
        second = expand_trace(self._spec(), Fraction(100), seed=42, flow_id=2)
        other = expand_trace(self._spec(), Fraction(100), seed=43, flow_id=2)

        self.assertEqual(first, second)
        self.assertNotEqual(first, other)

    def test_flows_draw_from_their_own_streams(self) -> None:
        scenario = load_scenario(SCENARIO_DIR / "desk_scale.json")
        alone = build_scenario(
            [{
                "flow_id": 1,
                "priority": 1,
                "qos": {"kind": "BE", "params": {
                    "maximum_sustained_traffic_rate": 900,
                    "traffic_priority": 5,
                    "request_transmission_policy": "contention",
                }},
                "traffic": {
                    "type": "poisson",
                    "rate_pps": "1.40625",
                    "size": {"type": "uniform", "low": 50, "high": 750},
                    "cap_bytes": 750,
                },
            }],
            duration=20,
            seed=scenario.seed,
        )

        together = [(p.size, p.arrival_time) for p in build_trace(scenario) if p.flow_id == 1]
        by_itself = [(p.size, p.arrival_time) for p in build_trace(alone)]

        self.assertEqual(together, by_itself)

    def test_build_trace_is_deterministic_per_seed(self) -> None:
        scenario = load_scenario(SCENARIO_DIR / "desk_scale.json")

        self.assertEqual(build_trace(scenario), build_trace(scenario))
        self.assertNotEqual(build_trace(scenario), build_trace(with_overrides(scenario, seed=7)))


class TestTraceWindows(unittest.TestCase):
    def setUp(self) -> None:
        self.trace = build_trace(build_scenario([
            static_flow(1, 1, [100, 100, 100, 100], arrivals=["0", "1", "2", "3"]),
        ]))

    def test_window_is_half_open(self) -> None:
        window = arrivals_in(self.trace, Fraction(1), Fraction(3))

        self.assertEqual([packet.arrival_time for packet in window], [1, 2])

    def test_empty_window(self) -> None:
        self.assertEqual(arrivals_in(self.trace, Fraction(2), Fraction(2)), ())

    def test_reversed_window_is_rejected(self) -> None:
        with self.assertRaises(ValueError):
            arrivals_in(self.trace, Fraction(3), Fraction(1))

    @settings(max_examples=50, deadline=None)
    @given(cuts=st.lists(st.fractions(min_value=0, max_value=20), max_size=8))
    def test_windows_over_a_partition_rebuild_the_trace(self, cuts: list[Fraction]) -> None:
        trace = build_trace(load_scenario(SCENARIO_DIR / "desk_scale.json"))
        # An arrival may land exactly on the 20 s duration.
        bounds = [Fraction(0), *sorted(cuts), Fraction(21)]

        rebuilt = [
            packet
            for t_from, t_to in zip(bounds, bounds[1:])
            for packet in arrivals_in(trace, t_from, t_to)
        ]

        self.assertEqual(tuple(rebuilt), trace)

    def test_csv_export(self) -> None:
        text = trace_to_csv(self.trace[:2])

        self.assertEqual(
            text.splitlines(),
            [
                "packet_id,flow_id,size,arrival_time,arrival_seconds",
                "1,1,100,0,0.000000",
                "2,1,100,1,1.000000",
            ],
        )
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "nested" / "trace.csv"
            write_trace_csv(self.trace, path)
            self.assertEqual(path.read_text(encoding="utf-8"), trace_to_csv(self.trace))


if __name__ == "__main__":
    unittest.main()
