"""Run ledger and the measurements computed from it.

The engine appends to a ``MetricsLedger`` while it runs; every function in
this module only reads a finished ledger. Potential throughput follows
PT_i(K) = Q_i + DC_i(K-1) - DC_i(K), so its sum over consecutive rounds
telescopes to m*Q + DC(start) - DC(end).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional

logger = logging.getLogger(__name__)


class MetricsError(ValueError):
    pass


class UnknownRound(MetricsError):
    """The flow has no ledger entry for the requested round."""


class NoBackloggedPair(MetricsError):
    """No two flows stayed backlogged over the requested window."""


class NoServedPackets(MetricsError):
    pass


@dataclass(frozen=True)
class FlowInfo:
    flow_id: int
    priority: int
    quantum: int
    weight: Fraction = Fraction(1)
    latency_critical: bool = False


@dataclass
class FlowRoundRecord:
    round_index: int
    flow_id: int
    q_credit: int
    bonus_received: int
    dc_start: int
    dc_end: int
    bytes_served: int
    bytes_attempted: int
    packets_served: int
    suspended: bool
    backlogged_after: bool
    waiting_since: Fraction
    start_time: Fraction
    end_time: Fraction
    credits_donated: int = 0
    credits_discarded: int = 0


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    start_time: Fraction
    end_time: Fraction
    bytes_served: int


@dataclass
class PacketRecord:
    packet_id: int
    flow_id: int
    size: int
    arrival_time: Fraction
    completion_time: Optional[Fraction] = None

    @property
    def latency(self) -> Optional[Fraction]:
        if self.completion_time is None:
            return None
        return self.completion_time - self.arrival_time


@dataclass
class MetricsLedger:
    """Everything a run recorded, keyed by flow and round."""

    flows: dict[int, FlowInfo]
    line_rate_bps: int
    records: list[FlowRoundRecord] = field(default_factory=list)
    rounds: list[RoundRecord] = field(default_factory=list)
    packets: dict[int, PacketRecord] = field(default_factory=dict)
    busy_time: Fraction = Fraction(0)
    end_time: Fraction = Fraction(0)
    _index: dict[tuple[int, int], FlowRoundRecord] = field(default_factory=dict, repr=False)

    @classmethod
    def for_flows(cls, flows: Iterable[FlowInfo], line_rate_bps: int) -> 'MetricsLedger':
        return cls(flows={info.flow_id: info for info in flows}, line_rate_bps=line_rate_bps)

    def add_flow_round(self, record: FlowRoundRecord) -> None:
        key = (record.flow_id, record.round_index)
        if key in self._index:
            raise ValueError(f"Flow {record.flow_id} already has an entry for round {record.round_index}.")
        self.records.append(record)
        self._index[key] = record

    def record_for(self, flow_id: int, round_index: int) -> FlowRoundRecord:
        try:
            return self._index[(flow_id, round_index)]
        except KeyError as exc:
            raise UnknownRound(f"flow {flow_id} has no entry for round {round_index}") from exc

    def has_record(self, flow_id: int, round_index: int) -> bool:
        return (flow_id, round_index) in self._index

    def flow_records(self, flow_id: int) -> list[FlowRoundRecord]:
        return [record for record in self.records if record.flow_id == flow_id]

    def register_packet(self, packet_id: int, flow_id: int, size: int, arrival_time: Fraction) -> None:
        self.packets[packet_id] = PacketRecord(packet_id, flow_id, size, arrival_time)

    def complete_packet(self, packet_id: int, completion_time: Fraction) -> None:
        self.packets[packet_id].completion_time = completion_time

    def close_round(self, round_index: int, start_time: Fraction, end_time: Fraction, bytes_served: int) -> None:
        self.rounds.append(RoundRecord(round_index, start_time, end_time, bytes_served))

    @property
    def last_round(self) -> int:
        return self.rounds[-1].round_index if self.rounds else 0

    def weight_of(self, flow_id: int, weights: Optional[Mapping[int, Fraction]] = None) -> Fraction:
        if weights is not None and flow_id in weights:
            return Fraction(weights[flow_id])
        return self.flows[flow_id].weight


def potential_throughput(
    ledger: MetricsLedger,
    flow_id: int,
    round_index: int,
    include_bonus: bool = False,
) -> int:
    record = ledger.record_for(flow_id, round_index)
    credit = record.q_credit + (record.bonus_received if include_bonus else 0)
    return credit + record.dc_start - record.dc_end


def cumulative_potential_throughput(
    ledger: MetricsLedger,
    flow_id: int,
    round_from: int,
    round_to: int,
    include_bonus: bool = False,
) -> int:
    if round_from > round_to:
        return 0
    return sum(
        potential_throughput(ledger, flow_id, round_index, include_bonus)
        for round_index in range(round_from, round_to + 1)
    )


def spt_closed_form(ledger: MetricsLedger, flow_id: int, round_from: int, round_to: int) -> int:
    """Telescoped SPT: sum of quanta plus DC before the window minus DC after it."""
    if round_from > round_to:
        return 0
    credits = sum(
        ledger.record_for(flow_id, round_index).q_credit
        for round_index in range(round_from, round_to + 1)
    )
    first = ledger.record_for(flow_id, round_from)
    last = ledger.record_for(flow_id, round_to)
    return credits + first.dc_start - last.dc_end


def cumulative_served(ledger: MetricsLedger, flow_id: int, round_index: int) -> int:
    """Bytes the flow got through by the end of the given round."""
    return sum(
        record.bytes_served
        for record in ledger.flow_records(flow_id)
        if record.round_index <= round_index
    )


def backlogged_throughout(ledger: MetricsLedger, flow_id: int, round_from: int, round_to: int) -> bool:
    for round_index in range(round_from, round_to + 1):
        if not ledger.has_record(flow_id, round_index):
            return False
        if round_index < round_to and not ledger.record_for(flow_id, round_index).backlogged_after:
            return False
    return True


def fairness_over_rounds(
    ledger: MetricsLedger,
    round_from: int,
    round_to: int,
    weights: Optional[Mapping[int, Fraction]] = None,
    include_bonus: bool = False,
) -> Fraction:
    """Largest normalized SPT gap between two flows backlogged over the rounds.

    With ``include_bonus`` the SPT counts donated credits as well, which is
    the measure the donating policies are bounded by.
    """
    if len(ledger.flows) < 2:
        return Fraction(0)
    eligible = [
        flow_id
        for flow_id in sorted(ledger.flows)
        if round_from <= round_to and backlogged_throughout(ledger, flow_id, round_from, round_to)
    ]
    if len(eligible) < 2:
        raise NoBackloggedPair(f"no two flows are backlogged over rounds {round_from}..{round_to}")
    normalized = [
        Fraction(cumulative_potential_throughput(ledger, flow_id, round_from, round_to, include_bonus))
        / ledger.weight_of(flow_id, weights)
        for flow_id in eligible
    ]
    return max(normalized) - min(normalized)


def fairness_measure(
    ledger: MetricsLedger,
    t1: Fraction,
    t2: Fraction,
    weights: Optional[Mapping[int, Fraction]] = None,
    include_bonus: bool = False,
) -> Fraction:
    """FM over the whole rounds that lie inside [t1, t2]."""
    if t1 > t2:
        raise ValueError(f"Interval start {t1} is after its end {t2}.")
    if len(ledger.flows) < 2:
        return Fraction(0)
    inside = [
        record.round_index
        for record in ledger.rounds
        if record.start_time >= t1 and record.end_time <= t2
    ]
    if not inside:
        raise NoBackloggedPair(f"no complete round lies inside [{t1}, {t2}]")
    return fairness_over_rounds(ledger, min(inside), max(inside), weights, include_bonus)


def worst_window_fairness(
    ledger: MetricsLedger,
    weights: Optional[Mapping[int, Fraction]] = None,
    include_bonus: bool = False,
) -> Optional[Fraction]:
    """Maximum FM over every window of consecutive rounds with a backlogged pair."""
    round_indices = sorted({record.round_index for record in ledger.rounds})
    worst: Optional[Fraction] = None
    for start_position, round_from in enumerate(round_indices):
        for round_to in round_indices[start_position:]:
            try:
                value = fairness_over_rounds(ledger, round_from, round_to, weights, include_bonus)
            except NoBackloggedPair:
                # Backlog only shrinks as the window grows.
                break
            if worst is None or value > worst:
                worst = value
    return worst


def per_flow_latency(ledger: MetricsLedger, flow_id: int) -> tuple[Fraction, Fraction]:
    latencies = [
        record.latency
        for record in ledger.packets.values()
        if record.flow_id == flow_id and record.latency is not None
    ]
    if not latencies:
        raise NoServedPackets(f"flow {flow_id} has no served packets")
    return sum(latencies, Fraction(0)) / len(latencies), max(latencies)


def critical_mean_latency(ledger: MetricsLedger) -> Optional[Fraction]:
    """Mean latency over every served packet of the latency-critical flows."""
    latencies = [
        record.latency
        for record in ledger.packets.values()
        if record.latency is not None and ledger.flows[record.flow_id].latency_critical
    ]
    if not latencies:
        return None
    return sum(latencies, Fraction(0)) / len(latencies)


def max_service_gap(ledger: MetricsLedger, flow_id: int) -> Optional[Fraction]:
    """Longest wait of a backlogged flow for its next service."""
    gaps = [record.start_time - record.waiting_since for record in ledger.flow_records(flow_id)]
    return max(gaps) if gaps else None


def bytes_served(ledger: MetricsLedger, flow_id: int) -> int:
    return sum(record.bytes_served for record in ledger.flow_records(flow_id))


def utilization(ledger: MetricsLedger, flow_id: int) -> Fraction:
    """Share of the busy line capacity that carried this flow's bits."""
    if ledger.busy_time == 0:
        return Fraction(0)
    return Fraction(bytes_served(ledger, flow_id) * 8) / (ledger.line_rate_bps * ledger.busy_time)


def aggregate_throughput(ledger: MetricsLedger) -> Fraction:
    """Successfully delivered bits per second over the run."""
    if ledger.end_time == 0:
        return Fraction(0)
    total = sum(record.bytes_served for record in ledger.records)
    return Fraction(total * 8) / ledger.end_time


def delay_bound(
    n: int,
    s: int,
    max_quantum: int,
    rate_bps: int,
    literal: bool = False,
) -> Fraction:
    """Delay bound for n latency-critical flows with packet size s.

    The default reading is ((n * s) + Max) * 8 / B seconds. ``literal``
    keeps the unparenthesized (n * s) + Max / B form, which mixes bytes with
    seconds and exists only for comparison.
    """
    if n < 0:
        raise ValueError("n must not be negative")
    if s <= 0 or max_quantum <= 0 or rate_bps <= 0:
        raise ValueError("s, max_quantum and rate_bps must be positive")
    if literal:
        return Fraction(n * s) + Fraction(max_quantum * 8, rate_bps)
    return Fraction((n * s + max_quantum) * 8, rate_bps)


def deficit_violations(ledger: MetricsLedger, max_packet: int) -> list[FlowRoundRecord]:
    """Entries whose end-of-round DC falls outside [0, M]."""
    return [record for record in ledger.records if not 0 <= record.dc_end <= max_packet]


def spt_violations(ledger: MetricsLedger, max_packet: int) -> list[tuple[int, int, int]]:
    """Windows (flow, from, to) of continuous backlog whose SPT leaves [mQ - M, mQ + M]."""
    violations: list[tuple[int, int, int]] = []
    for flow_id, info in ledger.flows.items():
        served_rounds = sorted(record.round_index for record in ledger.flow_records(flow_id))
        for position, round_from in enumerate(served_rounds):
            for round_to in served_rounds[position:]:
                if not backlogged_throughout(ledger, flow_id, round_from, round_to):
                    break
                m = round_to - round_from + 1
                spt = cumulative_potential_throughput(ledger, flow_id, round_from, round_to)
                if not m * info.quantum - max_packet <= spt <= m * info.quantum + max_packet:
                    violations.append((flow_id, round_from, round_to))
    return violations
