"""Deficit round robin engine for DRR, ODRR, ODRREDC and ODRRSDC.

One engine runs every policy. A round serves the flows that are in the
ActiveList when it starts; each service adds the quantum (plus any banked
bonus) to the flow's deficit counter and sends head packets while they fit.
The ODRR family parks a flow in the error queue on its first failed attempt
and re-admits the error queue, in priority order, once the ActiveList holds
no error-free backlogged flow. A flow that drains loses its leftover credits
(the DRR reset), except that ODRREDC and ODRRSDC hand the leftover of a
completed flow, drained with no arrivals still due, to uncompleted flows.
"""

from __future__ import annotations

import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from fractions import Fraction
from math import floor
from typing import Any, Optional, Sequence

from app.config import Config
from app.models import FlowState, InterclassRule, Packet, Policy, ValidatedScenario
from app.services.channel_service import AttemptRecord, ChannelModel, penalty_factor
from app.services.metrics_service import FlowInfo, FlowRoundRecord, MetricsLedger
from app.services.traffic_service import build_trace
from app.utils import format_rational, transmission_time

logger = logging.getLogger(__name__)


class SchedulerError(Exception):
    pass


class UnknownFlow(SchedulerError):
    pass


class ServeOnCompletedFlow(SchedulerError):
    pass


class NotCompleted(SchedulerError):
    """Redistribution was requested for a flow that still has packets."""


class WrongPolicy(SchedulerError):
    pass


class InvariantViolation(AssertionError):
    """A scheduler invariant (deficit bounds, packet size bound) broke."""


@dataclass(frozen=True)
class ServiceOutcome:
    flow_id: int
    bytes_served: int
    bytes_attempted: int
    packets_served: int
    suspended: bool
    drained: bool
    completed: bool
    deficit_after: int
    penalty_factor: Optional[Fraction] = None


@dataclass(frozen=True)
class RoundReport:
    round_index: int
    start_time: Fraction
    end_time: Fraction
    bytes_served: dict[int, int] = field(default_factory=dict)
    skipped: tuple[int, ...] = ()
    suspended: tuple[int, ...] = ()
    completed: tuple[int, ...] = ()
    readmitted: tuple[int, ...] = ()
    idle: bool = False


@dataclass(frozen=True)
class CreditBalance:
    injected: int
    served: int
    deficit: int
    banked: int
    discarded: int

    @property
    def balanced(self) -> bool:
        return self.injected == self.served + self.deficit + self.banked + self.discarded


@dataclass(frozen=True)
class FinalReport:
    scenario_name: str
    policy: Policy
    seed: int
    end_time: Fraction
    rounds: int
    max_packet: int
    completion_rounds: dict[int, Optional[int]]
    bytes_served: dict[int, int]
    ledger: MetricsLedger
    events: tuple[dict[str, Any], ...]
    attempts: tuple[AttemptRecord, ...]
    stopped_by_guard: bool = False


def class_eligible(class_index: int, slot: int, phase: int = 0, rule: InterclassRule = InterclassRule.GAP) -> bool:
    """Whether class k may be served in the given slot.

    ``gap``: intervals of 2^k slots starting 2^k + 2k slots apart, so k = 0
    is always eligible and k = 1 owns slots [0, 2), [4, 6), ...
    ``literal``: intervals of 2^k slots every 2k slots.
    """
    offset = slot - phase
    if offset < 0:
        return False
    length = 2 ** class_index
    if rule is InterclassRule.GAP:
        period = length + 2 * class_index
    else:
        period = 2 * class_index
    if period == 0:
        return True
    return offset % period < length


class Engine:
    """Round-by-round scheduler state for one scenario, policy and seed."""

    def __init__(
        self,
        scenario: ValidatedScenario,
        *,
        trace: Optional[Sequence[Packet]] = None,
        channel: Optional[ChannelModel] = None,
        max_rounds: Optional[int] = None,
    ):
        self.scenario = scenario
        self.policy = scenario.policy
        self.trace: tuple[Packet, ...] = tuple(trace) if trace is not None else build_trace(scenario)
        self.max_packet = max((packet.size for packet in self.trace), default=0)
        self.line_rate = scenario.output_rate_bps
        if scenario.slot_length is not None:
            self.slot_length = scenario.slot_length
        else:
            self.slot_length = transmission_time(max(self.max_packet, 1), self.line_rate)
        self.channel = channel if channel is not None else ChannelModel.from_scenario(scenario)
        self.max_rounds = max_rounds or Config.MAX_ROUNDS

        self.flows: dict[int, FlowState] = {
            definition.flow_id: FlowState(
                flow_id=definition.flow_id,
                priority=definition.priority,
                qos=definition.qos,
                quantum=definition.quantum,
                weight=definition.weight,
            )
            for definition in scenario.flows
        }
        self.active_list: deque[int] = deque()
        self.error_queue: deque[int] = deque()
        self._scheduled: set[int] = set()

        self.round_index = 0
        self.clock = Fraction(0)
        self._cursor = 0
        self._pending: Counter[int] = Counter()
        self.completion_rounds: dict[int, Optional[int]] = {flow_id: None for flow_id in self.flows}
        self.events: list[dict[str, Any]] = []
        self.attempts: list[AttemptRecord] = []
        self.stopped_by_guard = False

        self._injected = 0
        self._served = 0
        self._discarded = 0

        self.ledger = MetricsLedger.for_flows(
            (
                FlowInfo(
                    flow_id=definition.flow_id,
                    priority=definition.priority,
                    quantum=definition.quantum,
                    weight=definition.weight,
                    latency_critical=definition.qos.latency_critical,
                )
                for definition in scenario.flows
            ),
            self.line_rate,
        )
        for packet in self.trace:
            if packet.flow_id not in self.flows:
                raise UnknownFlow(f"trace packet {packet.id} belongs to undeclared flow {packet.flow_id}")
            self._pending[packet.flow_id] += 1
            self.ledger.register_packet(packet.id, packet.flow_id, packet.size, packet.arrival_time)
        for flow_id, flow in self.flows.items():
            if self._pending[flow_id] == 0:
                flow.completed = True

        self._admit_arrivals()

    # -- state helpers -------------------------------------------------

    def _flow(self, flow_id: int) -> FlowState:
        try:
            return self.flows[flow_id]
        except KeyError as exc:
            raise UnknownFlow(f"flow {flow_id} is not part of scenario {self.scenario.name}") from exc

    def _emit(self, kind: str, **payload: Any) -> None:
        payload['event'] = kind
        self.events.append(payload)

    def _current_record(self, flow_id: int) -> Optional[FlowRoundRecord]:
        if self.ledger.has_record(flow_id, self.round_index):
            return self.ledger.record_for(flow_id, self.round_index)
        return None

    def _advance_line(self, size: int) -> None:
        elapsed = transmission_time(size, self.line_rate)
        self.clock += elapsed
        self.ledger.busy_time += elapsed

    def _admit_arrivals(self) -> None:
        while self._cursor < len(self.trace) and self.trace[self._cursor].arrival_time <= self.clock:
            packet = self.trace[self._cursor]
            self._cursor += 1
            flow = self.flows[packet.flow_id]
            flow.queue.append(packet)
            self._pending[packet.flow_id] -= 1
            if packet.flow_id not in self._scheduled:
                self._scheduled.add(packet.flow_id)
                flow.deficit_counter = 0
                flow.waiting_since = packet.arrival_time
                self.active_list.append(packet.flow_id)

    def _discard(self, flow_id: int, amount: int, reason: str) -> None:
        self._discarded += amount
        record = self._current_record(flow_id)
        if record is not None:
            record.credits_discarded += amount
        self._emit('discard', round=self.round_index, flow=flow_id, bytes=amount, reason=reason)
        logger.debug("[Engine] Discarded %s credits of flow %s (%s)", amount, flow_id, reason)

    @property
    def finished(self) -> bool:
        return not self.active_list and not self.error_queue and self._cursor >= len(self.trace)

    @property
    def current_slot(self) -> int:
        return floor(self.clock / self.slot_length)

    def credit_balance(self) -> CreditBalance:
        return CreditBalance(
            injected=self._injected,
            served=self._served,
            deficit=sum(flow.deficit_counter for flow in self.flows.values()),
            banked=sum(flow.bonus_credits for flow in self.flows.values()),
            discarded=self._discarded,
        )

    # -- operations ----------------------------------------------------

    def interclass_gate(self, flow_id: int, slot: Optional[int] = None) -> bool:
        if not self.scenario.interclass_gating:
            return True
        flow = self._flow(flow_id)
        return class_eligible(
            flow.qos.class_index,
            self.current_slot if slot is None else slot,
            flow.qos.phase,
            self.scenario.interclass_rule,
        )

    def serve_flow(self, flow_id: int) -> ServiceOutcome:
        """Give one flow its turn: add its quantum and bonus, then send head packets.

        A drained flow keeps its leftover in the deficit counter here; the
        round settles it afterwards.
        """
        flow = self._flow(flow_id)
        if flow.completed:
            raise ServeOnCompletedFlow(f"flow {flow_id} has already completed")

        start = self.clock
        dc_start = flow.deficit_counter
        bonus = flow.bonus_credits
        flow.bonus_credits = 0
        credit = dc_start + flow.quantum + bonus
        flow.deficit_counter = credit
        self._injected += flow.quantum

        served = attempted = packets = 0
        failed = False
        while flow.queue and flow.queue[0].size <= flow.deficit_counter:
            packet = flow.queue[0]
            if packet.size > self.max_packet:
                raise InvariantViolation(f"packet {packet.id} is larger than M={self.max_packet}")
            attempt = self.channel.attempt_transmit(packet, self.round_index)
            self.attempts.append(attempt)
            attempted += packet.size
            if attempt.success or not self.scenario.zero_cost_failures:
                self._advance_line(packet.size)
            if not attempt.success:
                failed = True
                break
            flow.queue.popleft()
            flow.deficit_counter -= packet.size
            served += packet.size
            packets += 1
            self.ledger.complete_packet(packet.id, self.clock)
        self._served += served

        factor: Optional[Fraction] = None
        forfeited = 0
        if failed:
            if self.policy is Policy.ODRR:
                factor = penalty_factor(attempted, served)
                # factor x attempted is exactly the bytes served.
                flow.deficit_counter = credit - served
            if flow.deficit_counter > self.max_packet:
                forfeited = flow.deficit_counter - self.max_packet
                flow.deficit_counter = self.max_packet
            if self.policy.suspends_on_error:
                flow.suspended = True

        drained = not flow.queue
        completed = drained and self._pending[flow_id] == 0
        self.ledger.add_flow_round(FlowRoundRecord(
            round_index=self.round_index,
            flow_id=flow_id,
            q_credit=flow.quantum,
            bonus_received=bonus,
            dc_start=dc_start,
            dc_end=flow.deficit_counter,
            bytes_served=served,
            bytes_attempted=attempted,
            packets_served=packets,
            suspended=flow.suspended,
            backlogged_after=not drained,
            waiting_since=flow.waiting_since if flow.waiting_since is not None else start,
            start_time=start,
            end_time=self.clock,
        ))

        event: dict[str, Any] = {
            'round': self.round_index,
            'flow': flow_id,
            'dc_before': dc_start,
            'quantum': flow.quantum,
            'bonus': bonus,
            'dc_after': flow.deficit_counter,
            'bytes_served': served,
            'bytes_attempted': attempted,
            'packets_served': packets,
            'suspended': flow.suspended,
            'clock': format_rational(self.clock),
        }
        if factor is not None:
            event['penalty_factor'] = format_rational(factor)
        self._emit('serve', **event)
        if forfeited:
            self._discard(flow_id, forfeited, 'deficit_cap')

        return ServiceOutcome(
            flow_id=flow_id,
            bytes_served=served,
            bytes_attempted=attempted,
            packets_served=packets,
            suspended=flow.suspended,
            drained=drained,
            completed=completed,
            deficit_after=flow.deficit_counter,
            penalty_factor=factor,
        )

    def _uncompleted(self, flow: FlowState) -> bool:
        return not flow.completed and (bool(flow.queue) or self._pending[flow.flow_id] > 0)

    def _donor(self, donor_id: int, policy: Policy) -> FlowState:
        if self.policy is not policy:
            raise WrongPolicy(f"{policy.label} redistribution called under {self.policy.label}")
        donor = self._flow(donor_id)
        if donor.queue:
            raise NotCompleted(f"flow {donor_id} still has {len(donor.queue)} queued packets")
        if self._pending[donor_id]:
            raise NotCompleted(f"flow {donor_id} still has {self._pending[donor_id]} arrivals due")
        return donor

    def _grant(self, donor_id: int, recipient: FlowState, amount: int) -> None:
        recipient.bonus_credits += amount
        record = self._current_record(donor_id)
        if record is not None:
            record.credits_donated += amount
        self._emit('donate', round=self.round_index, donor=donor_id, recipient=recipient.flow_id, bytes=amount)

    def redistribute_equal(self, donor_id: int, leftover: int) -> dict[int, int]:
        """Split a completed flow's leftover over the higher-priority uncompleted flows.

        Every recipient gets leftover // n; the remaining bytes go one each to
        the highest-priority recipients. A recipient with no queued packets
        banks its share until its next arrival is served.
        """
        donor = self._donor(donor_id, Policy.ODRREDC)
        donor.deficit_counter = 0
        if leftover <= 0:
            return {}
        recipients = sorted(
            (
                flow
                for flow in self.flows.values()
                if flow.flow_id != donor_id and flow.priority < donor.priority and self._uncompleted(flow)
            ),
            key=lambda flow: flow.priority,
        )
        if not recipients:
            self._discard(donor_id, leftover, 'no_recipient')
            return {}

        share, remainder = divmod(leftover, len(recipients))
        grants: dict[int, int] = {}
        for position, recipient in enumerate(recipients):
            amount = share + (1 if position < remainder else 0)
            if amount:
                self._grant(donor_id, recipient, amount)
                grants[recipient.flow_id] = amount
        return grants

    def redistribute_single(self, donor_id: int, leftover: int) -> dict[int, int]:
        """Give a completed flow's whole leftover to the highest-priority uncompleted flow."""
        self._donor(donor_id, Policy.ODRRSDC).deficit_counter = 0
        if leftover <= 0:
            return {}
        candidates = [
            flow for flow in self.flows.values() if flow.flow_id != donor_id and self._uncompleted(flow)
        ]
        if not candidates:
            self._discard(donor_id, leftover, 'no_recipient')
            return {}
        recipient = min(candidates, key=lambda flow: flow.priority)
        self._grant(donor_id, recipient, leftover)
        return {recipient.flow_id: leftover}

    def _release_leftover(self, flow_id: int, completed: bool) -> None:
        flow = self.flows[flow_id]
        leftover = flow.deficit_counter
        record = self._current_record(flow_id)
        if record is not None:
            record.dc_end = 0
        if completed and self.policy is Policy.ODRREDC:
            self.redistribute_equal(flow_id, leftover)
        elif completed and self.policy is Policy.ODRRSDC:
            self.redistribute_single(flow_id, leftover)
        else:
            flow.deficit_counter = 0
            if leftover:
                self._discard(flow_id, leftover, 'drained')

    def _settle(self, outcome: ServiceOutcome) -> None:
        flow_id = outcome.flow_id
        flow = self.flows[flow_id]
        if outcome.drained:
            self._release_leftover(flow_id, outcome.completed)
            self._scheduled.discard(flow_id)
            flow.waiting_since = None
            if outcome.completed:
                flow.completed = True
                self.completion_rounds[flow_id] = self.round_index
                self._emit('complete', round=self.round_index, flow=flow_id)

        self._admit_arrivals()

        if not outcome.drained:
            flow.waiting_since = self.clock
            if flow.suspended:
                self.error_queue.append(flow_id)
            else:
                self.active_list.append(flow_id)

    def _readmit_suspended(self) -> tuple[int, ...]:
        if self.active_list or not self.error_queue:
            return ()
        order = sorted(self.error_queue, key=lambda flow_id: self.flows[flow_id].priority)
        self.error_queue.clear()
        for flow_id in order:
            self.flows[flow_id].suspended = False
            self.active_list.append(flow_id)
        self._emit('readmit', round=self.round_index, flows=list(order))
        return tuple(order)

    def _check_round_invariants(self) -> None:
        for flow in self.flows.values():
            if not 0 <= flow.deficit_counter <= self.max_packet:
                raise InvariantViolation(
                    f"flow {flow.flow_id} ends round {self.round_index} with DC={flow.deficit_counter} "
                    f"outside [0, {self.max_packet}]"
                )

    def _idle_step(self) -> RoundReport:
        start = self.clock
        if self._cursor < len(self.trace):
            self.clock = max(self.clock, self.trace[self._cursor].arrival_time)
            self._emit('idle', round=self.round_index, clock=format_rational(self.clock))
            self._admit_arrivals()
        return RoundReport(round_index=self.round_index, start_time=start, end_time=self.clock, idle=True)

    def run_round(self) -> RoundReport:
        """Serve every flow in the ActiveList once; an empty system only moves the clock."""
        self._readmit_suspended()
        if not self.active_list:
            return self._idle_step()

        self.round_index += 1
        start = self.clock
        served: dict[int, int] = {}
        skipped: list[int] = []
        suspended: list[int] = []
        completed: list[int] = []

        for _ in range(len(self.active_list)):
            flow_id = self.active_list.popleft()
            if not self.interclass_gate(flow_id):
                self.active_list.append(flow_id)
                skipped.append(flow_id)
                self._emit('skip', round=self.round_index, flow=flow_id)
                continue
            outcome = self.serve_flow(flow_id)
            self._settle(outcome)
            served[flow_id] = outcome.bytes_served
            if outcome.suspended:
                suspended.append(flow_id)
            if outcome.completed:
                completed.append(flow_id)

        if skipped and not served:
            self.clock = (self.current_slot + 1) * self.slot_length
            self._admit_arrivals()

        readmitted = self._readmit_suspended()
        self._check_round_invariants()
        total = sum(served.values())
        self.ledger.close_round(self.round_index, start, self.clock, total)
        logger.debug(
            "[Engine] Round %s served %s bytes over flows %s clock=%s",
            self.round_index,
            total,
            sorted(served),
            format_rational(self.clock),
        )
        return RoundReport(
            round_index=self.round_index,
            start_time=start,
            end_time=self.clock,
            bytes_served=served,
            skipped=tuple(skipped),
            suspended=tuple(suspended),
            completed=tuple(completed),
            readmitted=readmitted,
        )

    def run_until(self, t_end: Optional[Fraction] = None) -> FinalReport:
        """Run rounds until the clock reaches t_end or every flow has completed."""
        limit = self.scenario.duration if t_end is None else Fraction(t_end)
        if limit < 0 or limit > self.scenario.duration:
            raise ValueError(
                f"t_end must lie within [0, {format_rational(self.scenario.duration)}], got {format_rational(limit)}."
            )
        logger.info(
            "[Engine] Running %s policy=%s seed=%s flows=%s until t=%s",
            self.scenario.name,
            self.policy.label,
            self.scenario.seed,
            len(self.flows),
            format_rational(limit),
        )
        while self.clock < limit and not self.finished:
            if self.round_index >= self.max_rounds:
                self.stopped_by_guard = True
                logger.warning(
                    "[Engine] Stopping %s after %s rounds without reaching t=%s",
                    self.scenario.name,
                    self.round_index,
                    format_rational(limit),
                )
                break
            self.run_round()
        self.ledger.end_time = self.clock
        logger.info(
            "[Engine] Finished %s policy=%s rounds=%s clock=%s",
            self.scenario.name,
            self.policy.label,
            self.round_index,
            format_rational(self.clock),
        )
        return self.final_report()

    def run_to_completion(self) -> FinalReport:
        """Run until every flow has completed, ignoring the scenario duration."""
        while not self.finished:
            if self.round_index >= self.max_rounds:
                self.stopped_by_guard = True
                logger.warning("[Engine] Stopping %s after %s rounds", self.scenario.name, self.round_index)
                break
            self.run_round()
        self.ledger.end_time = self.clock
        return self.final_report()

    def final_report(self) -> FinalReport:
        return FinalReport(
            scenario_name=self.scenario.name,
            policy=self.policy,
            seed=self.scenario.seed,
            end_time=self.clock,
            rounds=self.round_index,
            max_packet=self.max_packet,
            completion_rounds=dict(self.completion_rounds),
            bytes_served={flow_id: sum(
                record.bytes_served for record in self.ledger.flow_records(flow_id)
            ) for flow_id in self.flows},
            ledger=self.ledger,
            events=tuple(self.events),
            attempts=tuple(self.attempts),
            stopped_by_guard=self.stopped_by_guard,
        )
