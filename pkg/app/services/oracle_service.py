"""Straight-line reference model used to cross-check the engine.

It replays small static scenarios (every packet present at time 0, no
interclass gating, perfect or scripted channel) with plain lists and dicts
and reports the round in which each flow sent its last packet. It shares no
code with the engine on purpose, so agreement between the two is evidence
that the round semantics are implemented as intended.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Optional

from app.config import Config
from app.models import ChannelMode, Policy, StaticTraffic, ValidatedScenario


class ScenarioTooLarge(ValueError):
    pass


class OracleUnsupported(ValueError):
    pass


def _check_supported(scenario: ValidatedScenario, max_flows: int, max_packets: int) -> None:
    if len(scenario.flows) > max_flows:
        raise ScenarioTooLarge(f"oracle handles at most {max_flows} flows, got {len(scenario.flows)}")
    if scenario.interclass_gating:
        raise OracleUnsupported("oracle does not model interclass gating")
    if scenario.channel_mode is ChannelMode.BERNOULLI:
        raise OracleUnsupported("oracle needs a perfect or scripted channel")
    for flow in scenario.flows:
        if not isinstance(flow.traffic, StaticTraffic):
            raise OracleUnsupported(f"flow {flow.flow_id} does not use static traffic")
        if len(flow.traffic.packets) > max_packets:
            raise ScenarioTooLarge(
                f"oracle handles at most {max_packets} packets per flow, flow {flow.flow_id} has "
                f"{len(flow.traffic.packets)}"
            )
        if any(packet.arrival_time != 0 for packet in flow.traffic.packets):
            raise OracleUnsupported(f"flow {flow.flow_id} has packets arriving after time 0")


def oracle_simulate(
    scenario: ValidatedScenario,
    max_flows: Optional[int] = None,
    max_packets: Optional[int] = None,
) -> dict[int, Optional[int]]:
    """Completion round of every flow under the scenario's policy."""
    _check_supported(
        scenario,
        max_flows if max_flows is not None else Config.ORACLE_MAX_FLOWS,
        max_packets if max_packets is not None else Config.ORACLE_MAX_PACKETS,
    )
    policy = scenario.policy
    scripted = scenario.channel_mode is ChannelMode.SCRIPTED

    order = [flow.flow_id for flow in scenario.flows]
    priority = {flow.flow_id: flow.priority for flow in scenario.flows}
    quantum = {flow.flow_id: flow.quantum for flow in scenario.flows}
    queues: dict[int, list[list]] = {}
    for flow in scenario.flows:
        queues[flow.flow_id] = [
            [packet.size, list(packet.error_script or ()) if scripted else []]
            for packet in flow.traffic.packets
        ]
    biggest = max(packet[0] for queue in queues.values() for packet in queue)

    dc = {flow_id: 0 for flow_id in order}
    bank = {flow_id: 0 for flow_id in order}
    done: dict[int, Optional[int]] = {flow_id: None for flow_id in order}
    active = list(order)
    parked: list[int] = []
    rnd = 0

    while active or parked:
        if not active:
            active = sorted(parked, key=lambda flow_id: priority[flow_id])
            parked = []
        rnd += 1
        this_round, active = active, []
        for flow_id in this_round:
            dc[flow_id] += quantum[flow_id] + bank[flow_id]
            bank[flow_id] = 0
            credit = dc[flow_id]
            queue = queues[flow_id]
            sent = tried = 0
            error = False
            while queue and queue[0][0] <= dc[flow_id]:
                size, script = queue[0]
                tried += size
                ok = script.pop(0) if script else True
                if not ok:
                    error = True
                    break
                queue.pop(0)
                dc[flow_id] -= size
                sent += size

            if error:
                if policy is Policy.ODRR:
                    dc[flow_id] = int(credit - Fraction(sent, tried) * tried)
                dc[flow_id] = min(dc[flow_id], biggest)
                if policy is Policy.DRR:
                    active.append(flow_id)
                else:
                    parked.append(flow_id)
                continue

            if queue:
                active.append(flow_id)
                continue

            left = dc[flow_id]
            dc[flow_id] = 0
            done[flow_id] = rnd
            if left <= 0:
                continue
            waiting = [other for other in order if other != flow_id and queues[other]]
            if policy is Policy.ODRREDC:
                higher = sorted(
                    (other for other in waiting if priority[other] < priority[flow_id]),
                    key=lambda other: priority[other],
                )
                if higher:
                    base, extra = divmod(left, len(higher))
                    for position, other in enumerate(higher):
                        bank[other] += base + (1 if position < extra else 0)
            elif policy is Policy.ODRRSDC and waiting:
                bank[min(waiting, key=lambda other: priority[other])] += left

    return done
