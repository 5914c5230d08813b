"""Packet traces: expansion of traffic specs into seeded, time-ordered packets."""

from __future__ import annotations

import bisect
import csv
import io
import logging
from dataclasses import replace
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from app.config import Config
from app.models import (
    FixedSize,
    Packet,
    PoissonTraffic,
    StaticTraffic,
    TrafficSpec,
    ValidatedScenario,
)
from app.utils import atomic_write_text, format_rational

logger = logging.getLogger(__name__)

# Separate entropy words keep traffic and channel draws independent for one seed.
TRAFFIC_STREAM = 0
CHANNEL_STREAM = 1


def stream_generator(seed: int, stream: int, flow_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, flow_id]))


def _quantize(seconds: float, resolution: int) -> Fraction:
    return Fraction(int(round(seconds * resolution)), resolution)


def _expand_poisson(
    spec: PoissonTraffic,
    duration: Fraction,
    rng: np.random.Generator,
    flow_id: int,
    resolution: int,
) -> list[Packet]:
    packets: list[Packet] = []
    if duration <= 0:
        return packets
    scale = 1.0 / float(spec.rate_pps)
    clock = Fraction(0)
    while spec.max_packets is None or len(packets) < spec.max_packets:
        clock += _quantize(float(rng.exponential(scale)), resolution)
        if isinstance(spec.size, FixedSize):
            size = spec.size.size
        else:
            size = int(rng.integers(spec.size.low, spec.size.high, endpoint=True))
        if clock > duration:
            break
        packets.append(Packet(
            id=len(packets) + 1,
            flow_id=flow_id,
            size=size,
            arrival_time=clock,
        ))
    return packets


def expand_trace(
    spec: TrafficSpec,
    duration: Fraction,
    seed: int,
    flow_id: int = 1,
    resolution: Optional[int] = None,
) -> tuple[Packet, ...]:
    """Expand one flow's traffic into packets sorted by (arrival_time, id).

    Ids are local to the flow here; ``build_trace`` renumbers them globally.
    """
    if isinstance(spec, StaticTraffic):
        packets = [
            Packet(
                id=index + 1,
                flow_id=flow_id,
                size=template.size,
                arrival_time=template.arrival_time,
                error_script=template.error_script,
            )
            for index, template in enumerate(spec.packets)
            if template.arrival_time <= duration
        ]
    else:
        rng = stream_generator(seed, TRAFFIC_STREAM, flow_id)
        packets = _expand_poisson(spec, duration, rng, flow_id, resolution or Config.ARRIVAL_RESOLUTION)
    packets.sort(key=lambda packet: (packet.arrival_time, packet.id))
    return tuple(packets)


def build_trace(scenario: ValidatedScenario, resolution: Optional[int] = None) -> tuple[Packet, ...]:
    """Merge every flow of the scenario into one trace with global packet ids."""
    keyed: list[tuple[Fraction, int, int, Packet]] = []
    for position, flow in enumerate(scenario.flows):
        expanded = expand_trace(flow.traffic, scenario.duration, scenario.seed, flow.flow_id, resolution)
        for sequence, packet in enumerate(expanded):
            keyed.append((packet.arrival_time, position, sequence, packet))
    keyed.sort(key=lambda item: item[:3])
    trace = tuple(replace(item[3], id=index + 1) for index, item in enumerate(keyed))
    logger.debug("[Traffic] Expanded %s packets for scenario %s seed=%s", len(trace), scenario.name, scenario.seed)
    return trace


def arrivals_in(trace: Sequence[Packet], t_from: Fraction, t_to: Fraction) -> tuple[Packet, ...]:
    """Packets whose arrival time lies in [t_from, t_to)."""
    if t_from > t_to:
        raise ValueError(f"Window start {t_from} is after its end {t_to}.")
    times = [packet.arrival_time for packet in trace]
    lo = bisect.bisect_left(times, t_from)
    hi = bisect.bisect_left(times, t_to)
    return tuple(trace[lo:hi])


def trace_to_csv(trace: Sequence[Packet]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(['packet_id', 'flow_id', 'size', 'arrival_time', 'arrival_seconds'])
    for packet in trace:
        writer.writerow([
            packet.id,
            packet.flow_id,
            packet.size,
            format_rational(packet.arrival_time),
            f"{float(packet.arrival_time):.6f}",
        ])
    return buffer.getvalue()


def write_trace_csv(trace: Sequence[Packet], path: Union[str, Path]) -> None:
    atomic_write_text(path, trace_to_csv(trace))
    logger.info("[Traffic] Wrote %s packets to %s", len(trace), path)
