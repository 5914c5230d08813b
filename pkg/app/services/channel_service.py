"""Transmission outcomes for packet attempts and the ODRR penalty factor."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from app.models import ChannelMode, Packet, ValidatedScenario
from app.services.traffic_service import CHANNEL_STREAM, stream_generator

logger = logging.getLogger(__name__)


class ZeroAttempt(ValueError):
    """Penalty factor requested for a service that attempted no bytes."""


@dataclass(frozen=True)
class AttemptRecord:
    """One transmission attempt as seen by the channel."""

    packet_id: int
    flow_id: int
    size: int
    round_index: int
    attempt_number: int
    success: bool


class ChannelModel:
    """Decides the outcome of every attempt.

    Perfect never fails, Scripted replays each packet's error script (an
    exhausted or missing script means success) and Bernoulli draws from a
    per-flow seeded stream, so a flow's outcomes depend only on its own
    attempt sequence.
    """

    def __init__(
        self,
        mode: ChannelMode,
        seed: int = 0,
        p_err: Optional[Mapping[int, Fraction]] = None,
    ):
        self.mode = mode
        self.seed = seed
        self.p_err = {flow_id: Fraction(value) for flow_id, value in (p_err or {}).items()}
        self._attempts: dict[int, int] = defaultdict(int)
        self._streams: dict[int, np.random.Generator] = {}

    @classmethod
    def from_scenario(cls, scenario: ValidatedScenario) -> 'ChannelModel':
        return cls(
            scenario.channel_mode,
            seed=scenario.seed,
            p_err={flow.flow_id: flow.p_err for flow in scenario.flows},
        )

    def _stream(self, flow_id: int) -> np.random.Generator:
        if flow_id not in self._streams:
            self._streams[flow_id] = stream_generator(self.seed, CHANNEL_STREAM, flow_id)
        return self._streams[flow_id]

    def attempts_of(self, packet_id: int) -> int:
        return self._attempts[packet_id]

    def attempt_transmit(self, packet: Packet, round_index: int) -> AttemptRecord:
        attempt_number = self._attempts[packet.id]
        self._attempts[packet.id] = attempt_number + 1

        if self.mode is ChannelMode.PERFECT:
            success = True
        elif self.mode is ChannelMode.SCRIPTED:
            script = packet.error_script or ()
            success = script[attempt_number] if attempt_number < len(script) else True
        else:
            probability = float(self.p_err.get(packet.flow_id, Fraction(0)))
            success = not (float(self._stream(packet.flow_id).random()) < probability)

        if not success:
            logger.debug(
                "[Channel] Packet %s of flow %s failed attempt %s in round %s",
                packet.id,
                packet.flow_id,
                attempt_number + 1,
                round_index,
            )
        return AttemptRecord(
            packet_id=packet.id,
            flow_id=packet.flow_id,
            size=packet.size,
            round_index=round_index,
            attempt_number=attempt_number + 1,
            success=success,
        )


def penalty_factor(attempted_bytes: int, successful_bytes: int) -> Fraction:
    """Successful over attempted bytes for one service; always within [0, 1]."""
    if attempted_bytes == 0:
        raise ZeroAttempt("penalty factor is undefined when no bytes were attempted")
    if attempted_bytes < 0 or not 0 <= successful_bytes <= attempted_bytes:
        raise ValueError(
            f"Need 0 <= successful <= attempted, got successful={successful_bytes} attempted={attempted_bytes}."
        )
    return Fraction(successful_bytes, attempted_bytes)


def transcribe_scripts(attempts: Iterable[AttemptRecord]) -> dict[int, tuple[bool, ...]]:
    """Turn a recorded attempt stream into per-packet error scripts."""
    outcomes: dict[int, list[bool]] = defaultdict(list)
    for record in sorted(attempts, key=lambda item: (item.packet_id, item.attempt_number)):
        outcomes[record.packet_id].append(record.success)
    return {packet_id: tuple(script) for packet_id, script in outcomes.items()}


def apply_scripts(trace: Sequence[Packet], scripts: Mapping[int, tuple[bool, ...]]) -> tuple[Packet, ...]:
    return tuple(replace(packet, error_script=scripts.get(packet.id)) for packet in trace)
