"""Domain types shared by the scenario, traffic, channel and scheduler services."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional, Union


class Policy(str, Enum):
    DRR = 'drr'
    ODRR = 'odrr'
    ODRREDC = 'odrredc'
    ODRRSDC = 'odrrsdc'

    @property
    def suspends_on_error(self) -> bool:
        return self is not Policy.DRR

    @property
    def label(self) -> str:
        return self.name


class QoSKind(str, Enum):
    UGS = 'UGS'
    RTPS = 'rtPS'
    ERTPS = 'ertPS'
    NRTPS = 'nrtPS'
    BE = 'BE'


MANDATORY_PARAMS: dict[QoSKind, frozenset[str]] = {
    QoSKind.UGS: frozenset({
        'maximum_sustained_traffic_rate',
        'maximum_latency',
        'tolerated_jitter',
        'request_transmission_policy',
    }),
    QoSKind.RTPS: frozenset({
        'minimum_reserved_traffic_rate',
        'maximum_sustained_traffic_rate',
        'maximum_latency',
        'request_transmission_policy',
    }),
    QoSKind.ERTPS: frozenset({
        'guaranteed_data_rate',
        'delay',
    }),
    QoSKind.NRTPS: frozenset({
        'minimum_reserved_traffic_rate',
        'maximum_sustained_traffic_rate',
        'traffic_priority',
        'request_transmission_policy',
    }),
    QoSKind.BE: frozenset({
        'maximum_sustained_traffic_rate',
        'traffic_priority',
        'request_transmission_policy',
    }),
}

DEFAULT_CLASS_INDEX: dict[QoSKind, int] = {
    QoSKind.UGS: 0,
    QoSKind.RTPS: 1,
    QoSKind.ERTPS: 1,
    QoSKind.NRTPS: 2,
    QoSKind.BE: 3,
}

LATENCY_CRITICAL_KINDS = frozenset({QoSKind.UGS, QoSKind.RTPS, QoSKind.ERTPS})


class ChannelMode(str, Enum):
    PERFECT = 'perfect'
    SCRIPTED = 'scripted'
    BERNOULLI = 'bernoulli'


class InterclassRule(str, Enum):
    # Interval of 2^k slots, next interval 2^k + 2k slots after the previous start.
    GAP = 'gap'
    # Interval of 2^k slots every 2k slots.
    LITERAL = 'literal'


ParamValue = Union[str, int]


@dataclass(frozen=True)
class QoSClass:
    """Service class of a flow with exactly its mandatory parameters."""

    kind: QoSKind
    class_index: int
    params: tuple[tuple[str, ParamValue], ...]
    phase: int = 0

    @property
    def latency_critical(self) -> bool:
        return self.kind in LATENCY_CRITICAL_KINDS

    def param(self, name: str) -> Optional[ParamValue]:
        for key, value in self.params:
            if key == name:
                return value
        return None


@dataclass(frozen=True)
class PacketTemplate:
    size: int
    arrival_time: Fraction = Fraction(0)
    # True means the attempt succeeds; consumed one entry per attempt.
    error_script: Optional[tuple[bool, ...]] = None


@dataclass(frozen=True)
class StaticTraffic:
    packets: tuple[PacketTemplate, ...]


@dataclass(frozen=True)
class FixedSize:
    size: int


@dataclass(frozen=True)
class UniformSize:
    low: int
    high: int


@dataclass(frozen=True)
class PoissonTraffic:
    rate_pps: Fraction
    size: Union[FixedSize, UniformSize]
    cap_bytes: int
    max_packets: Optional[int] = None


TrafficSpec = Union[StaticTraffic, PoissonTraffic]


@dataclass(frozen=True)
class FlowDefinition:
    flow_id: int
    priority: int
    quantum: int
    qos: QoSClass
    traffic: TrafficSpec
    weight: Fraction = Fraction(1)
    p_err: Fraction = Fraction(0)
    input_rate_bps: Optional[int] = None

    @property
    def declared_max_packet(self) -> int:
        if isinstance(self.traffic, StaticTraffic):
            return max((packet.size for packet in self.traffic.packets), default=0)
        return self.traffic.cap_bytes


@dataclass(frozen=True)
class ValidatedScenario:
    """A scenario that passed every validation rule; immutable from here on."""

    name: str
    policy: Policy
    output_rate_bps: int
    duration: Fraction
    quantum_default: int
    seed: int
    channel_mode: ChannelMode
    flows: tuple[FlowDefinition, ...]
    description: str = ''
    slot_length: Optional[Fraction] = None
    max_packet_bytes: Optional[int] = None
    interclass_gating: bool = False
    interclass_rule: InterclassRule = InterclassRule.GAP
    allow_small_quantum: bool = False
    zero_cost_failures: bool = False

    def flow(self, flow_id: int) -> FlowDefinition:
        for definition in self.flows:
            if definition.flow_id == flow_id:
                return definition
        raise KeyError(flow_id)


@dataclass(frozen=True)
class Packet:
    id: int
    flow_id: int
    size: int
    arrival_time: Fraction
    error_script: Optional[tuple[bool, ...]] = None


@dataclass
class FlowState:
    flow_id: int
    priority: int
    qos: QoSClass
    quantum: int
    weight: Fraction = Fraction(1)
    queue: deque[Packet] = field(default_factory=deque)
    deficit_counter: int = 0
    bonus_credits: int = 0
    suspended: bool = False
    completed: bool = False
    # Time the flow started waiting for its next service while backlogged.
    waiting_since: Optional[Fraction] = None
