"""Scenario documents: parsing, validation and canonical serialization.

A scenario is a JSON document. Parsing checks its shape with pydantic;
``validate_scenario`` then applies the domain rules and returns an immutable
``ValidatedScenario``. Every rule failure raises a ``ScenarioError`` subclass
whose message names the broken rule and the flow concerned.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping
from dataclasses import replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from app.config import Config
from app.models import (
    DEFAULT_CLASS_INDEX,
    MANDATORY_PARAMS,
    ChannelMode,
    FixedSize,
    FlowDefinition,
    InterclassRule,
    PacketTemplate,
    PoissonTraffic,
    Policy,
    QoSClass,
    QoSKind,
    StaticTraffic,
    UniformSize,
    ValidatedScenario,
)
from app.services.traffic_service import build_trace
from app.utils import format_rational, parse_rational

logger = logging.getLogger(__name__)

MAX_SEED = 2 ** 64 - 1

RawRational = Union[int, float, str]


class ScenarioError(ValueError):
    """A scenario document broke a validation rule."""

    def __init__(self, message: str, flow_id: Optional[int] = None):
        super().__init__(message)
        self.flow_id = flow_id

    def __str__(self) -> str:
        return f"{type(self).__name__}: {self.args[0]}"


class MalformedScenario(ScenarioError):
    """The document is not valid JSON or does not have the expected shape."""


class DuplicatePriority(ScenarioError):
    pass


class DuplicateFlowId(ScenarioError):
    pass


class QuantumBelowMaxPacket(ScenarioError):
    pass


class UnknownQoSKind(ScenarioError):
    pass


class MissingMandatoryParam(ScenarioError):
    pass


class UnexpectedParam(ScenarioError):
    pass


class NonPositiveRate(ScenarioError):
    pass


class NonPositiveWeight(ScenarioError):
    pass


class ArrivalAfterDuration(ScenarioError):
    pass


class PacketTooLarge(ScenarioError):
    pass


class InvalidSizeDistribution(ScenarioError):
    pass


class InvalidProbability(ScenarioError):
    pass


class UnknownPolicy(ScenarioError):
    pass


class InvalidSeed(ScenarioError):
    pass


class _Document(BaseModel):
    model_config = ConfigDict(extra='forbid')


class PacketDocument(_Document):
    size: int
    arrival_time: RawRational = 0
    error_script: Optional[list[Literal['ok', 'fail']]] = None


class StaticTrafficDocument(_Document):
    type: Literal['static']
    packets: list[PacketDocument] = Field(min_length=1)


class FixedSizeDocument(_Document):
    type: Literal['fixed']
    bytes: int


class UniformSizeDocument(_Document):
    type: Literal['uniform']
    low: int
    high: int


class PoissonTrafficDocument(_Document):
    type: Literal['poisson']
    rate_pps: RawRational
    size: Union[FixedSizeDocument, UniformSizeDocument] = Field(discriminator='type')
    cap_bytes: int
    max_packets: Optional[int] = None


class QoSDocument(_Document):
    kind: str
    class_index: Optional[int] = Field(default=None, ge=0)
    phase: int = Field(default=0, ge=0)
    params: dict[str, Union[str, int]] = Field(default_factory=dict)


class FlowDocument(_Document):
    flow_id: int = Field(ge=1)
    priority: int
    quantum: Optional[int] = None
    weight: RawRational = 1
    p_err: RawRational = 0
    input_rate_bps: Optional[int] = None
    qos: QoSDocument
    traffic: Union[StaticTrafficDocument, PoissonTrafficDocument] = Field(discriminator='type')


class ChannelDocument(_Document):
    mode: Literal['perfect', 'scripted', 'bernoulli'] = 'perfect'


class ScenarioDocument(_Document):
    """Raw scenario configuration as read from JSON."""

    name: str = 'scenario'
    description: str = ''
    policy: str = Policy.DRR.value
    output_rate_bps: int
    duration: RawRational
    quantum_default: int
    seed: Optional[int] = None
    slot_length: Optional[RawRational] = None
    max_packet_bytes: Optional[int] = None
    interclass_gating: bool = False
    interclass_rule: Literal['gap', 'literal'] = 'gap'
    allow_small_quantum: bool = False
    zero_cost_failures: bool = False
    channel: ChannelDocument = Field(default_factory=ChannelDocument)
    flows: list[FlowDocument] = Field(min_length=1)


def parse_scenario(text: str) -> ScenarioDocument:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedScenario(f"scenario is not valid JSON: {exc}") from exc
    return _document_from_mapping(payload)


def _document_from_mapping(payload: Any) -> ScenarioDocument:
    if not isinstance(payload, Mapping):
        raise MalformedScenario("scenario document must be a JSON object")
    try:
        return ScenarioDocument.model_validate(payload)
    except ValidationError as exc:
        first = exc.errors()[0]
        location = '.'.join(str(part) for part in first.get('loc', ()))
        raise MalformedScenario(f"{location}: {first.get('msg')}") from exc


def _rational(value: RawRational, what: str, flow_id: Optional[int] = None) -> Fraction:
    try:
        return parse_rational(value)
    except ValueError as exc:
        raise MalformedScenario(f"{what} is not a rational number: {value!r}", flow_id) from exc


def _validate_qos(document: QoSDocument, flow_id: int) -> QoSClass:
    try:
        kind = QoSKind(document.kind)
    except ValueError as exc:
        raise UnknownQoSKind(f"flow {flow_id} has unknown QoS kind {document.kind!r}", flow_id) from exc

    required = MANDATORY_PARAMS[kind]
    provided = set(document.params)
    missing = sorted(required - provided)
    if missing:
        raise MissingMandatoryParam(
            f"{kind.value} flow {flow_id} is missing mandatory parameter {missing[0]}",
            flow_id,
        )
    extra = sorted(provided - required)
    if extra:
        raise UnexpectedParam(
            f"{kind.value} flow {flow_id} declares parameter {extra[0]} outside its mandatory set",
            flow_id,
        )

    class_index = document.class_index
    if class_index is None:
        class_index = DEFAULT_CLASS_INDEX[kind]
    return QoSClass(
        kind=kind,
        class_index=class_index,
        params=tuple(sorted(document.params.items())),
        phase=document.phase,
    )


def _validate_static(
    document: StaticTrafficDocument,
    flow_id: int,
    duration: Fraction,
) -> StaticTraffic:
    packets: list[PacketTemplate] = []
    for index, packet in enumerate(document.packets):
        if packet.size < 1:
            raise InvalidSizeDistribution(
                f"flow {flow_id} packet {index} has non-positive size {packet.size}",
                flow_id,
            )
        arrival = _rational(packet.arrival_time, f"flow {flow_id} packet {index} arrival_time", flow_id)
        if arrival < 0:
            raise MalformedScenario(f"flow {flow_id} packet {index} arrives before time 0", flow_id)
        if arrival > duration:
            raise ArrivalAfterDuration(
                f"flow {flow_id} packet {index} arrives at {format_rational(arrival)} "
                f"after the scenario duration {format_rational(duration)}",
                flow_id,
            )
        script = None
        if packet.error_script is not None:
            script = tuple(outcome == 'ok' for outcome in packet.error_script)
        packets.append(PacketTemplate(size=packet.size, arrival_time=arrival, error_script=script))
    return StaticTraffic(packets=tuple(packets))


def _validate_poisson(document: PoissonTrafficDocument, flow_id: int) -> PoissonTraffic:
    rate = _rational(document.rate_pps, f"flow {flow_id} rate_pps", flow_id)
    if rate <= 0:
        raise NonPositiveRate(f"flow {flow_id} Poisson rate must be positive", flow_id)
    if document.cap_bytes < 1:
        raise InvalidSizeDistribution(f"flow {flow_id} cap_bytes must be positive", flow_id)
    if document.max_packets is not None and document.max_packets < 0:
        raise InvalidSizeDistribution(f"flow {flow_id} max_packets must not be negative", flow_id)

    size_document = document.size
    if isinstance(size_document, FixedSizeDocument):
        if not 1 <= size_document.bytes <= document.cap_bytes:
            raise InvalidSizeDistribution(
                f"flow {flow_id} fixed size must be between 1 and cap_bytes {document.cap_bytes}",
                flow_id,
            )
        size: Union[FixedSize, UniformSize] = FixedSize(size=size_document.bytes)
    else:
        if not 1 <= size_document.low <= size_document.high:
            raise InvalidSizeDistribution(
                f"flow {flow_id} uniform size needs 1 <= low <= high",
                flow_id,
            )
        if size_document.high > document.cap_bytes:
            raise InvalidSizeDistribution(
                f"flow {flow_id} uniform size high bound exceeds cap_bytes {document.cap_bytes}",
                flow_id,
            )
        size = UniformSize(low=size_document.low, high=size_document.high)

    return PoissonTraffic(
        rate_pps=rate,
        size=size,
        cap_bytes=document.cap_bytes,
        max_packets=document.max_packets,
    )


def validate_scenario(raw: Union[ScenarioDocument, Mapping[str, Any]]) -> ValidatedScenario:
    """Apply every scenario rule and return the validated, immutable scenario."""
    document = raw if isinstance(raw, ScenarioDocument) else _document_from_mapping(raw)

    try:
        policy = Policy(document.policy.lower())
    except ValueError as exc:
        raise UnknownPolicy(f"unknown scheduling policy {document.policy!r}") from exc

    if document.output_rate_bps <= 0:
        raise NonPositiveRate("output_rate_bps must be positive")
    if document.quantum_default <= 0:
        raise QuantumBelowMaxPacket("quantum_default must be positive")
    seed = document.seed if document.seed is not None else Config.DEFAULT_SEED
    if not 0 <= seed <= MAX_SEED:
        raise InvalidSeed(f"seed must be between 0 and {MAX_SEED}")

    duration = _rational(document.duration, "duration")
    if duration < 0:
        raise MalformedScenario("duration must not be negative")

    slot_length = None
    if document.slot_length is not None:
        slot_length = _rational(document.slot_length, "slot_length")
        if slot_length <= 0:
            raise MalformedScenario("slot_length must be positive")

    if document.max_packet_bytes is not None and document.max_packet_bytes < 1:
        raise PacketTooLarge("max_packet_bytes must be positive")

    seen_ids: set[int] = set()
    seen_priorities: dict[int, int] = {}
    flows: list[FlowDefinition] = []
    for flow_document in document.flows:
        flow_id = flow_document.flow_id
        if flow_id in seen_ids:
            raise DuplicateFlowId(f"flow id {flow_id} is declared twice", flow_id)
        seen_ids.add(flow_id)

        if flow_document.priority in seen_priorities:
            raise DuplicatePriority(
                f"flows {seen_priorities[flow_document.priority]} and {flow_id} "
                f"share priority {flow_document.priority}",
                flow_id,
            )
        seen_priorities[flow_document.priority] = flow_id

        qos = _validate_qos(flow_document.qos, flow_id)

        weight = _rational(flow_document.weight, f"flow {flow_id} weight", flow_id)
        if weight <= 0:
            raise NonPositiveWeight(f"flow {flow_id} weight must be positive", flow_id)

        p_err = _rational(flow_document.p_err, f"flow {flow_id} p_err", flow_id)
        if not 0 <= p_err <= 1:
            raise InvalidProbability(f"flow {flow_id} p_err must be within [0, 1]", flow_id)

        if flow_document.input_rate_bps is not None and flow_document.input_rate_bps <= 0:
            raise NonPositiveRate(f"flow {flow_id} input_rate_bps must be positive", flow_id)

        if isinstance(flow_document.traffic, StaticTrafficDocument):
            traffic: Union[StaticTraffic, PoissonTraffic] = _validate_static(
                flow_document.traffic, flow_id, duration
            )
        else:
            traffic = _validate_poisson(flow_document.traffic, flow_id)

        quantum = flow_document.quantum if flow_document.quantum is not None else document.quantum_default
        definition = FlowDefinition(
            flow_id=flow_id,
            priority=flow_document.priority,
            quantum=quantum,
            qos=qos,
            traffic=traffic,
            weight=weight,
            p_err=p_err,
            input_rate_bps=flow_document.input_rate_bps,
        )

        declared_max = definition.declared_max_packet
        if document.max_packet_bytes is not None and declared_max > document.max_packet_bytes:
            raise PacketTooLarge(
                f"flow {flow_id} declares packets of {declared_max} bytes above "
                f"max_packet_bytes {document.max_packet_bytes}",
                flow_id,
            )
        if quantum <= 0:
            raise QuantumBelowMaxPacket(f"flow {flow_id} quantum must be positive", flow_id)
        if quantum < declared_max and not document.allow_small_quantum:
            raise QuantumBelowMaxPacket(
                f"flow {flow_id} quantum {quantum} is below its maximum packet size {declared_max}",
                flow_id,
            )
        flows.append(definition)

    return ValidatedScenario(
        name=document.name,
        description=document.description,
        policy=policy,
        output_rate_bps=document.output_rate_bps,
        duration=duration,
        quantum_default=document.quantum_default,
        seed=seed,
        channel_mode=ChannelMode(document.channel.mode),
        flows=tuple(flows),
        slot_length=slot_length,
        max_packet_bytes=document.max_packet_bytes,
        interclass_gating=document.interclass_gating,
        interclass_rule=InterclassRule(document.interclass_rule),
        allow_small_quantum=document.allow_small_quantum,
        zero_cost_failures=document.zero_cost_failures,
    )


def load_scenario(path: Union[str, Path]) -> ValidatedScenario:
    text = Path(path).read_text(encoding='utf-8')
    scenario = validate_scenario(parse_scenario(text))
    logger.debug("[Scenario] Loaded %s from %s with %s flows", scenario.name, path, len(scenario.flows))
    return scenario


def _traffic_to_document(traffic: Union[StaticTraffic, PoissonTraffic]) -> dict[str, Any]:
    if isinstance(traffic, StaticTraffic):
        packets = []
        for packet in traffic.packets:
            entry: dict[str, Any] = {
                'size': packet.size,
                'arrival_time': format_rational(packet.arrival_time),
            }
            if packet.error_script is not None:
                entry['error_script'] = ['ok' if outcome else 'fail' for outcome in packet.error_script]
            packets.append(entry)
        return {'type': 'static', 'packets': packets}

    if isinstance(traffic.size, FixedSize):
        size: dict[str, Any] = {'type': 'fixed', 'bytes': traffic.size.size}
    else:
        size = {'type': 'uniform', 'low': traffic.size.low, 'high': traffic.size.high}
    return {
        'type': 'poisson',
        'rate_pps': format_rational(traffic.rate_pps),
        'size': size,
        'cap_bytes': traffic.cap_bytes,
        'max_packets': traffic.max_packets,
    }


def scenario_to_document(scenario: ValidatedScenario) -> dict[str, Any]:
    flows = []
    for flow in scenario.flows:
        flows.append({
            'flow_id': flow.flow_id,
            'priority': flow.priority,
            'quantum': flow.quantum,
            'weight': format_rational(flow.weight),
            'p_err': format_rational(flow.p_err),
            'input_rate_bps': flow.input_rate_bps,
            'qos': {
                'kind': flow.qos.kind.value,
                'class_index': flow.qos.class_index,
                'phase': flow.qos.phase,
                'params': dict(flow.qos.params),
            },
            'traffic': _traffic_to_document(flow.traffic),
        })
    return {
        'name': scenario.name,
        'description': scenario.description,
        'policy': scenario.policy.value,
        'output_rate_bps': scenario.output_rate_bps,
        'duration': format_rational(scenario.duration),
        'quantum_default': scenario.quantum_default,
        'seed': scenario.seed,
        'slot_length': format_rational(scenario.slot_length) if scenario.slot_length is not None else None,
        'max_packet_bytes': scenario.max_packet_bytes,
        'interclass_gating': scenario.interclass_gating,
        'interclass_rule': scenario.interclass_rule.value,
        'allow_small_quantum': scenario.allow_small_quantum,
        'zero_cost_failures': scenario.zero_cost_failures,
        'channel': {'mode': scenario.channel_mode.value},
        'flows': flows,
    }


def serialize_scenario(scenario: ValidatedScenario) -> str:
    return json.dumps(scenario_to_document(scenario), sort_keys=True, indent=2) + '\n'


def with_overrides(
    scenario: ValidatedScenario,
    *,
    policy: Optional[Union[Policy, str]] = None,
    seed: Optional[int] = None,
    interclass_gating: Optional[bool] = None,
    zero_cost_failures: Optional[bool] = None,
) -> ValidatedScenario:
    """Copy of the scenario with command-line overrides applied."""
    changes: dict[str, Any] = {}
    if policy is not None:
        try:
            changes['policy'] = Policy(policy.lower()) if isinstance(policy, str) else Policy(policy)
        except ValueError as exc:
            raise UnknownPolicy(f"unknown scheduling policy {policy!r}") from exc
    if seed is not None:
        if not 0 <= seed <= MAX_SEED:
            raise InvalidSeed(f"seed must be between 0 and {MAX_SEED}")
        changes['seed'] = seed
    if interclass_gating is not None:
        changes['interclass_gating'] = interclass_gating
    if zero_cost_failures is not None:
        changes['zero_cost_failures'] = zero_cost_failures
    return replace(scenario, **changes) if changes else scenario


def max_packet_size(scenario: ValidatedScenario) -> int:
    """Largest packet in the fully expanded traces of the scenario (M)."""
    return max((packet.size for packet in build_trace(scenario)), default=0)
