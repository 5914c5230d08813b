import logging
from typing import Optional, Sequence, Union

from app.config import Config, validate_config
from app.models import Packet, Policy, ValidatedScenario
from app.services.channel_service import ChannelModel
from app.services.scenario_service import with_overrides
from app.services.scheduler_service import Engine

logger = logging.getLogger(__name__)


def create_simulation(
    scenario: ValidatedScenario,
    *,
    policy: Optional[Union[Policy, str]] = None,
    seed: Optional[int] = None,
    interclass_gating: Optional[bool] = None,
    zero_cost_failures: Optional[bool] = None,
    trace: Optional[Sequence[Packet]] = None,
    channel: Optional[ChannelModel] = None,
    max_rounds: Optional[int] = None,
) -> Engine:
    """Build a ready-to-run engine for the scenario with the given overrides."""
    validate_config()
    configured = with_overrides(
        scenario,
        policy=policy,
        seed=seed,
        interclass_gating=interclass_gating,
        zero_cost_failures=zero_cost_failures,
    )
    engine = Engine(
        configured,
        trace=trace,
        channel=channel,
        max_rounds=max_rounds or Config.MAX_ROUNDS,
    )
    logger.info(
        "[Simulation] Built %s policy=%s seed=%s flows=%s packets=%s M=%s",
        configured.name,
        configured.policy.label,
        configured.seed,
        len(configured.flows),
        len(engine.trace),
        engine.max_packet,
    )
    return engine
