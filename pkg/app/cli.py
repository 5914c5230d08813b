"""Command line entry point: ``python -m app.cli <command>``.

Exit status is 0 on success, 1 when the scenario is invalid and 2 when a file
cannot be read or written.
"""

import logging
import sys
from fractions import Fraction
from pathlib import Path
from typing import NoReturn, Optional

import click
from dotenv import load_dotenv

from app.config import Config, validate_config
from app.models import Policy
from app.services.report_service import FORMATS, execute_runs, write_comparison, write_run_outputs
from app.services.scenario_service import (
    ScenarioError,
    load_scenario,
    serialize_scenario,
    with_overrides,
)
from app.services.traffic_service import arrivals_in, build_trace, trace_to_csv, write_trace_csv
from app.utils import parse_rational

logger = logging.getLogger(__name__)

EXIT_INVALID = 1
EXIT_IO = 2

POLICY_CHOICE = click.Choice([policy.value for policy in Policy], case_sensitive=False)


def _configure_logging() -> None:
    logging.basicConfig(
        level=getattr(logging, Config.LOG_LEVEL, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )


def _fail(message: str, status: int) -> NoReturn:
    print(f"ERROR: {message}", file=sys.stderr)
    sys.exit(status)


def _rational_option(value: Optional[str], name: str) -> Optional[Fraction]:
    if value is None:
        return None
    try:
        return parse_rational(value)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint=name) from exc


def _run_and_report(
    scenario_path: str,
    policies: tuple[str, ...],
    seeds: tuple[int, ...],
    out: Optional[str],
    formats: tuple[str, ...],
    interclass_gating: Optional[bool],
    zero_cost_failures: bool,
    literal_delay_bound: bool,
    compare: bool,
    workers: Optional[int],
    until: Optional[str],
) -> None:
    t_end = _rational_option(until, '--until')
    try:
        scenario = load_scenario(scenario_path)
        scenario = with_overrides(
            scenario,
            interclass_gating=interclass_gating,
            zero_cost_failures=True if zero_cost_failures else None,
        )
        chosen = [Policy(policy.lower()) for policy in policies] or [scenario.policy]
        chosen_seeds = list(seeds) or [scenario.seed]
        # Reject bad seeds before any run starts.
        for seed in chosen_seeds:
            with_overrides(scenario, seed=seed)
    except ScenarioError as exc:
        _fail(str(exc), EXIT_INVALID)
    except OSError as exc:
        _fail(f"Could not read scenario {scenario_path}: {exc}", EXIT_IO)

    out_dir = Path(out or Config.OUTPUT_DIR)
    try:
        reports = execute_runs(
            scenario,
            chosen,
            chosen_seeds,
            t_end=t_end,
            workers=workers or Config.MAX_WORKERS,
        )
    except ValueError as exc:
        _fail(str(exc), EXIT_INVALID)

    try:
        for report in reports:
            target = write_run_outputs(
                report,
                scenario,
                out_dir,
                formats=formats or ('csv', 'json'),
                literal_delay_bound=literal_delay_bound,
                write_events=Config.WRITE_EVENT_LOG,
            )
            click.echo(
                f"{report.policy.label} seed={report.seed}: rounds={report.rounds} "
                f"end_time={float(report.end_time):.6f}s -> {target}"
            )
            if report.stopped_by_guard:
                click.echo(f"WARNING: {report.policy.label} seed={report.seed} stopped by the round guard", err=True)
        if compare:
            summary = write_comparison(scenario.name, reports, out_dir, Config.ORDERING_THRESHOLD)
            click.echo(f"Comparison written to {out_dir / 'comparison.txt'}")
            logger.info("[CLI] Ordering summary: %s", summary)
    except OSError as exc:
        _fail(f"Could not write outputs to {out_dir}: {exc}", EXIT_IO)


@click.group()
def cli() -> None:
    """Deficit round robin scheduler simulator."""
    load_dotenv()
    _configure_logging()
    try:
        validate_config()
    except RuntimeError as exc:
        _fail(str(exc), EXIT_INVALID)


def _run_options(func):
    options = [
        click.option('--scenario', 'scenario_path', required=True, type=click.Path(dir_okay=False),
                     help='Scenario JSON file.'),
        click.option('--policy', 'policies', multiple=True, type=POLICY_CHOICE,
                     help='Scheduling policy; repeat for several. Defaults to the scenario policy.'),
        click.option('--seed', 'seeds', multiple=True, type=int,
                     help='Random seed; repeat for several. Defaults to the scenario seed.'),
        click.option('--out', type=click.Path(file_okay=False), default=None,
                     help='Output directory (default SIM_OUTPUT_DIR).'),
        click.option('--format', 'formats', multiple=True, type=click.Choice(FORMATS),
                     help='Report formats; repeat for several. Defaults to csv and json.'),
        click.option('--interclass-gating/--no-interclass-gating', default=None,
                     help='Override the scenario interclass gating flag.'),
        click.option('--zero-cost-failures', is_flag=True,
                     help='Failed transmissions do not occupy the line.'),
        click.option('--literal-delay-bound', is_flag=True,
                     help='Report the unparenthesized delay bound reading.'),
        click.option('--workers', type=click.IntRange(min=1), default=None,
                     help='Parallel runs (default SIM_MAX_WORKERS).'),
        click.option('--until', default=None,
                     help='Stop each run at this time in seconds (default: scenario duration).'),
    ]
    for option in reversed(options):
        func = option(func)
    return func


@cli.command()
@_run_options
@click.option('--compare', is_flag=True, help='Also write a comparison of the runs.')
def run(compare: bool, **kwargs) -> None:
    """Simulate the scenario for every policy and seed."""
    _run_and_report(compare=compare, **kwargs)


@cli.command(name='compare')
@_run_options
def compare_command(**kwargs) -> None:
    """Simulate every policy and seed, then write comparison.csv and comparison.txt."""
    if len(kwargs['policies']) == 1:
        raise click.UsageError('compare needs at least two policies (or none for all four).')
    if not kwargs['policies']:
        kwargs['policies'] = tuple(policy.value for policy in Policy)
    _run_and_report(compare=True, **kwargs)


@cli.command()
@click.argument('scenario_path', type=click.Path(dir_okay=False))
def validate(scenario_path: str) -> None:
    """Validate a scenario and print its normalized form."""
    try:
        scenario = load_scenario(scenario_path)
    except ScenarioError as exc:
        _fail(str(exc), EXIT_INVALID)
    except OSError as exc:
        _fail(f"Could not read scenario {scenario_path}: {exc}", EXIT_IO)
    click.echo(serialize_scenario(scenario), nl=False)


@cli.command()
@click.option('--scenario', 'scenario_path', required=True, type=click.Path(dir_okay=False))
@click.option('--seed', type=int, default=None, help='Override the scenario seed.')
@click.option('--from', 't_from', default=None, help='Window start in seconds (inclusive).')
@click.option('--to', 't_to', default=None, help='Window end in seconds (exclusive).')
@click.option('--out', type=click.Path(dir_okay=False), default=None, help='Write CSV here instead of stdout.')
def trace(scenario_path: str, seed: Optional[int], t_from: Optional[str], t_to: Optional[str],
          out: Optional[str]) -> None:
    """Export the expanded packet trace as CSV."""
    start = _rational_option(t_from, '--from')
    end = _rational_option(t_to, '--to')
    try:
        scenario = with_overrides(load_scenario(scenario_path), seed=seed)
    except ScenarioError as exc:
        _fail(str(exc), EXIT_INVALID)
    except OSError as exc:
        _fail(f"Could not read scenario {scenario_path}: {exc}", EXIT_IO)

    packets = build_trace(scenario)
    if start is not None or end is not None:
        try:
            packets = arrivals_in(
                packets,
                start if start is not None else Fraction(0),
                end if end is not None else scenario.duration + 1,
            )
        except ValueError as exc:
            raise click.BadParameter(str(exc), param_hint='--from/--to') from exc

    if out is None:
        click.echo(trace_to_csv(packets), nl=False)
        return
    try:
        write_trace_csv(packets, out)
    except OSError as exc:
        _fail(f"Could not write trace to {out}: {exc}", EXIT_IO)
    logger.info("[CLI] Wrote %s packets to %s", len(packets), out)


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
