"""Run execution and the files a run or a comparison leaves behind."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

from app.models import Policy, ValidatedScenario
from app.services.metrics_service import (
    MetricsLedger,
    NoServedPackets,
    aggregate_throughput,
    bytes_served,
    critical_mean_latency,
    cumulative_potential_throughput,
    delay_bound,
    max_service_gap,
    per_flow_latency,
    utilization,
    worst_window_fairness,
)
from app.services.scenario_service import with_overrides
from app.services.scheduler_service import Engine, FinalReport
from app.utils import atomic_write_text, format_rational

logger = logging.getLogger(__name__)

FORMATS = ('csv', 'json', 'plotdata')
LATENCY_ORDER = (Policy.ODRRSDC, Policy.ODRREDC, Policy.ODRR)


def _number(value: Optional[Fraction]) -> Optional[float]:
    return None if value is None else float(value)


def _cell(value: Optional[Fraction]) -> str:
    return '' if value is None else f"{float(value):.6f}"


def execute_run(
    scenario: ValidatedScenario,
    policy: Policy,
    seed: int,
    t_end: Optional[Fraction] = None,
) -> FinalReport:
    configured = with_overrides(scenario, policy=policy, seed=seed)
    return Engine(configured).run_until(t_end)


def _execute_job(job: tuple[ValidatedScenario, Policy, int, Optional[Fraction]]) -> FinalReport:
    return execute_run(*job)


def execute_runs(
    scenario: ValidatedScenario,
    policies: Sequence[Policy],
    seeds: Sequence[int],
    t_end: Optional[Fraction] = None,
    workers: int = 1,
) -> list[FinalReport]:
    """Run every (policy, seed) pair; results come back in policy-major order."""
    jobs = [(scenario, policy, seed, t_end) for policy in policies for seed in seeds]
    if workers > 1 and len(jobs) > 1:
        logger.info("[Report] Running %s jobs on %s workers", len(jobs), workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_execute_job, jobs))
    return [_execute_job(job) for job in jobs]


def delay_bound_summary(
    report: FinalReport,
    scenario: ValidatedScenario,
    literal: bool = False,
) -> dict[str, Any]:
    critical = [flow for flow in scenario.flows if flow.qos.latency_critical]
    quanta = [flow.quantum for flow in (critical or scenario.flows)]
    # s is the declared packet size bound, not the largest packet the trace happened to draw.
    packet_bound = max(flow.declared_max_packet for flow in scenario.flows)
    bound = delay_bound(
        len(critical),
        packet_bound,
        max(quanta),
        scenario.output_rate_bps,
        literal=literal,
    )
    # The bound is checked against service gaps; packet latency is reported beside it.
    violations = []
    figures: dict[str, Any] = {}
    for flow in critical:
        gap = max_service_gap(report.ledger, flow.flow_id)
        if gap is not None and gap > bound:
            violations.append(flow.flow_id)
        try:
            _, worst_latency = per_flow_latency(report.ledger, flow.flow_id)
        except NoServedPackets:
            worst_latency = None
        figures[str(flow.flow_id)] = {
            'max_service_gap': _number(gap),
            'max_latency': _number(worst_latency),
        }
    return {
        'reading': 'literal' if literal else 'consistent',
        'n': len(critical),
        's': packet_bound,
        'max_quantum': max(quanta),
        'value': float(bound),
        'violations': violations,
        'critical_flows': figures,
    }


def summarize(report: FinalReport, scenario: ValidatedScenario, literal_delay_bound: bool = False) -> dict[str, Any]:
    ledger = report.ledger
    flows: dict[str, Any] = {}
    for definition in scenario.flows:
        flow_id = definition.flow_id
        records = ledger.flow_records(flow_id)
        try:
            mean_latency, worst_latency = per_flow_latency(ledger, flow_id)
        except NoServedPackets:
            mean_latency = worst_latency = None
        first_round = records[0].round_index if records else 1
        last_round = records[-1].round_index if records else 0
        spt = sum(record.q_credit + record.dc_start - record.dc_end for record in records)
        flows[str(flow_id)] = {
            'priority': definition.priority,
            'qos_kind': definition.qos.kind.value,
            'latency_critical': definition.qos.latency_critical,
            'bytes_served': bytes_served(ledger, flow_id),
            'packets_served': sum(record.packets_served for record in records),
            'rounds_served': len(records),
            'first_round': first_round if records else None,
            'last_round': last_round if records else None,
            'completion_round': report.completion_rounds.get(flow_id),
            'mean_latency': _number(mean_latency),
            'max_latency': _number(worst_latency),
            'max_service_gap': _number(max_service_gap(ledger, flow_id)),
            'utilization': float(utilization(ledger, flow_id)),
            'spt': spt,
        }
    return {
        'scenario': report.scenario_name,
        'policy': report.policy.value,
        'seed': report.seed,
        'rounds': report.rounds,
        'end_time': float(report.end_time),
        'end_time_exact': format_rational(report.end_time),
        'busy_time': float(ledger.busy_time),
        'max_packet': report.max_packet,
        'aggregate_throughput_bps': float(aggregate_throughput(ledger)),
        'critical_mean_latency': _number(critical_mean_latency(ledger)),
        'fairness_worst_window': _number(worst_window_fairness(ledger)),
        'fairness_worst_window_primed': _number(worst_window_fairness(ledger, include_bonus=True)),
        'stopped_by_guard': report.stopped_by_guard,
        'delay_bound': delay_bound_summary(report, scenario, literal=literal_delay_bound),
        'flows': flows,
    }


def ledger_to_csv(ledger: MetricsLedger) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow([
        'round', 'flow_id', 'q_credit', 'bonus_received', 'dc_start', 'dc_end', 'pt',
        'bytes_served', 'bytes_attempted', 'packets_served', 'suspended', 'backlogged_after',
        'credits_donated', 'credits_discarded', 'waiting_since', 'start_time', 'end_time',
    ])
    for record in sorted(ledger.records, key=lambda item: (item.round_index, item.start_time, item.flow_id)):
        writer.writerow([
            record.round_index,
            record.flow_id,
            record.q_credit,
            record.bonus_received,
            record.dc_start,
            record.dc_end,
            record.q_credit + record.dc_start - record.dc_end,
            record.bytes_served,
            record.bytes_attempted,
            record.packets_served,
            int(record.suspended),
            int(record.backlogged_after),
            record.credits_donated,
            record.credits_discarded,
            format_rational(record.waiting_since),
            format_rational(record.start_time),
            format_rational(record.end_time),
        ])
    return buffer.getvalue()


def packets_to_csv(ledger: MetricsLedger) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(['packet_id', 'flow_id', 'size', 'arrival_time', 'completion_time', 'latency'])
    for packet_id in sorted(ledger.packets):
        record = ledger.packets[packet_id]
        writer.writerow([
            record.packet_id,
            record.flow_id,
            record.size,
            format_rational(record.arrival_time),
            '' if record.completion_time is None else format_rational(record.completion_time),
            '' if record.latency is None else format_rational(record.latency),
        ])
    return buffer.getvalue()


def plot_data(values: Iterable[tuple[int, Optional[float]]]) -> str:
    lines = ['# flow_id\tvalue']
    for flow_id, value in values:
        if value is None:
            continue
        lines.append(f"{flow_id}\t{value:.6f}")
    return '\n'.join(lines) + '\n'


def events_to_ndjson(events: Iterable[dict[str, Any]]) -> str:
    return ''.join(json.dumps(event, sort_keys=True, separators=(',', ':')) + '\n' for event in events)


def run_directory(out_dir: Path, policy: Policy, seed: int) -> Path:
    return Path(out_dir) / f"{policy.value}-seed{seed}"


def write_run_outputs(
    report: FinalReport,
    scenario: ValidatedScenario,
    out_dir: Path,
    formats: Sequence[str] = ('csv', 'json'),
    literal_delay_bound: bool = False,
    write_events: bool = True,
) -> Path:
    target = run_directory(out_dir, report.policy, report.seed)
    summary = summarize(report, scenario, literal_delay_bound)
    if 'csv' in formats:
        atomic_write_text(target / 'ledger.csv', ledger_to_csv(report.ledger))
        atomic_write_text(target / 'packets.csv', packets_to_csv(report.ledger))
    if 'json' in formats:
        atomic_write_text(target / 'summary.json', json.dumps(summary, sort_keys=True, indent=2) + '\n')
    if 'plotdata' in formats:
        flows = sorted(summary['flows'].items(), key=lambda item: int(item[0]))
        atomic_write_text(
            target / 'utilization.dat',
            plot_data((int(flow_id), values['utilization']) for flow_id, values in flows),
        )
        atomic_write_text(
            target / 'latency.dat',
            plot_data((int(flow_id), values['mean_latency']) for flow_id, values in flows),
        )
    if write_events:
        atomic_write_text(target / 'events.ndjson', events_to_ndjson(report.events))
    logger.info("[Report] Wrote %s outputs to %s", report.policy.label, target)
    return target


@dataclass(frozen=True)
class ComparisonRow:
    policy: Policy
    seed: int
    critical_mean_latency: Optional[Fraction]
    aggregate_throughput: Fraction
    fairness: Optional[Fraction]
    utilization: dict[int, Fraction]
    completion_rounds: dict[int, Optional[int]]
    fairness_primed: Optional[Fraction] = None


def comparison_rows(reports: Sequence[FinalReport]) -> list[ComparisonRow]:
    return [
        ComparisonRow(
            policy=report.policy,
            seed=report.seed,
            critical_mean_latency=critical_mean_latency(report.ledger),
            aggregate_throughput=aggregate_throughput(report.ledger),
            fairness=worst_window_fairness(report.ledger),
            utilization={flow_id: utilization(report.ledger, flow_id) for flow_id in sorted(report.ledger.flows)},
            completion_rounds=dict(sorted(report.completion_rounds.items())),
            fairness_primed=worst_window_fairness(report.ledger, include_bonus=True),
        )
        for report in reports
    ]


def comparison_to_csv(rows: Sequence[ComparisonRow]) -> str:
    flow_ids = sorted({flow_id for row in rows for flow_id in row.utilization})
    baseline: dict[int, ComparisonRow] = {}
    for row in rows:
        baseline.setdefault(row.seed, row)

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(
        ['policy', 'seed', 'critical_mean_latency', 'aggregate_throughput_bps', 'fairness', 'fairness_primed']
        + [f"util_flow_{flow_id}" for flow_id in flow_ids]
        + [f"completion_round_flow_{flow_id}" for flow_id in flow_ids]
        + ['delta_latency', 'delta_throughput_bps']
    )
    for row in rows:
        base = baseline[row.seed]
        delta_latency = None
        if row.critical_mean_latency is not None and base.critical_mean_latency is not None:
            delta_latency = row.critical_mean_latency - base.critical_mean_latency
        completion = [row.completion_rounds.get(flow_id) for flow_id in flow_ids]
        writer.writerow(
            [row.policy.value, row.seed, _cell(row.critical_mean_latency),
             _cell(row.aggregate_throughput), _cell(row.fairness), _cell(row.fairness_primed)]
            + [_cell(row.utilization.get(flow_id)) for flow_id in flow_ids]
            + ['' if value is None else value for value in completion]
            + [_cell(delta_latency), _cell(row.aggregate_throughput - base.aggregate_throughput)]
        )
    return buffer.getvalue()


def ordering_summary(rows: Sequence[ComparisonRow], threshold: float) -> dict[str, Any]:
    """Per-metric wins and how often the expected policy orderings held.

    Ties count as wins for every tied policy and as satisfying an ordering.
    """
    by_seed: dict[int, dict[Policy, ComparisonRow]] = {}
    for row in rows:
        by_seed.setdefault(row.seed, {})[row.policy] = row

    latency_wins: dict[str, int] = {}
    throughput_wins: dict[str, int] = {}
    for per_policy in by_seed.values():
        latencies = {policy: row.critical_mean_latency for policy, row in per_policy.items()
                     if row.critical_mean_latency is not None}
        if latencies:
            best = min(latencies.values())
            for policy, value in latencies.items():
                if value == best:
                    latency_wins[policy.value] = latency_wins.get(policy.value, 0) + 1
        best_throughput = max(row.aggregate_throughput for row in per_policy.values())
        for policy, row in per_policy.items():
            if row.aggregate_throughput == best_throughput:
                throughput_wins[policy.value] = throughput_wins.get(policy.value, 0) + 1

    summary: dict[str, Any] = {
        'seeds': len(by_seed),
        'latency_wins': dict(sorted(latency_wins.items())),
        'throughput_wins': dict(sorted(throughput_wins.items())),
        'threshold': threshold,
        'comparable': 0,
        'latency_ordering_held': None,
        'throughput_ordering_held': None,
        'latency_ordering_met': None,
        'throughput_ordering_met': None,
    }
    comparable = [
        per_policy for per_policy in by_seed.values()
        if all(policy in per_policy for policy in LATENCY_ORDER)
    ]
    if not comparable:
        return summary

    latency_held = 0
    throughput_held = 0
    for per_policy in comparable:
        sdc, edc, odrr = (per_policy[policy] for policy in LATENCY_ORDER)
        values = [sdc.critical_mean_latency, edc.critical_mean_latency, odrr.critical_mean_latency]
        if None not in values and values[0] <= values[1] <= values[2]:
            latency_held += 1
        if (edc.aggregate_throughput >= odrr.aggregate_throughput
                and sdc.aggregate_throughput >= odrr.aggregate_throughput):
            throughput_held += 1
    count = len(comparable)
    summary.update({
        'comparable': count,
        'latency_ordering_held': latency_held,
        'throughput_ordering_held': throughput_held,
        'latency_ordering_met': latency_held >= threshold * count,
        'throughput_ordering_met': throughput_held >= threshold * count,
    })
    return summary


def comparison_to_text(scenario_name: str, rows: Sequence[ComparisonRow], summary: dict[str, Any]) -> str:
    lines = [f"Policy comparison for {scenario_name} over {summary['seeds']} seed(s)", '']
    lines.append(f"{'policy':<10}{'mean_latency_s':>16}{'throughput_bps':>16}{'fairness':>12}")
    policies: list[Policy] = []
    for row in rows:
        if row.policy not in policies:
            policies.append(row.policy)
    for policy in policies:
        mine = [row for row in rows if row.policy is policy]
        latencies = [row.critical_mean_latency for row in mine if row.critical_mean_latency is not None]
        fairness = [row.fairness for row in mine if row.fairness is not None]
        mean_latency = sum(latencies, Fraction(0)) / len(latencies) if latencies else None
        mean_throughput = sum((row.aggregate_throughput for row in mine), Fraction(0)) / len(mine)
        mean_fairness = sum(fairness, Fraction(0)) / len(fairness) if fairness else None
        lines.append(
            f"{policy.label:<10}{_cell(mean_latency) or '-':>16}{_cell(mean_throughput):>16}"
            f"{_cell(mean_fairness) or '-':>12}"
        )
    lines.append('')
    lines.append('Wins (lowest critical mean latency): ' + _format_wins(summary['latency_wins']))
    lines.append('Wins (highest aggregate throughput): ' + _format_wins(summary['throughput_wins']))
    if summary['latency_ordering_held'] is not None:
        comparable = summary['comparable']
        lines.append(
            f"Latency ordering ODRRSDC <= ODRREDC <= ODRR held in {summary['latency_ordering_held']}/{comparable} "
            f"seed(s) (threshold {summary['threshold']:.2f}: "
            f"{'met' if summary['latency_ordering_met'] else 'not met'})"
        )
        lines.append(
            f"Throughput ordering ODRREDC, ODRRSDC >= ODRR held in {summary['throughput_ordering_held']}/{comparable} "
            f"seed(s) (threshold {summary['threshold']:.2f}: "
            f"{'met' if summary['throughput_ordering_met'] else 'not met'})"
        )
    return '\n'.join(lines) + '\n'


def _format_wins(wins: dict[str, int]) -> str:
    if not wins:
        return 'none'
    return ', '.join(f"{name}={count}" for name, count in wins.items())


def write_comparison(
    scenario_name: str,
    reports: Sequence[FinalReport],
    out_dir: Path,
    threshold: float,
) -> dict[str, Any]:
    rows = comparison_rows(reports)
    summary = ordering_summary(rows, threshold)
    atomic_write_text(Path(out_dir) / 'comparison.csv', comparison_to_csv(rows))
    atomic_write_text(Path(out_dir) / 'comparison.txt', comparison_to_text(scenario_name, rows, summary))
    logger.info("[Report] Wrote comparison of %s runs to %s", len(rows), out_dir)
    return summary
