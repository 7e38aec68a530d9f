"""Per-attack aggregation of protocol results and baseline-relative delta tables.

Overall averages are unweighted means over attack types (not over pooled runs). Rendered
tables show the baseline row in absolute values and every other method as signed deltas;
the best delta per column is bold (largest for AUROC, smallest for APCER).
"""
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from viser.datasets.manifest import AttackType
from viser.exceptions import ProtocolError

logger = logging.getLogger(__name__)

METRICS = ('auroc', 'apcer')
DECIMALS = 4
CSV_COLUMNS = ['method', 'attack_type', 'metric', 'mean', 'delta', 'n_runs']
AVERAGE = 'average'


def _mean(values):
    values = list(values)
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class CellStats:
    mean_auroc: float
    mean_apcer: float
    n_runs: int
    std_auroc: float = 0.
    std_apcer: float = 0.

    def mean(self, metric):
        return self.mean_auroc if metric == 'auroc' else self.mean_apcer


@dataclass
class MethodReport:
    """Per-attack means of one method.

    `partial` lists attack types with fewer runs than expected (or none at all).
    """
    method: str
    per_attack: Dict[AttackType, CellStats]
    avg_auroc: float
    avg_apcer: float
    partial: List[AttackType] = field(default_factory=list)

    @property
    def attacks(self):
        return [a for a in AttackType.attacks() if a in self.per_attack]

    def avg(self, metric):
        return self.avg_auroc if metric == 'auroc' else self.avg_apcer

    def diagnostics(self):
        return {a.value: dict(mean_auroc=c.mean_auroc, mean_apcer=c.mean_apcer, n_runs=c.n_runs,
                              std_auroc=c.std_auroc, std_apcer=c.std_apcer)
                for a, c in self.per_attack.items()}


def aggregate_runs(results, expected_runs=None, attacks=None) -> MethodReport:
    """Aggregate the runs of one method.

    Arguments:
        results {list of RunResult} -- Runs of a single method.

    Keyword Arguments:
        expected_runs {int} -- Runs per attack type a complete cell has. If 'None' any
            count is complete. (default: {None})
        attacks {list} -- Attack types the report should cover. If 'None' all seven.
            (default: {None})

    Returns:
        MethodReport -- Per-attack means and unweighted averages over attack types.
    """
    results = list(results)
    if not results:
        raise ValueError("Cannot aggregate an empty list of runs")
    methods = {r.method for r in results}
    if len(methods) > 1:
        raise ValueError(f"Runs of several methods given: {sorted(methods)}")
    attacks = [AttackType.parse(a) for a in (attacks or AttackType.attacks())]
    per_attack, partial = {}, []
    for attack in attacks:
        runs = [r for r in results if r.held_out_attack is attack]
        if not runs:
            partial.append(attack)
            continue
        aurocs = np.array(sorted(r.auroc for r in runs))
        apcers = np.array(sorted(r.apcer_at_bpcer1 for r in runs))
        per_attack[attack] = CellStats(_mean(aurocs), _mean(apcers), len(runs),
                                       float(aurocs.std()), float(apcers.std()))
        if expected_runs is not None and len(runs) < expected_runs:
            partial.append(attack)
    if not per_attack:
        raise ValueError(f"No runs for any of the attack types {[a.value for a in attacks]}")
    report = MethodReport(methods.pop(), per_attack, _mean(c.mean_auroc for c in per_attack.values()),
                          _mean(c.mean_apcer for c in per_attack.values()), partial)
    if partial:
        logger.warning("partial report", extra=dict(method=report.method, partial=[a.value for a in partial]))
    return report


@dataclass
class DeltaRow:
    method: str
    auroc: Dict[AttackType, float]
    apcer: Dict[AttackType, float]
    avg_auroc: float
    avg_apcer: float

    def delta(self, metric, attack=None):
        if attack is None:
            return self.avg_auroc if metric == 'auroc' else self.avg_apcer
        return (self.auroc if metric == 'auroc' else self.apcer)[attack]


@dataclass
class DeltaReport:
    baseline: MethodReport
    reports: List[MethodReport]
    rows: List[DeltaRow]

    @property
    def baseline_method(self):
        return self.baseline.method

    @property
    def attacks(self):
        return self.baseline.attacks

    def row(self, method) -> DeltaRow:
        return next(r for r in self.rows if r.method == method)


def delta_table(baseline: MethodReport, methods: Sequence[MethodReport]) -> DeltaReport:
    """Element-wise `method - baseline` for both metrics. The average delta is the mean of
    the per-attack deltas.
    """
    rows = []
    for report in methods:
        if set(report.per_attack) != set(baseline.per_attack):
            missing = set(baseline.per_attack) ^ set(report.per_attack)
            raise ValueError(f"Attack coverage of {report.method!r} differs from baseline "
                             f"{baseline.method!r} on {sorted(a.value for a in missing)}")
        auroc = {a: report.per_attack[a].mean_auroc - baseline.per_attack[a].mean_auroc for a in baseline.attacks}
        apcer = {a: report.per_attack[a].mean_apcer - baseline.per_attack[a].mean_apcer for a in baseline.attacks}
        rows.append(DeltaRow(report.method, auroc, apcer, _mean(auroc.values()), _mean(apcer.values())))
    return DeltaReport(baseline, list(methods), rows)


def _round(value):
    # adding 0. turns -0.0 into 0.0
    return round(float(value), DECIMALS) + 0.


def _fmt(value, signed=False):
    value = _round(value)
    return f"{value:+.{DECIMALS}f}" if signed else f"{value:.{DECIMALS}f}"


def best_cells(report: DeltaReport, metric):
    """Methods holding the best rounded delta of each column (attack types, then `None`
    for the average). Returns `{column: (methods, tied)}`.
    """
    pick = max if metric == 'auroc' else min
    out = {}
    for column in report.attacks + [None]:
        values = {row.method: _round(row.delta(metric, column)) for row in report.rows
                  if row.method != report.baseline_method}
        if not values:
            continue
        best = pick(values.values())
        winners = [m for m, v in values.items() if v == best]
        out[column] = (winners, len(winners) > 1)
    return out


def _partial_attacks(report: DeltaReport, method):
    reports = [report.baseline] + report.reports
    found = next((r for r in reports if r.method == method), None)
    return set(found.partial) if found is not None else set()


def _markdown_table(report: DeltaReport, metric):
    best = best_cells(report, metric)
    attacks = report.attacks
    title = 'AUROC' if metric == 'auroc' else 'APCER @ BPCER=1%'
    lines = [f"### {title} (delta vs {report.baseline_method})", '',
             '| Method | ' + ' | '.join(a.value for a in attacks) + ' | Avg. delta |',
             '|' + '---|' * (len(attacks) + 2)]
    notes = set()
    base = report.baseline
    partial = _partial_attacks(report, base.method)
    cells = [_fmt(base.per_attack[a].mean(metric)) + ('*' if a in partial else '') for a in attacks]
    lines.append(f"| {base.method} | " + ' | '.join(cells) + f" | {_fmt(base.avg(metric))} |")
    if partial:
        notes.add('partial')
    for row in report.rows:
        if row.method == report.baseline_method:
            continue
        partial = _partial_attacks(report, row.method)
        cells = []
        for column in attacks + [None]:
            text = _fmt(row.delta(metric, column), signed=True)
            winners, tied = best.get(column, ([], False))
            if row.method in winners:
                text = f"**{text}**" + ('†' if tied else '')
                if tied:
                    notes.add('tie')
            if column is not None and column in partial:
                text += '*'
                notes.add('partial')
            cells.append(text)
        lines.append(f"| {row.method} | " + ' | '.join(cells) + ' |')
    lines.append('')
    if 'tie' in notes:
        lines.append('† tied for best in column; all tied values are bold.')
    if 'partial' in notes:
        lines.append('\\* incomplete cell: fewer runs than the protocol expects.')
    lines.append(f"Averages are unweighted over the {len(attacks)} attack types.")
    return '\n'.join(lines)


def report_frame(report: DeltaReport) -> pd.DataFrame:
    """Long table with columns `method, attack_type, metric, mean, delta, n_runs`, the
    average over attack types as `attack_type='average'`.
    """
    records = []
    reports = [report.baseline] + [r for r in report.reports if r.method != report.baseline_method]
    for mreport in reports:
        row = None if mreport.method == report.baseline_method else report.row(mreport.method)
        for metric in METRICS:
            for attack in report.attacks:
                cell = mreport.per_attack[attack]
                delta = 0. if row is None else row.delta(metric, attack)
                records.append(dict(method=mreport.method, attack_type=attack.value, metric=metric,
                                    mean=_round(cell.mean(metric)), delta=_round(delta), n_runs=cell.n_runs))
            delta = 0. if row is None else row.delta(metric)
            records.append(dict(method=mreport.method, attack_type=AVERAGE, metric=metric,
                                mean=_round(mreport.avg(metric)), delta=_round(delta),
                                n_runs=sum(c.n_runs for c in mreport.per_attack.values())))
    return pd.DataFrame(records, columns=CSV_COLUMNS)


def render_report(report: DeltaReport, format='markdown') -> str:
    """Render `report` as 'markdown' (one table per metric) or 'csv'."""
    if format == 'csv':
        buffer = io.StringIO()
        report_frame(report).to_csv(buffer, index=False, float_format=f"%.{DECIMALS}f", lineterminator='\n')
        return buffer.getvalue()
    if format == 'markdown':
        return '\n\n'.join(_markdown_table(report, metric) for metric in METRICS) + '\n'
    raise ValueError(f"Unknown format {format!r}. Use 'markdown' or 'csv'")


def check_fingerprints(results, force=False):
    """Refuse results from different protocols, or runs of one method produced with
    different settings. With `force=True` the mismatch is only logged.
    """
    problems = []
    protocols = {r.protocol_fingerprint for r in results}
    if len(protocols) > 1:
        problems.append(f"results come from {len(protocols)} different protocol fingerprints")
    by_method = {}
    for r in results:
        by_method.setdefault(r.method, set()).add(r.run_fingerprint)
    for method, fps in sorted(by_method.items()):
        if len(fps) > 1:
            problems.append(f"method {method!r} has runs with {len(fps)} different fingerprints")
    if problems and not force:
        raise ProtocolError('; '.join(problems) + '. Use --force to report anyway.')
    for problem in problems:
        logger.warning("fingerprint mismatch", extra=dict(problem=problem))
    return problems


def build_report(results, baseline, methods=None, expected_runs=None, force=False) -> DeltaReport:
    """Aggregate `results` per method and take deltas against `baseline`.

    Keyword Arguments:
        methods {list} -- Methods to include, baseline excluded. If 'None' every method
            found in `results`, sorted by name. (default: {None})
    """
    results = list(results)
    check_fingerprints(results, force)
    found = sorted({r.method for r in results})
    if baseline not in found:
        raise ProtocolError(f"No results for baseline {baseline!r}; found {found}")
    methods = [m for m in (methods or found) if m != baseline]
    missing = [m for m in methods if m not in found]
    if missing:
        raise ProtocolError(f"No results for methods {missing}")
    base = aggregate_runs([r for r in results if r.method == baseline], expected_runs)
    reports = [aggregate_runs([r for r in results if r.method == m], expected_runs) for m in methods]
    return delta_table(base, reports)


def report_from_means(means: Dict[str, Dict[str, Sequence[float]]], baseline, n_runs=1) -> DeltaReport:
    """Report from per-attack mean values, `{method: {'auroc': [...7], 'apcer': [...7]}}`,
    listed in attack-type order.
    """
    def method_report(method, values):
        cells = {a: CellStats(float(au), float(ap), n_runs)
                 for a, au, ap in zip(AttackType.attacks(), values['auroc'], values['apcer'])}
        return MethodReport(method, cells, _mean(c.mean_auroc for c in cells.values()),
                            _mean(c.mean_apcer for c in cells.values()))
    base = method_report(baseline, means[baseline])
    others = [method_report(m, v) for m, v in means.items() if m != baseline]
    return delta_table(base, others)


def diagnostics(report: DeltaReport) -> Dict[str, Optional[dict]]:
    """Per-cell means, run counts and spreads of every method, for persistence."""
    reports = [report.baseline] + report.reports
    return {r.method: dict(cells=r.diagnostics(), avg_auroc=r.avg_auroc, avg_apcer=r.avg_apcer,
                           partial=[a.value for a in r.partial]) for r in reports}
