
from viser.reporting.report import aggregate_runs, build_report, delta_table, render_report
