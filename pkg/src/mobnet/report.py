"""Experiment reports and CSV emission.

A report carries the config echo, per-replication summaries, aggregates
recomputable from those summaries, and verdict rows that always pair an
estimate with its SE, threshold and sample count.  CSV writing uses repr
formatting so identical reports serialize to identical bytes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class VerdictRow:
    experiment: str
    metric: str
    estimate: float
    se: float
    threshold: float
    n_samples: int
    passed: bool


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    seed: int
    replication_tables: dict = field(default_factory=dict)  # name -> (header, rows)
    aggregates: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)
    assertion_counts: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def add_verdict(self, metric, estimate, se, threshold, n_samples, passed):
        self.verdicts.append(
            VerdictRow(
                experiment=self.experiment,
                metric=metric,
                estimate=float(estimate),
                se=float(se),
                threshold=float(threshold),
                n_samples=int(n_samples),
                passed=bool(passed),
            )
        )


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def verdict_csv(report: ExperimentReport) -> str:
    header = ["experiment", "metric", "estimate", "se", "threshold", "n_samples", "verdict"]
    rows = [
        (v.experiment, v.metric, v.estimate, v.se, v.threshold, v.n_samples,
         "pass" if v.passed else "fail")
        for v in report.verdicts
    ]
    return render_csv(header, rows)


def aggregate_csv(report: ExperimentReport) -> str:
    header = ["key", "value"]
    rows = [(k, report.aggregates[k]) for k in sorted(report.aggregates)]
    rows += [(f"assertions.{k}", report.assertion_counts[k])
             for k in sorted(report.assertion_counts)]
    rows += [("seed", report.seed)]
    return render_csv(header, rows)


def write_report(report: ExperimentReport, out_dir) -> list[str]:
    """Write verdicts, aggregates and every replication table as CSV files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name: str, text: str):
        path = out / f"{report.experiment}_{name}.csv"
        path.write_text(text)
        written.append(str(path))

    emit("verdicts", verdict_csv(report))
    emit("aggregates", aggregate_csv(report))
    for name, (header, rows) in report.replication_tables.items():
        emit(name, render_csv(header, rows))
    return written


def report_fingerprint(report: ExperimentReport) -> str:
    """Concatenated CSV rendering; equal fingerprints mean equal reports."""
    parts = [verdict_csv(report), aggregate_csv(report)]
    for name in sorted(report.replication_tables):
        header, rows = report.replication_tables[name]
        parts.append(name + "\n" + render_csv(header, rows))
    return "\n".join(parts)
