"""CSV files and aligned plain-text tables for evaluation reports"""

import csv
import logging
from pathlib import Path
from typing import Dict, List, Sequence

from models import EvalReport, SweepSpec

logger = logging.getLogger(__name__)

AVG_ROW = "AVG"


def _percent(value: float) -> str:
    return f"{100.0 * value:.2f}"


def write_report_csv(reports: Sequence[EvalReport], path: str) -> Path:
    """Rows of (arm, domain, accuracy), one AVG row per report"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["arm", "domain", "accuracy"])
        for report in reports:
            for domain, accuracy in report.per_domain.items():
                writer.writerow([report.arm, domain, repr(accuracy)])
            writer.writerow([report.arm, AVG_ROW, repr(report.average)])
    logger.info(f"Wrote report CSV to {path}")
    return path


def write_sweep_csv(spec: SweepSpec, reports: Sequence[EvalReport], path: str) -> Path:
    """One row per swept value: parameter, value, per-domain accuracies, average"""
    if len(reports) != len(spec.values):
        raise ValueError(f"{len(reports)} reports for {len(spec.values)} sweep values")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    domains = list(reports[0].per_domain) if reports else []
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["parameter", "value", *domains, "average"])
        for value, report in zip(spec.values, reports):
            writer.writerow([spec.parameter.value, repr(value), *(repr(report.per_domain[d]) for d in domains), repr(report.average)])
    logger.info(f"Wrote sweep CSV with {len(reports)} rows to {path}")
    return path


def format_table(reports: Dict[str, EvalReport]) -> str:
    """
    Domains as rows, one accuracy column (percent) per named report and a
    closing AVG row.

    Example:
        domain      dacl  dacl-no-d
        -----------------------------
        books      86.50      85.25
        AVG        86.50      85.25
    """
    columns = list(reports)
    domains: List[str] = []
    for report in reports.values():
        domains.extend(d for d in report.per_domain if d not in domains)

    name_width = max([len("domain"), len(AVG_ROW)] + [len(d) for d in domains])
    widths = [max(len(c), 6) for c in columns]
    header = f"{'domain':<{name_width}}  " + "  ".join(f"{c:>{w}}" for c, w in zip(columns, widths))
    lines = [header, "-" * len(header)]
    for domain in domains:
        cells = []
        for column, width in zip(columns, widths):
            accuracy = reports[column].per_domain.get(domain)
            cells.append(f"{_percent(accuracy) if accuracy is not None else '-':>{width}}")
        lines.append(f"{domain:<{name_width}}  " + "  ".join(cells))
    lines.append(f"{AVG_ROW:<{name_width}}  " + "  ".join(f"{_percent(reports[c].average):>{w}}" for c, w in zip(columns, widths)))
    return "\n".join(lines)


def write_table(reports: Dict[str, EvalReport], path: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_table(reports) + "\n", encoding="utf-8")
    return path


def write_report_json(report: EvalReport, path: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path
