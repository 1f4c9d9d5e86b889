"""Console tables and CSV artifacts"""
import csv
import math
import os
import numpy as np
from typing import Dict, List, Optional, Sequence

from config import FLOAT_FORMAT, METRIC_COLUMNS, METRIC_NAMES


def format_value(value) -> str:
    if value is None:
        return "undefined"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, np.floating):
        value = float(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return FLOAT_FORMAT.format(value)
    return str(value)


def write_csv(path: str, columns: Sequence[str], rows: List[Dict]) -> str:
    """Header row plus one line per row; missing cells are left empty"""
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row[c]) if c in row else "" for c in columns])
    return path


def read_csv(path: str) -> List[Dict[str, str]]:
    with open(path, "r", newline="") as f:
        return list(csv.DictReader(f))


def parse_cell(text: str) -> Optional[float]:
    if text in ("", "undefined"):
        return None
    try:
        return float(text)
    except ValueError:
        return None


def metric_rows(reports: Dict[str, "MetricReport"]) -> List[Dict]:
    """One row per (model, class) plus a foreground-mean row per model"""
    rows = []
    for model, report in reports.items():
        for k, values in report.per_class().items():
            rows.append({"model": model, "class": k, **values})
        rows.append({"model": model, "class": "mean", **report.foreground_mean()})
    return rows


def write_metrics(path: str, reports: Dict[str, "MetricReport"]) -> str:
    return write_csv(path, METRIC_COLUMNS, metric_rows(reports))


def print_table(title: str, columns: Sequence[str], rows: List[Dict], quiet: bool = False):
    if quiet:
        return
    cells = [[format_value(row.get(c, "")) for c in columns] for row in rows]
    widths = [max([len(c)] + [len(r[i]) for r in cells]) for i, c in enumerate(columns)]

    print()
    print(title)
    print("-" * (sum(widths) + 2 * (len(widths) - 1)))
    print("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
    for r in cells:
        print("  ".join(v.ljust(w) for v, w in zip(r, widths)))


def print_headlines(reports: Dict[str, "MetricReport"], quiet: bool = False):
    rows = [{"model": model, **report.foreground_mean()} for model, report in reports.items()]
    print_table("Foreground mean over classes 1..K-1", ["model"] + METRIC_NAMES, rows, quiet)
