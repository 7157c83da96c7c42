"""Per-(d, method) summaries of a results CSV."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

from zeroimp.harness.experiment import COLUMNS


class MalformedResults(ValueError):
    """Raised with every offending line number when a results file does not parse."""

    def __init__(self, problems: list[tuple[int, str]]):
        self.problems = problems
        listing = "; ".join(f"line {ln}: {msg}" for ln, msg in problems[:20])
        more = f" (+{len(problems) - 20} more)" if len(problems) > 20 else ""
        super().__init__(f"malformed results: {listing}{more}")


@dataclass
class SummaryRow:
    model: str
    mask: str
    d: int
    method: str
    count: int
    n_errors: int
    mean: float
    se: float
    ci_low: float
    ci_high: float
    se_defined: bool


SUMMARY_COLUMNS = ("model", "mask", "d", "method", "count", "n_errors", "mean", "se", "ci_low", "ci_high", "se_defined")


def _parse(path: str | Path) -> list[dict]:
    problems: list[tuple[int, str]] = []
    records = []
    header = None
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.startswith("#") or not line.strip():
                continue
            fields = next(csv.reader([line]))
            if header is None:
                if tuple(fields) != COLUMNS:
                    problems.append((lineno, f"header {fields} does not match {list(COLUMNS)}"))
                    break
                header = fields
                continue
            if len(fields) != len(header):
                problems.append((lineno, f"expected {len(header)} fields, got {len(fields)}"))
                continue
            rec = dict(zip(header, fields))
            try:
                rec["d"] = int(rec["d"])
                rec["excess_risk"] = float(rec["excess_risk"])
                rec["se"] = float(rec["se"])
                int(rec["repetition"])
            except ValueError as exc:
                problems.append((lineno, str(exc)))
                continue
            if not rec["error"]:
                if not math.isfinite(rec["excess_risk"]):
                    problems.append((lineno, "non-finite excess risk without an error tag"))
                    continue
                if rec["se"] < 0:
                    problems.append((lineno, "negative standard error"))
                    continue
            records.append(rec)
    if header is None and not problems:
        problems.append((0, "no header line"))
    if problems:
        raise MalformedResults(problems)
    return records


def summarize_values(values: np.ndarray, confidence: float = 0.95) -> tuple[float, float, float, float, bool]:
    """Mean, SE and normal-approximation CI; SE is undefined (NaN) below two values."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        nan = float("nan")
        return nan, nan, nan, nan, False
    mean = float(values.mean())
    if values.size < 2:
        return mean, float("nan"), mean, mean, False
    se = float(values.std(ddof=1) / math.sqrt(values.size))
    z = float(norm.ppf(0.5 + confidence / 2))
    return mean, se, mean - z * se, mean + z * se, True


def summarize(path: str | Path, confidence: float = 0.95) -> list[SummaryRow]:
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    records = _parse(path)
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        groups.setdefault((rec["model"], rec["mask"], rec["d"], rec["method"]), []).append(rec)
    out = []
    for (model, mask, d, method), recs in groups.items():
        vals = np.array([r["excess_risk"] for r in recs if not r["error"]])
        mean, se, lo, hi, ok = summarize_values(vals, confidence)
        out.append(SummaryRow(model, mask, d, method, int(vals.size), len(recs) - int(vals.size), mean, se, lo, hi, ok))
    return out


def summary_csv_text(rows: list[SummaryRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for r in rows:
        writer.writerow([getattr(r, c) for c in SUMMARY_COLUMNS])
    return buf.getvalue()
