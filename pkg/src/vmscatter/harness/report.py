"""Run reports: per-check records, text and CSV emission, CSV round trip."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

PASS, FAIL, SKIP = "pass", "fail", "skip"
CSV_COLUMNS = ("name", "tag", "status", "constant", "stability_ratio", "detail")


@dataclass
class CheckRecord:
    name: str
    tag: str
    status: str
    constant: Optional[float] = None
    stability_ratio: Optional[float] = None
    detail: str = ""

    @property
    def passed(self):
        return self.status == PASS


@dataclass
class RunReport:
    scenario: str
    checks: List[CheckRecord] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    wall_clock: dict = field(default_factory=dict)

    def add(self, rec: CheckRecord):
        if any(c.name == rec.name for c in self.checks):
            raise ValueError(f"check {rec.name} recorded twice")
        self.checks.append(rec)

    @property
    def failures(self):
        return [c for c in self.checks if c.status == FAIL]

    @property
    def passed(self):
        return not self.failures

    def ordered(self):
        """Failures first, then passes, then skips; stable within each group."""
        rank = {FAIL: 0, PASS: 1, SKIP: 2}
        return sorted(self.checks, key=lambda c: rank.get(c.status, 3))


def _num(x):
    return "" if x is None else repr(float(x))


def _parse(text):
    return None if text == "" else float(text)


def report_csv(report: RunReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for c in report.ordered():
        w.writerow([c.name, c.tag, c.status, _num(c.constant), _num(c.stability_ratio), c.detail])
    return buf.getvalue()


def report_text(report: RunReport) -> str:
    out = [f"scenario: {report.scenario}"]
    for k in sorted(report.provenance):
        out.append(f"{k}: {report.provenance[k]}")
    out.append(f"result: {'PASS' if report.passed else 'FAIL'} "
               f"({len(report.failures)} failing of {len(report.checks)})")
    out.append("")
    for c in report.ordered():
        nums = ""
        if c.constant is not None:
            nums += f" C={c.constant:.4g}"
        if c.stability_ratio is not None:
            nums += f" ratio={c.stability_ratio:.4g}"
        out.append(f"[{c.status.upper():4s}] {c.name} ({c.tag}){nums} {c.detail}".rstrip())
    if report.wall_clock:
        out.append("")
        out.append("wall clock per stage (s):")
        for k, v in report.wall_clock.items():
            out.append(f"  {k}: {v:.2f}")
    return "\n".join(out) + "\n"


def emit_report(report: RunReport, fmt: str, path) -> Path:
    """Write the report as ``text`` or ``csv``; returns the written path."""
    path = Path(path)
    if fmt == "csv":
        text = report_csv(report)
    elif fmt == "text":
        text = report_text(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    path.write_text(text)
    return path


def read_report_csv(path, scenario="") -> RunReport:
    rep = RunReport(scenario)
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        if tuple(next(r)) != CSV_COLUMNS:
            raise ValueError("unexpected report columns")
        for row in r:
            rep.add(CheckRecord(row[0], row[1], row[2], _parse(row[3]), _parse(row[4]), row[5]))
    return rep
