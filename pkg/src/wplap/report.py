"""Named check verdicts and their plain-text / CSV serialisation."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class CheckResult:
    """One verdict: ``value`` is the quantity tested against ``bound``."""

    name: str
    passed: bool
    value: float = float("nan")
    bound: float = float("nan")
    slack: float = 0.0
    note: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        extra = f"  # {self.note}" if self.note else ""
        return (f"{self.name}: {status} value={self.value:.10g} bound={self.bound:.10g} "
                f"slack={self.slack:.3g}{extra}")


@dataclass
class AnalysisReport:
    title: str
    checks: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def add(self, *checks):
        for c in checks:
            if isinstance(c, CheckResult):
                self.checks.append(c)
            else:
                self.checks.extend(c)
        return self

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def verdicts(self):
        out = {}
        for c in self.checks:
            out[c.name] = out.get(c.name, True) and c.passed
        return out

    def to_text(self):
        lines = [f"# {self.title}", "[info]"]
        lines += [f"{k} = {v}" for k, v in self.info.items()]
        lines.append("[checks]")
        lines += [c.line() for c in self.checks]
        lines.append(f"[summary]\npassed = {str(self.passed).lower()}\n"
                     f"n_checks = {len(self.checks)}\n"
                     f"n_failed = {sum(not c.passed for c in self.checks)}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        Path(path).write_text(self.to_text())


def fmt(x):
    """Round-trippable float formatting used in every CSV."""
    return f"{float(x):.17g}"


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(x) if isinstance(x, float) else x for x in row])


def write_series(path, x, y, xname="x", yname="y"):
    """Two-column plot-data file."""
    write_csv(path, [xname, yname], [(float(a), float(b)) for a, b in zip(x, y)])
