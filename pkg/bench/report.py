"""
Bench reports and their three renderings.

    markdown   | Mode | FPS | Latency (ms) | ...
    csv        scenario,<metric keys>
    json       sorted keys, fixed float precision (same seed, same bytes)
"""
import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from errors import UsageError

__all__ = ["BenchReport", "emit_report", "parse_report", "write_report", "REPORT_FORMATS"]

REPORT_FORMATS = ("markdown", "csv", "json")
_SUFFIXES = {".md": "markdown", ".markdown": "markdown", ".csv": "csv", ".json": "json"}
_PRECISION = 6


def _clean(value: Any) -> Any:
    if isinstance(value, float):
        return round(value, _PRECISION)
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


@dataclass
class BenchReport:
    """
    Usage:
        report = BenchReport("video", "Mode", [("fps_received", "FPS")])
        report.add("streaming", fps_received=29.7)
        print(emit_report(report, "markdown"))
    """

    suite: str
    scenario_label: str = "Scenario"
    columns: list[tuple[str, str]] = field(default_factory=list)
    rows: list[tuple[str, dict]] = field(default_factory=list)
    environment: dict = field(default_factory=dict)

    def add(self, scenario: str, **metrics) -> None:
        known = {key for key, _ in self.columns}
        for key in metrics:
            if key not in known:
                self.columns.append((key, key))
                known.add(key)
        self.rows.append((scenario, _clean(metrics)))

    def row(self, scenario: str) -> dict:
        for name, metrics in self.rows:
            if name == scenario:
                return metrics
        raise KeyError(scenario)

    @property
    def keys(self) -> list[str]:
        return [key for key, _ in self.columns]

    def to_dict(self) -> dict:
        return {"suite": self.suite, "scenario_label": self.scenario_label,
                "columns": [list(c) for c in self.columns],
                "rows": [{"scenario": name, "metrics": metrics} for name, metrics in self.rows],
                "environment": _clean(self.environment)}

    @classmethod
    def from_dict(cls, doc: dict) -> "BenchReport":
        return cls(doc["suite"], doc.get("scenario_label", "Scenario"),
                   [tuple(c) for c in doc.get("columns", [])],
                   [(r["scenario"], dict(r["metrics"])) for r in doc.get("rows", [])],
                   dict(doc.get("environment", {})))


def _cell(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


def _markdown(report: BenchReport) -> str:
    header = [report.scenario_label] + [label for _, label in report.columns]
    lines = [f"## {report.suite}", "",
             "| " + " | ".join(header) + " |",
             "|" + "|".join("---" for _ in header) + "|"]
    for name, metrics in report.rows:
        cells = [name] + [_cell(metrics.get(key)) for key in report.keys]
        lines.append("| " + " | ".join(cells) + " |")
    if report.environment:
        lines += ["", ", ".join(f"{k}={v}" for k, v in sorted(report.environment.items()))]
    return "\n".join(lines) + "\n"


def _csv(report: BenchReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["scenario"] + report.keys)
    for name, metrics in report.rows:
        writer.writerow([name] + ["" if metrics.get(k) is None else metrics[k] for k in report.keys])
    return out.getvalue()


def emit_report(report: BenchReport, fmt: str = "markdown") -> str:
    if fmt == "markdown":
        return _markdown(report)
    if fmt == "csv":
        return _csv(report)
    if fmt == "json":
        return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    raise UsageError(f"unknown report format {fmt!r} (known: {', '.join(REPORT_FORMATS)})")


def _number(text: str) -> Any:
    if text == "":
        return None
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def parse_report(text: str, fmt: str, suite: str = "") -> BenchReport:
    """Read back a csv or json document. Markdown is for people and is not parsed."""
    if fmt == "json":
        return BenchReport.from_dict(json.loads(text))
    if fmt != "csv":
        raise UsageError(f"cannot parse {fmt!r} reports")
    reader = csv.reader(io.StringIO(text))
    header = next(reader, ["scenario"])
    keys = header[1:]
    report = BenchReport(suite, columns=[(k, k) for k in keys])
    for record in reader:
        metrics = {k: v for k, v in zip(keys, map(_number, record[1:])) if v is not None}
        report.rows.append((record[0], metrics))
    return report


def write_report(report: BenchReport, path: Union[str, Path], fmt: Optional[str] = None) -> str:
    """Write to `path`; the format follows the suffix unless given. Returns the format used."""
    path = Path(path)
    fmt = fmt or _SUFFIXES.get(path.suffix.lower(), "markdown")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(emit_report(report, fmt))
    return fmt
