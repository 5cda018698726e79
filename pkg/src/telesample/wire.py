"""JSON Lines readers and writers for the on-disk telemetry formats."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator

from .model import (
    LogRecord,
    MetricReading,
    MetricVector,
    SpanRecord,
    Telemetry,
)

SPANS_FILE = "spans.jsonl"
LOGS_FILE = "logs.jsonl"
METRICS_FILE = "metrics.jsonl"


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class SchemaMismatch(DataError):
    pass


def dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def write_jsonl(path: Path | str, rows: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(dumps(row))
            fh.write("\n")
            n += 1
    return n


def iter_jsonl(path: Path | str) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None


def read_spans(path: Path | str) -> list[SpanRecord]:
    try:
        return [SpanRecord.from_dict(d) for d in iter_jsonl(path)]
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: bad span record: {exc}") from None


def read_logs(path: Path | str) -> list[LogRecord]:
    try:
        return [LogRecord.from_dict(d) for d in iter_jsonl(path)]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad log record: {exc}") from None


def read_metrics(path: Path | str) -> tuple[tuple[str, ...], list[MetricReading], list[MetricVector]]:
    """Read raw readings (``timestamp_ns``) and/or window vectors (``window_start_ns``).

    Every line must carry the same ``metric_names`` list.
    """
    names: tuple[str, ...] | None = None
    readings: list[MetricReading] = []
    vectors: list[MetricVector] = []
    for d in iter_jsonl(path):
        row_names = tuple(d["metric_names"])
        if names is None:
            names = row_names
        elif row_names != names:
            raise SchemaMismatch(f"{path}: metric_names {row_names} differ from {names}")
        if len(d["values"]) != len(names):
            raise SchemaMismatch(f"{path}: {len(d['values'])} values for {len(names)} metrics")
        if "timestamp_ns" in d:
            readings.append(MetricReading(d["service"], int(d["timestamp_ns"]),
                                          tuple(float(v) for v in d["values"])))
        else:
            vectors.append(MetricVector.from_dict(d))
    return names or (), readings, vectors


def save_telemetry(directory: Path | str, tel: Telemetry) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_jsonl(d / SPANS_FILE, (s.to_dict() for s in tel.spans))
    write_jsonl(d / LOGS_FILE, (l.to_dict() for l in tel.logs))
    write_jsonl(d / METRICS_FILE, (r.to_dict(tel.metric_names) for r in tel.readings))


def load_telemetry(directory: Path | str) -> Telemetry:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"telemetry directory not found: {d}")
    tel = Telemetry()
    if (d / SPANS_FILE).exists():
        tel.spans = read_spans(d / SPANS_FILE)
    if (d / LOGS_FILE).exists():
        tel.logs = read_logs(d / LOGS_FILE)
    if (d / METRICS_FILE).exists():
        names, readings, vectors = read_metrics(d / METRICS_FILE)
        if vectors:
            # pre-aggregated input: treat each vector as one reading at its window start
            readings = readings + [MetricReading(v.service, v.window.start_ns, v.values)
                                   for v in vectors]
        tel.metric_names = names
        tel.readings = readings
    return tel
