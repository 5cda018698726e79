"""Domain types shared by every stage: spans, traces, logs, metrics and windows."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

ServiceId = str

NS_PER_S = 1_000_000_000
DEFAULT_WINDOW_NS = 60 * NS_PER_S


class Level(str, enum.Enum):
    INFO = "INFO"
    WARN = "WARN"
    ERROR = "ERROR"


class TraceError(ValueError):
    """Base class for structural trace violations."""

    def __init__(self, trace_id: str, span_ids: Sequence[str], msg: str):
        self.trace_id = trace_id
        self.span_ids = tuple(span_ids)
        super().__init__(f"trace {trace_id}: {msg} (spans: {', '.join(self.span_ids)})")


class CyclicTrace(TraceError):
    pass


class MultipleRoots(TraceError):
    pass


class OrphanSpan(TraceError):
    pass


@dataclass(frozen=True, slots=True)
class SpanRecord:
    span_id: str
    trace_id: str
    parent_span_id: Optional[str]
    service: ServiceId
    operation: str
    start_ns: int
    duration_ms: float

    def __post_init__(self) -> None:
        if self.duration_ms < 0:
            raise ValueError(f"span {self.span_id}: negative duration {self.duration_ms}")
        if not self.service:
            raise ValueError(f"span {self.span_id}: empty service")

    @property
    def element(self) -> tuple[str, str]:
        return (self.service, self.operation)

    def to_dict(self) -> dict:
        return {
            "span_id": self.span_id,
            "trace_id": self.trace_id,
            "parent_span_id": self.parent_span_id,
            "service": self.service,
            "operation": self.operation,
            "start_ns": self.start_ns,
            "duration_ms": self.duration_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpanRecord":
        return cls(
            span_id=d["span_id"],
            trace_id=d["trace_id"],
            parent_span_id=d.get("parent_span_id"),
            service=d["service"],
            operation=d["operation"],
            start_ns=int(d["start_ns"]),
            duration_ms=float(d["duration_ms"]),
        )


@dataclass(frozen=True, slots=True)
class CallPath:
    """Root-to-leaf sequence of (service, operation) pairs."""

    elements: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        if not self.elements:
            raise ValueError("call path must be non-empty")

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    @property
    def services(self) -> frozenset[str]:
        return frozenset(s for s, _ in self.elements)

    def to_list(self) -> list[list[str]]:
        return [[s, o] for s, o in self.elements]

    @classmethod
    def from_list(cls, items: Iterable[Sequence[str]]) -> "CallPath":
        return cls(tuple((str(s), str(o)) for s, o in items))


@dataclass(frozen=True)
class TraceGraph:
    """All spans of one request. Edges are derived from parent links."""

    trace_id: str
    spans: tuple[SpanRecord, ...]

    @classmethod
    def from_spans(cls, spans: Iterable[SpanRecord]) -> "TraceGraph":
        spans = tuple(spans)
        if not spans:
            raise ValueError("a trace needs at least one span")
        trace_id = spans[0].trace_id
        for sp in spans:
            if sp.trace_id != trace_id:
                raise ValueError(f"span {sp.span_id} belongs to {sp.trace_id}, not {trace_id}")
        return cls(trace_id, spans)

    @property
    def edges(self) -> tuple[tuple[str, str], ...]:
        return tuple(
            (sp.parent_span_id, sp.span_id) for sp in self.spans if sp.parent_span_id is not None
        )

    @property
    def roots(self) -> tuple[SpanRecord, ...]:
        return tuple(sp for sp in self.spans if sp.parent_span_id is None)

    @property
    def root(self) -> SpanRecord:
        roots = self.roots
        if len(roots) != 1:
            raise MultipleRoots(self.trace_id, [r.span_id for r in roots], "expected one root")
        return roots[0]

    @property
    def services(self) -> frozenset[str]:
        return frozenset(sp.service for sp in self.spans)

    def children(self) -> dict[str, list[SpanRecord]]:
        out: dict[str, list[SpanRecord]] = {}
        for sp in self.spans:
            if sp.parent_span_id is not None:
                out.setdefault(sp.parent_span_id, []).append(sp)
        return out


def validate_trace(trace: TraceGraph) -> None:
    """Raise a :class:`TraceError` subclass unless ``trace`` is a rooted, acyclic graph."""
    by_id = {sp.span_id: sp for sp in trace.spans}
    orphans = [
        sp.span_id
        for sp in trace.spans
        if sp.parent_span_id is not None and sp.parent_span_id not in by_id
    ]
    if orphans:
        raise OrphanSpan(trace.trace_id, sorted(orphans), "parent not in trace")

    roots = [sp.span_id for sp in trace.spans if sp.parent_span_id is None]
    if len(roots) > 1:
        raise MultipleRoots(trace.trace_id, sorted(roots), "more than one root span")

    # every span must reach the root by following parents; anything else sits on a cycle
    state: dict[str, int] = {r: 1 for r in roots}  # 1 = reaches root
    for start in by_id:
        path = []
        node = start
        while node not in state:
            state[node] = 0  # in progress
            path.append(node)
            node = by_id[node].parent_span_id  # type: ignore[assignment]
        if state[node] == 0:
            raise CyclicTrace(trace.trace_id, sorted(path), "parent links form a cycle")
        for p in path:
            state[p] = 1
    if not roots:
        raise CyclicTrace(trace.trace_id, sorted(by_id), "no root span")


@dataclass(frozen=True, slots=True)
class LogRecord:
    log_id: str
    timestamp_ns: int
    service: ServiceId
    level: Level
    message: str
    trace_id: Optional[str] = None
    template_id: Optional[int] = None

    def __post_init__(self) -> None:
        if not isinstance(self.level, Level):
            object.__setattr__(self, "level", Level(self.level))

    def to_dict(self) -> dict:
        d = {
            "log_id": self.log_id,
            "timestamp_ns": self.timestamp_ns,
            "service": self.service,
            "level": self.level.value,
            "message": self.message,
            "trace_id": self.trace_id,
        }
        if self.template_id is not None:
            d["template_id"] = self.template_id
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LogRecord":
        return cls(
            log_id=d["log_id"],
            timestamp_ns=int(d["timestamp_ns"]),
            service=d["service"],
            level=Level(d["level"]),
            message=d["message"],
            trace_id=d.get("trace_id"),
            template_id=d.get("template_id"),
        )


@dataclass(frozen=True, slots=True)
class LogTemplate:
    template_id: int
    service: ServiceId
    tokens: tuple[str, ...]

    @property
    def pattern(self) -> str:
        return render_tokens(self.tokens)

    def to_dict(self) -> dict:
        return {"template_id": self.template_id, "service": self.service, "pattern": self.pattern,
                "tokens": list(self.tokens)}

    @classmethod
    def from_dict(cls, d: dict) -> "LogTemplate":
        return cls(int(d["template_id"]), d["service"], tuple(d["tokens"]))


def render_tokens(tokens: Sequence[str]) -> str:
    # tokens ending in "=" glue to the following value
    out = []
    for i, tok in enumerate(tokens):
        out.append(tok)
        if i + 1 < len(tokens) and not tok.endswith("="):
            out.append(" ")
    return "".join(out)


@dataclass(frozen=True, slots=True)
class Window:
    start_ns: int
    length_ns: int = DEFAULT_WINDOW_NS

    def __post_init__(self) -> None:
        if self.length_ns <= 0:
            raise ValueError("window length must be positive")

    @property
    def end_ns(self) -> int:
        return self.start_ns + self.length_ns

    def contains(self, ts_ns: int) -> bool:
        return self.start_ns <= ts_ns < self.end_ns

    @classmethod
    def of(cls, ts_ns: int, length_ns: int = DEFAULT_WINDOW_NS) -> "Window":
        return cls((ts_ns // length_ns) * length_ns, length_ns)


@dataclass(frozen=True, slots=True)
class MetricReading:
    """One raw sample of every metric dimension of a service."""

    service: ServiceId
    timestamp_ns: int
    values: tuple[float, ...]

    def to_dict(self, metric_names: Sequence[str]) -> dict:
        return {"service": self.service, "timestamp_ns": self.timestamp_ns,
                "metric_names": list(metric_names), "values": list(self.values)}


@dataclass(frozen=True, slots=True)
class MetricVector:
    service: ServiceId
    window: Window
    values: tuple[float, ...]
    count: int = 0

    def to_dict(self, metric_names: Sequence[str]) -> dict:
        return {"service": self.service, "window_start_ns": self.window.start_ns,
                "window_length_ns": self.window.length_ns,
                "metric_names": list(metric_names), "values": list(self.values),
                "count": self.count}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricVector":
        return cls(d["service"], Window(int(d["window_start_ns"]),
                                        int(d.get("window_length_ns", DEFAULT_WINDOW_NS))),
                   tuple(float(v) for v in d["values"]), int(d.get("count", 0)))


@dataclass
class Telemetry:
    """Raw telemetry of one phase. ``metric_names`` is the schema of every reading."""

    spans: list[SpanRecord] = field(default_factory=list)
    logs: list[LogRecord] = field(default_factory=list)
    readings: list[MetricReading] = field(default_factory=list)
    metric_names: tuple[str, ...] = ()

    @property
    def services(self) -> frozenset[str]:
        return frozenset(
            [s.service for s in self.spans]
            + [l.service for l in self.logs]
            + [r.service for r in self.readings]
        )

    def is_empty(self) -> bool:
        return not (self.spans or self.logs or self.readings)


def group_traces(spans: Iterable[SpanRecord]) -> dict[str, TraceGraph]:
    """Group spans by trace id, preserving first-seen order."""
    buckets: dict[str, list[SpanRecord]] = {}
    for sp in spans:
        buckets.setdefault(sp.trace_id, []).append(sp)
    return {tid: TraceGraph(tid, tuple(sps)) for tid, sps in buckets.items()}
