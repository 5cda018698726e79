"""Deterministic synthetic microservice telemetry with injected faults.

Requests arrive as a Poisson process whose rate follows a slow sinusoidal load
cycle. Each request instantiates one call template; every span draws a
lognormal self-time (children are not included in the parent's duration) and
emits INFO/WARN logs carrying the trace id. Services also report 16 metric
readings every few seconds, derived from their observed load, latency and
error counts plus independent noise.
"""

from __future__ import annotations

import enum
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np
import yaml

from .model import (
    NS_PER_S,
    CallPath,
    Level,
    LogRecord,
    MetricReading,
    SpanRecord,
    Telemetry,
)
from .wire import dumps, save_telemetry

# fault-free phase starts on a minute boundary so windows align with phases
EPOCH_NS = 1_700_000_040 * NS_PER_S

METRIC_NAMES = (
    "cpu_usage", "cpu_throttle", "cpu_load", "mem_usage",
    "mem_rss", "net_rx", "net_tx", "disk_read",
    "disk_write", "request_rate", "error_rate", "latency_s",
    "thread_count", "gc_pause", "conn_pool_used", "open_fds",
)

TRUNCATE_PROB = 0.5
CASCADE_PROB = 0.5
# per-reading standard deviation of the independent metric noise
NOISE = 0.5


class ConfigError(ValueError):
    """Invalid scenario or run configuration; names the offending field."""

    def __init__(self, field_name: str, msg: str):
        self.field = field_name
        super().__init__(f"{field_name}: {msg}")


class UnknownService(ConfigError):
    pass


class EmptyTopology(ConfigError):
    pass


class FaultKind(str, enum.Enum):
    LATENCY = "LatencyInjection"
    ERROR = "ErrorReturn"
    CPU = "CpuSurge"


@dataclass(frozen=True)
class Operation:
    service: str
    name: str
    latency_ms: float
    latency_sigma: float = 0.15
    info_rate: float = 0.6
    warn_rate: float = 0.02
    error_rate: float = 0.0


@dataclass(frozen=True)
class CallNode:
    service: str
    operation: str
    children: tuple["CallNode", ...] = ()

    def walk(self) -> Iterable["CallNode"]:
        yield self
        for c in self.children:
            yield from c.walk()

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.children), default=0)


@dataclass(frozen=True)
class CallTemplate:
    name: str
    weight: float
    root: CallNode


@dataclass(frozen=True)
class Topology:
    services: tuple[str, ...]
    operations: tuple[Operation, ...]
    templates: tuple[CallTemplate, ...]
    metric_names: tuple[str, ...] = METRIC_NAMES

    def __post_init__(self) -> None:
        if not self.services or not self.templates:
            raise EmptyTopology("topology", "needs at least one service and one call template")
        declared = set(self.services)
        ops = set()
        for op in self.operations:
            if op.service not in declared:
                raise UnknownService("operations", f"operation {op.name!r} on undeclared service {op.service!r}")
            if op.latency_ms <= 0:
                raise ConfigError("operations", f"{op.service}/{op.name}: latency must be > 0")
            ops.add((op.service, op.name))
        for tpl in self.templates:
            if tpl.weight <= 0:
                raise ConfigError("templates", f"{tpl.name}: weight must be > 0")
            for node in tpl.root.walk():
                if node.service not in declared:
                    raise UnknownService("templates", f"{tpl.name} calls undeclared service {node.service!r}")
                if (node.service, node.operation) not in ops:
                    raise ConfigError("templates", f"{tpl.name}: unknown operation {node.service}/{node.operation}")

    def operation(self, service: str, name: str) -> Operation:
        for op in self.operations:
            if op.service == service and op.name == name:
                return op
        raise KeyError((service, name))

    def service_share(self) -> dict[str, float]:
        """Expected spans per request for each service."""
        total = sum(t.weight for t in self.templates)
        share = {s: 0.0 for s in self.services}
        for t in self.templates:
            for node in t.root.walk():
                share[node.service] += t.weight / total
        return share


@dataclass(frozen=True)
class FaultSpec:
    kind: FaultKind
    target: str
    start_s: float
    end_s: float
    magnitude: float

    def __post_init__(self) -> None:
        if not isinstance(self.kind, FaultKind):
            try:
                object.__setattr__(self, "kind", FaultKind(self.kind))
            except ValueError:
                raise ConfigError("faults.kind", f"unknown fault kind {self.kind!r} "
                                  f"(expected one of {[k.value for k in FaultKind]})") from None
        if self.end_s <= self.start_s:
            raise ConfigError("faults.end_s", "fault window must have positive length")
        if self.kind is FaultKind.ERROR:
            if not 0 < self.magnitude <= 1:
                raise ConfigError("faults.magnitude", "ErrorReturn rate must be in (0, 1]")
        elif self.magnitude <= 1:
            raise ConfigError("faults.magnitude", f"{self.kind.value} multiplier must be > 1")


@dataclass(frozen=True)
class FaultCase:
    kind: FaultKind
    root_cause: str
    start_ns: int
    end_ns: int


@dataclass
class GroundTruth:
    cases: list[FaultCase] = field(default_factory=list)
    labeled_traces: set[str] = field(default_factory=set)
    labeled_logs: set[str] = field(default_factory=set)
    novel_traces: set[str] = field(default_factory=set)

    def to_dict(self) -> dict:
        return {
            "cases": [{"kind": c.kind.value, "root_cause": c.root_cause,
                       "start_ns": c.start_ns, "end_ns": c.end_ns} for c in self.cases],
            "labeled_traces": sorted(self.labeled_traces),
            "labeled_logs": sorted(self.labeled_logs),
            "novel_traces": sorted(self.novel_traces),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(
            cases=[FaultCase(FaultKind(c["kind"]), c["root_cause"], int(c["start_ns"]), int(c["end_ns"]))
                   for c in d.get("cases", [])],
            labeled_traces=set(d.get("labeled_traces", [])),
            labeled_logs=set(d.get("labeled_logs", [])),
            novel_traces=set(d.get("novel_traces", [])),
        )

    def save(self, path: Path | str) -> None:
        Path(path).write_text(dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> "GroundTruth":
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"ground truth not found: {p}")
        return cls.from_dict(json.loads(p.read_text()))


def _n(service: str, op: str, *children: CallNode) -> CallNode:
    return CallNode(service, op, tuple(children))


def default_topology() -> Topology:
    """Ten services, five call templates of depth 3-5, 16 metrics per service."""
    services = ("frontend", "auth", "catalog", "inventory", "cart",
                "checkout", "payment", "shipping", "notification", "db")
    ops = (
        Operation("frontend", "GET /home", 8.0, info_rate=1.0),
        Operation("frontend", "GET /product", 10.0, info_rate=1.0),
        Operation("frontend", "POST /cart", 12.0, info_rate=1.0),
        Operation("frontend", "POST /checkout", 15.0, info_rate=1.0),
        Operation("frontend", "GET /orders", 9.0, info_rate=1.0),
        Operation("auth", "verify_token", 3.0, info_rate=0.3),
        Operation("catalog", "list_products", 15.0),
        Operation("catalog", "get_product", 8.0, error_rate=0.0005),
        Operation("inventory", "check_stock", 6.0),
        Operation("cart", "add_item", 7.0),
        Operation("cart", "get_cart", 5.0),
        Operation("checkout", "place_order", 20.0),
        Operation("payment", "charge", 35.0),
        Operation("shipping", "quote", 12.0),
        Operation("notification", "send_email", 25.0),
        Operation("db", "query", 4.0, info_rate=0.3, error_rate=0.0005),
    )
    db = lambda: _n("db", "query")  # noqa: E731
    templates = (
        CallTemplate("home", 0.30, _n("frontend", "GET /home", _n("catalog", "list_products", db()))),
        CallTemplate("product", 0.45, _n("frontend", "GET /product", _n("auth", "verify_token"),
                                         _n("catalog", "get_product", _n("inventory", "check_stock", db()), db()))),
        CallTemplate("add_to_cart", 0.17, _n("frontend", "POST /cart", _n("auth", "verify_token"),
                                             _n("cart", "add_item", _n("inventory", "check_stock", db()), db()))),
        CallTemplate("checkout", 0.03, _n("frontend", "POST /checkout", _n("auth", "verify_token"),
                                          _n("checkout", "place_order",
                                             _n("payment", "charge", db()),
                                             _n("shipping", "quote", _n("inventory", "check_stock", db())),
                                             _n("notification", "send_email")))),
        CallTemplate("orders", 0.05, _n("frontend", "GET /orders", _n("cart", "get_cart", db()))),
    )
    return Topology(services, ops, templates)


# ---------------------------------------------------------------------------
# generation


class _Rng:
    """Scalar draws from ``random.Random`` (fast, stable across platforms)."""

    def __init__(self, seed: int):
        self.r = random.Random(seed)

    def hex(self, bits: int) -> str:
        return format(self.r.getrandbits(bits), f"0{bits // 4}x")

    def poisson(self, lam: float) -> int:
        if lam <= 0:
            return 0
        # Knuth; rates here are small
        limit = math.exp(-lam)
        k, p = 0, self.r.random()
        while p > limit:
            k += 1
            p *= self.r.random()
        return k


@dataclass
class _Fault:
    spec: FaultSpec
    start_ns: int
    end_ns: int

    def active(self, ts: int) -> bool:
        return self.start_ns <= ts < self.end_ns


class _PhaseBuilder:
    def __init__(self, topo: Topology, rng: _Rng, faults: Sequence[_Fault], log_scale: float):
        self.topo = topo
        self.rng = rng
        self.faults = faults
        self.log_scale = log_scale
        self.ops = {(o.service, o.name): o for o in topo.operations}
        self.spans: list[SpanRecord] = []
        self.logs: list[LogRecord] = []
        # per service: (start_ns, duration_ms, failed)
        self.activity: dict[str, list[tuple[int, float, bool]]] = {s: [] for s in topo.services}
        self.trace_arrival: dict[str, int] = {}
        self.trace_services: dict[str, set[str]] = {}
        self.fault_logs: list[tuple[str, str, int]] = []  # (log_id, service, ts) of ERROR logs

    def _active(self, kind: FaultKind, service: str, ts: int) -> Optional[FaultSpec]:
        for f in self.faults:
            if f.spec.kind is kind and f.spec.target == service and f.active(ts):
                return f.spec
        return None

    def _log(self, ts: int, service: str, level: Level, msg: str, trace_id: Optional[str]) -> None:
        log_id = self.rng.hex(64)
        self.logs.append(LogRecord(log_id, ts, service, level, msg, trace_id))
        if level is Level.ERROR:
            self.fault_logs.append((log_id, service, ts))

    def request(self, arrival_ns: int, template: CallTemplate) -> None:
        trace_id = self.rng.hex(128)
        self.trace_arrival[trace_id] = arrival_ns
        self.trace_services[trace_id] = set()
        self._span(template.root, trace_id, None, arrival_ns, arrival_ns, None)

    def _span(self, node: CallNode, trace_id: str, parent: Optional[str], start_ns: int,
              arrival_ns: int, caller: Optional[tuple[str, str]]) -> bool:
        """Emit one span and its subtree; returns True if the call returned an error."""
        rng = self.rng
        r = rng.r
        op = self.ops[(node.service, node.operation)]
        dur = r.lognormvariate(math.log(op.latency_ms), op.latency_sigma)
        lat = self._active(FaultKind.LATENCY, node.service, arrival_ns)
        if lat is not None:
            dur *= lat.magnitude
        span_id = rng.hex(64)
        self.trace_services[trace_id].add(node.service)

        failed = False
        truncate = False
        err = self._active(FaultKind.ERROR, node.service, arrival_ns)
        if err is not None and r.random() < err.magnitude:
            failed = True
            truncate = r.random() < TRUNCATE_PROB

        end_ns = start_ns + int(dur * 1e6)
        name = op.name
        scale = self.log_scale
        for _ in range(rng.poisson(op.info_rate * scale)):
            ts = start_ns + int(r.random() * dur * 1e6)
            if r.random() < 0.5:
                msg = f"{name} handled status=200 latency={dur:.1f}ms"
            else:
                msg = f"{name} request from user=u{r.choice('abcdefgh')}{r.randrange(10000)} completed items={r.randrange(1, 9)}"
            self._log(ts, node.service, Level.INFO, msg, trace_id)
        for _ in range(rng.poisson(op.warn_rate * scale)):
            ts = start_ns + int(r.random() * dur * 1e6)
            if r.random() < 0.5:
                msg = f"slow call in {name} took {dur * 3:.0f} ms threshold={int(op.latency_ms * 2)} ms"
            else:
                msg = f"retrying {name} attempt={r.randrange(1, 4)} reason=timeout"
            self._log(ts, node.service, Level.WARN, msg, trace_id)
        if op.error_rate and r.random() < op.error_rate:
            self._log(end_ns, node.service, Level.ERROR,
                      f"transient failure in {name} connection reset peer=10.0.{r.randrange(256)}.{r.randrange(256)}",
                      trace_id)
        if failed:
            self._log(end_ns, node.service, Level.ERROR,
                      f"{name} failed with internal error code=500 request_id={rng.hex(32)}", trace_id)
            if r.random() < 0.5:
                self._log(end_ns, node.service, Level.ERROR,
                          f"unhandled exception in {name} handler: state=inconsistent", trace_id)

        self.spans.append(SpanRecord(span_id, trace_id, parent, node.service, node.operation, start_ns, dur))
        self.activity[node.service].append((start_ns, dur, failed))

        if not truncate:
            offset = start_ns + int(dur * 1e6 * 0.1)
            for child in node.children:
                if self._span(child, trace_id, span_id, offset, arrival_ns, (node.service, name)):
                    # callers degrade rather than fail, so they report it as a warning
                    self._log(end_ns, node.service, Level.WARN,
                              f"upstream call to {child.service} failed status=500 in {name}", trace_id)
                    # callers return the error to their own caller half of the time
                    failed = failed or r.random() < CASCADE_PROB
        return failed

    def heartbeats(self, start_ns: int, duration_s: float, period_s: float = 10.0) -> None:
        r = self.rng.r
        for s in self.topo.services:
            t = start_ns + int(r.random() * period_s * NS_PER_S)
            while t < start_ns + duration_s * NS_PER_S:
                self._log(t, s, Level.INFO,
                          f"heartbeat ok pool_size={r.randrange(8, 33)} active_connections={r.randrange(0, 50)}", None)
                t += int(period_s * NS_PER_S)


def _load_factor(t_s: np.ndarray | float, phase: float, period_s: float,
                 amplitude: float = 0.4) -> np.ndarray | float:
    return 1.0 + amplitude * np.sin(2 * math.pi * t_s / period_s + phase)


def _arrivals(rng: _Rng, rate: float, t0_s: float, duration_s: float, phase: float,
              period_s: float, amplitude: float = 0.4) -> list[float]:
    """Non-homogeneous Poisson arrivals by thinning, times relative to the fault-free start."""
    peak = rate * (1.0 + amplitude)
    out = []
    t = 0.0
    r = rng.r
    while True:
        t += r.expovariate(peak)
        if t >= duration_s:
            return out
        if r.random() * peak <= rate * _load_factor(t0_s + t, phase, period_s, amplitude):
            out.append(t0_s + t)


def _metric_readings(builder: _PhaseBuilder, topo: Topology, start_ns: int, duration_s: float,
                     interval_s: float, expected_rate: Mapping[str, float], faults: Sequence[_Fault],
                     np_rng: np.random.Generator) -> list[MetricReading]:
    n = int(duration_s // interval_s)
    names = topo.metric_names
    cpu_dims = np.array([m.startswith("cpu") for m in names])
    readings: list[MetricReading] = []
    for service in topo.services:
        act = builder.activity[service]
        ts = np.array([a[0] for a in act], dtype=np.int64)
        dur = np.array([a[1] for a in act], dtype=np.float64)
        fail = np.array([a[2] for a in act], dtype=bool)
        bins = (ts - start_ns) // int(interval_s * NS_PER_S)
        ok = (bins >= 0) & (bins < n)
        bins, dur, fail = bins[ok], dur[ok], fail[ok]
        count = np.bincount(bins, minlength=n).astype(float)
        dsum = np.bincount(bins, weights=dur, minlength=n)
        nfail = np.bincount(bins, weights=fail.astype(float), minlength=n)
        base_lat = float(np.median(dur)) if dur.size else 10.0
        lat = np.empty(n)
        prev = base_lat
        for i in range(n):
            if count[i] > 0:
                prev = dsum[i] / count[i]
            lat[i] = prev
        u = count / (interval_s * max(expected_rate.get(service, 1.0), 1e-9))
        err = 100.0 * nfail / np.maximum(count, 1.0)
        noise = np_rng.standard_normal((n, len(names)))
        cols = {
            "cpu_usage": 10 + 30 * u + NOISE * noise[:, 0],
            "cpu_throttle": 1 + 3 * u + NOISE * noise[:, 1],
            "cpu_load": 0.5 + 1.5 * u + NOISE * noise[:, 2],
            "mem_usage": 40 + 5 * u + NOISE * noise[:, 3],
            "mem_rss": 120 + 20 * u + NOISE * noise[:, 4],
            "net_rx": 2 + 8 * u + NOISE * noise[:, 5],
            "net_tx": 2 + 6 * u + NOISE * noise[:, 6],
            "disk_read": 5 + 2 * u + NOISE * noise[:, 7],
            "disk_write": 3 + 2 * u + NOISE * noise[:, 8],
            "request_rate": count / interval_s,
            "error_rate": err,
            "latency_s": lat / 1000.0,
            "thread_count": 20 + 10 * u + NOISE * noise[:, 12],
            "gc_pause": 2 + NOISE * noise[:, 13],
            "conn_pool_used": 2 + 4 * u + NOISE * noise[:, 14],
            "open_fds": 50 + 20 * u + NOISE * noise[:, 15],
        }
        mat = np.stack([cols.get(m, noise[:, j]) for j, m in enumerate(names)], axis=1)
        t_ns = start_ns + (np.arange(n) * interval_s * NS_PER_S).astype(np.int64) + int(interval_s * NS_PER_S) // 2
        for f in faults:
            if f.spec.kind is FaultKind.CPU and f.spec.target == service:
                rows = (t_ns >= f.start_ns) & (t_ns < f.end_ns)
                mat[np.ix_(rows, cpu_dims)] *= f.spec.magnitude
        for i in range(n):
            readings.append(MetricReading(service, int(t_ns[i]), tuple(float(x) for x in mat[i])))
    readings.sort(key=lambda r: (r.timestamp_ns, r.service))
    return readings


def _phase(topo: Topology, rng: _Rng, np_rng: np.random.Generator, request_rate: float,
           t0_s: float, duration_s: float, faults: Sequence[_Fault], load_phase: float,
           load_period_s: float, metric_interval_s: float, log_scale: float,
           load_amplitude: float) -> tuple[Telemetry, _PhaseBuilder]:
    builder = _PhaseBuilder(topo, rng, faults, log_scale)
    weights = [t.weight for t in topo.templates]
    start_ns = EPOCH_NS + int(t0_s * NS_PER_S)
    for t in _arrivals(rng, request_rate, t0_s, duration_s, load_phase, load_period_s, load_amplitude):
        tpl = rng.r.choices(topo.templates, weights)[0]
        builder.request(EPOCH_NS + int(t * NS_PER_S), tpl)
    builder.heartbeats(start_ns, duration_s)
    share = topo.service_share()
    expected = {s: request_rate * share[s] for s in topo.services}
    readings = _metric_readings(builder, topo, start_ns, duration_s, metric_interval_s, expected, faults, np_rng)
    builder.logs.sort(key=lambda l: (l.timestamp_ns, l.log_id))
    tel = Telemetry(builder.spans, builder.logs, readings, topo.metric_names)
    return tel, builder


def generate(
    topology: Topology,
    request_rate: float,
    fault_free_duration: float,
    production_duration: float,
    faults: Sequence[FaultSpec] = (),
    seed: int = 0,
    metric_interval_s: float = 5.0,
    load_period_s: float = 1200.0,
    log_scale: float = 1.0,
    load_amplitude: float = 0.4,
) -> tuple[Telemetry, Telemetry, GroundTruth]:
    """Generate a fault-free phase followed directly by a production phase.

    Fault windows are given in seconds from the start of the production phase.
    Request arrivals follow ``request_rate * (1 + load_amplitude * sin(...))``
    with period ``load_period_s``; amplitude 0 gives a homogeneous Poisson stream.
    """
    if fault_free_duration <= 0 or production_duration <= 0:
        raise ConfigError("duration", "phase durations must be > 0")
    if request_rate <= 0:
        raise ConfigError("request_rate", "must be > 0")
    if not 0.0 <= load_amplitude < 1.0:
        raise ConfigError("load_amplitude", "must lie in [0, 1)")
    declared = set(topology.services)
    for f in faults:
        if f.target not in declared:
            raise UnknownService("faults.target", f"unknown service {f.target!r}")
        if f.start_s < 0 or f.end_s > production_duration:
            raise ConfigError("faults.window", f"fault window [{f.start_s}, {f.end_s}) outside production phase")

    rng = _Rng(seed)
    np_rng = np.random.default_rng(seed)
    load_phase = rng.r.uniform(0, 2 * math.pi)
    ff, _ = _phase(topology, rng, np_rng, request_rate, 0.0, fault_free_duration, (), load_phase,
                   load_period_s, metric_interval_s, log_scale, load_amplitude)
    prod_t0 = fault_free_duration
    prod_start_ns = EPOCH_NS + int(prod_t0 * NS_PER_S)
    active = [_Fault(f, prod_start_ns + int(f.start_s * NS_PER_S), prod_start_ns + int(f.end_s * NS_PER_S))
              for f in faults]
    prod, builder = _phase(topology, rng, np_rng, request_rate, prod_t0, production_duration, active,
                           load_phase, load_period_s, metric_interval_s, log_scale, load_amplitude)

    truth = GroundTruth(cases=[FaultCase(f.spec.kind, f.spec.target, f.start_ns, f.end_ns) for f in active])
    for tid, arrival in builder.trace_arrival.items():
        services = builder.trace_services[tid]
        for f in active:
            if f.spec.target in services and f.active(arrival):
                truth.labeled_traces.add(tid)
                break
    for log_id, service, ts in builder.fault_logs:
        for f in active:
            if f.spec.target == service and f.active(ts):
                truth.labeled_logs.add(log_id)
                break
    truth.novel_traces = _novel_traces(ff, prod)
    truth.labeled_traces |= truth.novel_traces
    return ff, prod, truth


def _novel_traces(ff: Telemetry, prod: Telemetry) -> set[str]:
    from .ingest import build_trace_batch

    ref = build_trace_batch(ff.spans)
    known: set[CallPath] = set(ref.paths)
    batch = build_trace_batch(prod.spans)
    novel_pid = {i for i, p in enumerate(batch.paths) if p not in known}
    out = set()
    for t in range(batch.n_traces):
        pids = batch.path_ids[batch.path_offsets[t]:batch.path_offsets[t + 1]]
        if any(int(p) in novel_pid for p in pids):
            out.add(batch.trace_ids[t])
    return out


# ---------------------------------------------------------------------------
# scenario files


@dataclass
class Scenario:
    name: str = "default"
    topology: Topology = field(default_factory=default_topology)
    request_rate: float = 10.0
    fault_free_duration: float = 3600.0
    production_duration: float = 600.0
    faults: list[FaultSpec] = field(default_factory=list)
    seed: int = 0
    metric_interval_s: float = 5.0
    load_period_s: float = 1200.0
    log_scale: float = 1.0
    load_amplitude: float = 0.4

    def generate(self, seed: Optional[int] = None):
        return generate(self.topology, self.request_rate, self.fault_free_duration,
                        self.production_duration, self.faults,
                        self.seed if seed is None else seed,
                        self.metric_interval_s, self.load_period_s, self.log_scale,
                        self.load_amplitude)


_SCENARIO_KEYS = {"name", "topology", "request_rate", "fault_free_duration", "production_duration",
                  "faults", "seed", "metric_interval_s", "load_period_s", "log_scale",
                  "load_amplitude"}


def _node_from(d: Mapping[str, Any]) -> CallNode:
    try:
        return CallNode(d["service"], d["operation"], tuple(_node_from(c) for c in d.get("children", [])))
    except KeyError as exc:
        raise ConfigError("topology.templates", f"call node missing {exc}") from None


def topology_from_dict(d: Mapping[str, Any]) -> Topology:
    try:
        ops = tuple(Operation(**o) for o in d["operations"])
        templates = tuple(CallTemplate(t["name"], float(t["weight"]), _node_from(t["root"]))
                          for t in d["templates"])
        return Topology(tuple(d["services"]), ops, templates,
                        tuple(d.get("metric_names", METRIC_NAMES)))
    except KeyError as exc:
        raise ConfigError("topology", f"missing key {exc}") from None
    except TypeError as exc:
        raise ConfigError("topology", str(exc)) from None


def scenario_from_dict(d: Mapping[str, Any]) -> Scenario:
    unknown = set(d) - _SCENARIO_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown scenario field")
    kw: dict[str, Any] = {k: d[k] for k in d if k not in ("topology", "faults")}
    for key in ("request_rate", "fault_free_duration", "production_duration", "metric_interval_s",
                "load_period_s", "log_scale"):
        if key in kw:
            try:
                kw[key] = float(kw[key])
            except (TypeError, ValueError):
                raise ConfigError(key, f"expected a number, got {kw[key]!r}") from None
            if kw[key] <= 0:
                raise ConfigError(key, "must be > 0")
    if "load_amplitude" in kw:
        try:
            kw["load_amplitude"] = float(kw["load_amplitude"])
        except (TypeError, ValueError):
            raise ConfigError("load_amplitude", f"expected a number, got {kw['load_amplitude']!r}") from None
    topo = d.get("topology", "default")
    if topo == "default" or topo is None:
        kw["topology"] = default_topology()
    elif isinstance(topo, Mapping):
        kw["topology"] = topology_from_dict(topo)
    else:
        raise ConfigError("topology", "expected 'default' or a mapping")
    faults = []
    for i, f in enumerate(d.get("faults") or []):
        if not isinstance(f, Mapping):
            raise ConfigError(f"faults[{i}]", "expected a mapping")
        missing = {"kind", "target", "start_s", "end_s", "magnitude"} - set(f)
        if missing:
            raise ConfigError(f"faults[{i}].{sorted(missing)[0]}", "missing")
        faults.append(FaultSpec(f["kind"], f["target"], float(f["start_s"]), float(f["end_s"]),
                                float(f["magnitude"])))
    kw["faults"] = faults
    return Scenario(**kw)


def load_scenario(path: Path | str) -> Scenario:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"scenario file not found: {p}")
    data = yaml.safe_load(p.read_text()) or {}
    if not isinstance(data, Mapping):
        raise ConfigError("scenario", "top level must be a mapping")
    return scenario_from_dict(data)


def write_outputs(out_dir: Path | str, ff: Telemetry, prod: Telemetry, truth: GroundTruth) -> None:
    """``fault_free/`` and ``production/`` telemetry directories plus ground_truth.json."""
    out = Path(out_dir)
    save_telemetry(out / "fault_free", ff)
    save_telemetry(out / "production", prod)
    truth.save(out / "ground_truth.json")
