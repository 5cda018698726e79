"""Turns raw telemetry into the correlated representation used downstream.

Logs become template ids, traces become sets of root-to-leaf call paths,
metric readings become one vector per (service, window), and logs are joined
to their traces by ``trace_id``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .model import (
    CallPath,
    LogRecord,
    LogTemplate,
    MetricReading,
    MetricVector,
    SpanRecord,
    TraceError,
    TraceGraph,
    Window,
    validate_trace,
)
from .wire import SchemaMismatch

WILDCARD = "<*>"

_NUMERIC = re.compile(
    r"^(?:[-+]?\d[\d.,:_/-]*[a-zA-Z%]{0,3}|0x[0-9a-fA-F]+|(?=[0-9a-fA-F-]*\d)[0-9a-fA-F-]{8,})$"
)


class InvalidTrace(ValueError):
    pass


def tokenize(message: str) -> tuple[str, ...]:
    """Whitespace tokens, ``key=value`` split as ``key=`` / ``value``, numbers -> ``<*>``."""
    out: list[str] = []
    for tok in message.split():
        key, eq, val = tok.partition("=")
        if eq and key and val:
            out.append(key + "=")
            tok = val
        out.append(WILDCARD if _NUMERIC.match(tok) else tok)
    return tuple(out)


class TemplateMiner:
    """Online template miner over a fixed-depth prefix tree.

    Leaves are keyed by (service, token count, first two tokens). Within a leaf
    a message joins the most similar template if the fraction of positions that
    agree (a wildcard agrees with anything) reaches ``sim_threshold``; differing
    positions of the joined template become wildcards. Templates are never
    removed, so ids stay valid for the store's lifetime.
    """

    def __init__(self, sim_threshold: float = 0.5, templates: Iterable[LogTemplate] = ()):
        self.sim_threshold = sim_threshold
        self._tokens: list[list[str]] = []
        self._service: list[str] = []
        self._leaves: dict[tuple, list[int]] = {}
        self._cache: dict[tuple[str, tuple[str, ...]], int] = {}
        self._by_pattern: dict[tuple[str, tuple[str, ...]], int] = {}
        for tpl in sorted(templates, key=lambda t: t.template_id):
            if tpl.template_id != len(self._tokens):
                raise ValueError("template ids must be dense and start at 0")
            self._insert(tpl.service, list(tpl.tokens))

    def __len__(self) -> int:
        return len(self._tokens)

    @staticmethod
    def _leaf_key(service: str, tokens: Sequence[str]) -> tuple:
        return (service, len(tokens), tokens[0] if tokens else "", tokens[1] if len(tokens) > 1 else "")

    def _insert(self, service: str, tokens: list[str]) -> int:
        tid = len(self._tokens)
        self._tokens.append(tokens)
        self._service.append(service)
        self._leaves.setdefault(self._leaf_key(service, tokens), []).append(tid)
        self._by_pattern[(service, tuple(tokens))] = tid
        return tid

    def add(self, service: str, message: str) -> int:
        tokens = tokenize(message)
        key = (service, tokens)
        tid = self._cache.get(key)
        if tid is not None:
            return tid
        tid = self._match(service, tokens)
        self._cache[key] = tid
        return tid

    def _match(self, service: str, tokens: tuple[str, ...]) -> int:
        leaf = self._leaves.get(self._leaf_key(service, tokens), ())
        n = len(tokens)
        best_tid, best_sim = -1, -1.0
        for tid in leaf:
            tpl = self._tokens[tid]
            same = sum(1 for a, b in zip(tpl, tokens) if a == b or a == WILDCARD)
            sim = same / n if n else 1.0
            if sim > best_sim:
                best_tid, best_sim = tid, sim
        if best_tid < 0 or best_sim < self.sim_threshold:
            return self._insert(service, list(tokens))
        tpl = self._tokens[best_tid]
        if best_sim < 1.0:
            old = (service, tuple(tpl))
            for i, (a, b) in enumerate(zip(tpl, tokens)):
                if a != b:
                    tpl[i] = WILDCARD
            new = (service, tuple(tpl))
            if new in self._by_pattern and self._by_pattern[new] != best_tid:
                # identical pattern already exists under another id: keep the older one
                # as canonical so (service, pattern) stays unique
                tpl[:] = list(old[1])
                return self._by_pattern[new]
            del self._by_pattern[old]
            self._by_pattern[new] = best_tid
        return best_tid

    def template(self, tid: int) -> LogTemplate:
        return LogTemplate(tid, self._service[tid], tuple(self._tokens[tid]))

    def templates(self) -> list[LogTemplate]:
        return [self.template(i) for i in range(len(self._tokens))]

    def service_of(self, tid: int) -> str:
        return self._service[tid]


def mine_template(log: LogRecord, state: TemplateMiner) -> int:
    if not log.message:
        raise ValueError(f"log {log.log_id} has an empty message")
    return state.add(log.service, log.message)


def extract_call_paths(trace: TraceGraph) -> frozenset[CallPath]:
    """One path per leaf span, root first; duplicates collapse."""
    try:
        validate_trace(trace)
    except TraceError as exc:
        raise InvalidTrace(str(exc)) from exc
    children = trace.children()
    paths: set[CallPath] = set()
    stack: list[tuple[SpanRecord, tuple[tuple[str, str], ...]]] = [(trace.root, ())]
    while stack:
        sp, prefix = stack.pop()
        here = prefix + (sp.element,)
        kids = children.get(sp.span_id)
        if not kids:
            paths.add(CallPath(here))
        else:
            stack.extend((k, here) for k in kids)
    return frozenset(paths)


def aggregate_metrics(
    readings: Iterable[MetricReading],
    metric_names: Sequence[str],
    window_length_ns: int,
    start_ns: Optional[int] = None,
    end_ns: Optional[int] = None,
) -> list[MetricVector]:
    """Per-window mean of every metric dimension, one vector per (service, window).

    Windows tile ``[start_ns, end_ns)`` (defaults: the span of the readings).
    A dimension with no finite reading in a window carries the service's
    previous window value, or 0 before the first one.
    """
    d = len(metric_names)
    by_service: dict[str, list[MetricReading]] = {}
    for r in readings:
        if len(r.values) != d:
            raise SchemaMismatch(
                f"reading for {r.service} at {r.timestamp_ns} has {len(r.values)} values, "
                f"schema declares {d} ({', '.join(metric_names)})"
            )
        by_service.setdefault(r.service, []).append(r)
    if not by_service:
        return []
    all_ts = [r.timestamp_ns for rs in by_service.values() for r in rs]
    first = (min(all_ts) if start_ns is None else start_ns) // window_length_ns
    last = (max(all_ts) if end_ns is None else end_ns - 1) // window_length_ns
    n_windows = last - first + 1

    out: list[MetricVector] = []
    for service in sorted(by_service):
        rs = by_service[service]
        ts = np.fromiter((r.timestamp_ns for r in rs), dtype=np.int64, count=len(rs))
        vals = np.array([r.values for r in rs], dtype=np.float64).reshape(len(rs), d)
        widx = ts // window_length_ns - first
        keep = (widx >= 0) & (widx < n_windows)
        widx, vals = widx[keep], vals[keep]
        finite = np.isfinite(vals)
        sums = np.zeros((n_windows, d))
        cnts = np.zeros((n_windows, d))
        np.add.at(sums, widx, np.where(finite, vals, 0.0))
        np.add.at(cnts, widx, finite)
        n_per_window = np.bincount(widx, minlength=n_windows)
        prev = np.zeros(d)
        for w in range(n_windows):
            has = cnts[w] > 0
            cur = np.where(has, sums[w] / np.where(has, cnts[w], 1.0), prev)
            out.append(MetricVector(service, Window((first + w) * window_length_ns, window_length_ns),
                                    tuple(float(x) for x in cur), int(n_per_window[w])))
            prev = cur
    return out


@dataclass
class CorrelationContext:
    mapping: dict[str, tuple[TraceGraph, tuple[LogRecord, ...]]] = field(default_factory=dict)
    uncorrelated: list[LogRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.mapping)

    def logs_of(self, trace_id: str) -> tuple[LogRecord, ...]:
        entry = self.mapping.get(trace_id)
        return entry[1] if entry else ()


def correlate(traces: Iterable[TraceGraph] | Mapping[str, TraceGraph], logs: Iterable[LogRecord]) -> CorrelationContext:
    graphs = dict(traces) if isinstance(traces, Mapping) else {t.trace_id: t for t in traces}
    buckets: dict[str, list[LogRecord]] = {tid: [] for tid in graphs}
    ctx = CorrelationContext()
    for log in logs:
        bucket = buckets.get(log.trace_id) if log.trace_id is not None else None
        if bucket is None:
            ctx.uncorrelated.append(log)
        else:
            bucket.append(log)
    ctx.mapping = {tid: (graphs[tid], tuple(ls)) for tid, ls in buckets.items()}
    return ctx


class ElementIndex:
    """Interns (service, operation) pairs as dense ints."""

    def __init__(self, elements: Iterable[tuple[str, str]] = ()):
        self._ids: dict[tuple[str, str], int] = {}
        self._elems: list[tuple[str, str]] = []
        for e in elements:
            self.intern(e)

    def intern(self, e: tuple[str, str]) -> int:
        i = self._ids.get(e)
        if i is None:
            i = self._ids[e] = len(self._elems)
            self._elems.append(e)
        return i

    def get(self, e: tuple[str, str], default: int = -1) -> int:
        return self._ids.get(e, default)

    def __getitem__(self, i: int) -> tuple[str, str]:
        return self._elems[i]

    def __len__(self) -> int:
        return len(self._elems)


@dataclass
class TraceBatch:
    """Columnar view of many traces: spans sorted by trace, CSR offsets.

    ``trace_paths`` lists, per trace, the ids of its distinct call paths into
    ``paths``. Traces failing validation keep ``status != 0`` and no paths.
    """

    trace_ids: list[str]
    offsets: np.ndarray
    spans: list[SpanRecord]
    elem: np.ndarray
    durations: np.ndarray
    root_start_ns: np.ndarray
    status: np.ndarray
    elements: ElementIndex
    paths: list[CallPath]
    path_offsets: np.ndarray
    path_ids: np.ndarray

    @property
    def n_traces(self) -> int:
        return len(self.trace_ids)

    def paths_of(self, i: int) -> list[CallPath]:
        return [self.paths[p] for p in self.path_ids[self.path_offsets[i]:self.path_offsets[i + 1]]]

    def spans_of(self, i: int) -> list[SpanRecord]:
        return self.spans[self.offsets[i]:self.offsets[i + 1]]

    def services_of(self, i: int) -> frozenset[str]:
        return frozenset(self.elements[e][0] for e in self.elem[self.offsets[i]:self.offsets[i + 1]])

    def trace(self, i: int) -> TraceGraph:
        return TraceGraph(self.trace_ids[i], tuple(self.spans_of(i)))


def build_trace_batch(spans: Iterable[SpanRecord], elements: Optional[ElementIndex] = None) -> TraceBatch:
    """Group spans into traces and extract every trace's call paths in one pass."""
    elements = elements if elements is not None else ElementIndex()
    buckets: dict[str, list[SpanRecord]] = {}
    for sp in spans:
        b = buckets.get(sp.trace_id)
        if b is None:
            buckets[sp.trace_id] = [sp]
        else:
            b.append(sp)
    trace_ids = sorted(buckets)
    n_spans = sum(len(b) for b in buckets.values())
    offsets = np.zeros(len(trace_ids) + 1, dtype=np.int64)
    ordered: list[SpanRecord] = []
    parent = np.empty(n_spans, dtype=np.int64)
    elem = np.empty(n_spans, dtype=np.int64)
    root_start = np.zeros(len(trace_ids), dtype=np.int64)
    intern = elements.intern
    pos = 0
    for t, tid in enumerate(trace_ids):
        group = buckets[tid]
        local = {sp.span_id: j for j, sp in enumerate(group)}
        first_start = None
        for sp in group:
            p = sp.parent_span_id
            if p is None:
                parent[pos] = -1
                if first_start is None:
                    first_start = sp.start_ns
            else:
                parent[pos] = local.get(p, -2)
            elem[pos] = intern((sp.service, sp.operation))
            pos += 1
        ordered.extend(group)
        offsets[t + 1] = pos
        root_start[t] = first_start if first_start is not None else min(sp.start_ns for sp in group)
    durations = np.fromiter((sp.duration_ms for sp in ordered), dtype=np.float64, count=n_spans)

    h, is_leaf, status = kernels.path_hashes(offsets, parent, elem)

    # distinct paths by hash; materialize each new one once by walking parents
    seg = np.repeat(np.arange(len(trace_ids)), np.diff(offsets))
    valid_span = status[seg] == kernels.STATUS_OK
    leaf_idx = np.flatnonzero(is_leaf & valid_span)
    paths: list[CallPath] = []
    hash_to_path: dict[int, int] = {}
    leaf_pid = np.empty(len(leaf_idx), dtype=np.int64)
    for j, (li, hv) in enumerate(zip(leaf_idx.tolist(), h[leaf_idx].tolist())):
        pid = hash_to_path.get(hv)
        if pid is None:
            base = int(offsets[seg[li]])
            node = li
            seq = []
            while node >= 0:
                seq.append(elements[int(elem[node])])
                p = int(parent[node])
                node = base + p if p >= 0 else -1
            pid = hash_to_path[hv] = len(paths)
            paths.append(CallPath(tuple(reversed(seq))))
        leaf_pid[j] = pid
    pairs = np.unique(np.stack([seg[leaf_idx], leaf_pid], axis=1), axis=0) if len(leaf_idx) else np.zeros((0, 2), dtype=np.int64)
    path_offsets = np.zeros(len(trace_ids) + 1, dtype=np.int64)
    np.cumsum(np.bincount(pairs[:, 0], minlength=len(trace_ids)), out=path_offsets[1:])
    return TraceBatch(
        trace_ids=trace_ids,
        offsets=offsets,
        spans=ordered,
        elem=elem,
        durations=durations,
        root_start_ns=root_start,
        status=status,
        elements=elements,
        paths=paths,
        path_offsets=path_offsets,
        path_ids=pairs[:, 1].astype(np.int64),
    )


def assign_templates(logs: Sequence[LogRecord], miner: TemplateMiner) -> np.ndarray:
    """Template id per log (array aligned with ``logs``), mining as it goes."""
    add = miner.add
    return np.fromiter((add(l.service, l.message) for l in logs), dtype=np.int64, count=len(logs))


def window_index(ts_ns: np.ndarray, length_ns: int) -> np.ndarray:
    return np.asarray(ts_ns, dtype=np.int64) // length_ns
