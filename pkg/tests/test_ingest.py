from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from telesample.ingest import (
    InvalidTrace,
    TemplateMiner,
    aggregate_metrics,
    build_trace_batch,
    correlate,
    extract_call_paths,
    mine_template,
    tokenize,
)
from telesample.model import CallPath, LogRecord, MetricReading, SpanRecord, TraceGraph, group_traces
from telesample.wire import SchemaMismatch


def log(msg, service="A", lid="l", tid=None, ts=0):
    return LogRecord(lid, ts, service, "INFO", msg, tid)


def span(sid, parent=None, service="A", op="op", tid="t1"):
    return SpanRecord(sid, tid, parent, service, op, 0, 1.0)


def test_ip_addresses_share_a_template():
    m = TemplateMiner()
    a = mine_template(log("connect db host=10.0.0.1"), m)
    b = mine_template(log("connect db host=10.0.0.2"), m)
    assert a == b
    assert m.template(a).pattern == "connect db host=<*>"


def test_non_numeric_slot_generalizes_at_threshold():
    m = TemplateMiner()
    a = m.add("A", "connect db host alpha")
    b = m.add("A", "connect db host beta")
    assert a == b and m.template(a).pattern == "connect db host <*>"


def test_identical_messages_are_idempotent():
    m = TemplateMiner()
    a = m.add("A", "cache warm done")
    pattern = m.template(a).pattern
    assert m.add("A", "cache warm done") == a
    assert m.template(a).pattern == pattern and len(m) == 1


def test_unrelated_messages_get_distinct_templates():
    m = TemplateMiner()
    assert m.add("A", "user login ok") != m.add("A", "payment failed timeout")


def test_templates_are_per_service():
    m = TemplateMiner()
    assert m.add("A", "started worker") != m.add("B", "started worker")


def test_store_only_grows():
    m = TemplateMiner()
    sizes = []
    for msg in ["a b c", "a b d", "x y", "a b c", "q r s t"]:
        m.add("A", msg)
        sizes.append(len(m))
    assert sizes == sorted(sizes)


def test_empty_message_rejected():
    with pytest.raises(ValueError):
        mine_template(log(""), TemplateMiner())


def test_tokenize_generalizes_numbers():
    assert tokenize("took 12ms retry=3 id=0xdeadbeef") == ("took", "<*>", "retry=", "<*>", "id=", "<*>")


def test_template_partition_is_order_insensitive(error_case):
    logs = error_case[1].logs

    def partition(seq):
        m = TemplateMiner()
        groups: dict[int, set[str]] = {}
        for l in seq:
            groups.setdefault(m.add(l.service, l.message), set()).add(l.log_id)
        return {frozenset(g) for g in groups.values()}

    shuffled = list(logs)
    random.Random(0).shuffle(shuffled)
    assert partition(logs) == partition(shuffled)


def test_call_paths_single_span():
    t = TraceGraph.from_spans([span("a", service="A", op="op1")])
    assert extract_call_paths(t) == {CallPath((("A", "op1"),))}


def test_call_paths_two_leaves():
    t = TraceGraph.from_spans([span("r", service="A"), span("b", "r", "B"), span("c", "r", "C")])
    got = {tuple(s for s, _ in p) for p in extract_call_paths(t)}
    assert got == {("A", "B"), ("A", "C")}


def test_call_paths_chain_plus_branch():
    t = TraceGraph.from_spans([span("a", service="A"), span("b", "a", "B"), span("c", "b", "C"),
                               span("d", "a", "D")])
    got = {tuple(s for s, _ in p) for p in extract_call_paths(t)}
    assert got == {("A", "B", "C"), ("A", "D")}


def test_duplicate_leaves_collapse():
    t = TraceGraph.from_spans([span("a"), span("b", "a", "B"), span("c", "a", "B")])
    assert len(extract_call_paths(t)) == 1


def test_invalid_trace_rejected():
    with pytest.raises(InvalidTrace):
        extract_call_paths(TraceGraph.from_spans([span("a", "b"), span("b", "a")]))


def test_batch_paths_match_per_trace_extraction(error_case):
    spans = error_case[1].spans
    batch = build_trace_batch(spans)
    traces = group_traces(spans)
    assert batch.trace_ids == sorted(traces)
    for i, tid in enumerate(batch.trace_ids[:300]):
        assert set(batch.paths_of(i)) == extract_call_paths(traces[tid])


W = 60


def reading(ts, *values, service="A"):
    return MetricReading(service, ts, tuple(float(v) for v in values))


def test_aggregate_mean():
    (v,) = aggregate_metrics([reading(1, 2), reading(2, 4)], ("cpu",), W)
    assert v.values == (3.0,) and v.count == 2


def test_aggregate_forward_fill_and_zero_default():
    vs = aggregate_metrics([reading(70, 5)], ("cpu",), W, start_ns=0, end_ns=3 * W)
    assert [v.values for v in vs] == [(0.0,), (5.0,), (5.0,)]
    assert [v.count for v in vs] == [0, 1, 0]


def test_aggregate_fills_missing_dimension_only():
    vs = aggregate_metrics([reading(1, 1, 2), reading(61, 3, float("nan"))], ("a", "b"), W)
    assert vs[1].values == (3.0, 2.0)


def test_aggregate_schema_mismatch():
    with pytest.raises(SchemaMismatch):
        aggregate_metrics([reading(1, 1, 2)], ("cpu",), W)


@given(st.lists(st.tuples(st.sampled_from("AB"), st.integers(0, 10 * W - 1),
                          st.floats(-1e3, 1e3)), max_size=60))
def test_aggregate_counts_are_conserved(rows):
    rs = [reading(ts, v, service=s) for s, ts, v in rows]
    vs = aggregate_metrics(rs, ("x",), W)
    for s in "AB":
        assert sum(v.count for v in vs if v.service == s) == sum(1 for r in rs if r.service == s)


def test_correlate_examples():
    t = TraceGraph.from_spans([span("a", tid="t1")])
    ctx = correlate([t], [log("x", lid="1", tid="t1"), log("y", lid="2", tid="t1")])
    assert len(ctx) == 1 and len(ctx.logs_of("t1")) == 2
    ctx = correlate([t], [log("x", tid="zz")])
    assert len(ctx.logs_of("t1")) == 0 and len(ctx.uncorrelated) == 1
    ctx = correlate([], [log("x", lid=str(i)) for i in range(4)])
    assert len(ctx) == 0 and len(ctx.uncorrelated) == 4


@given(st.lists(st.sampled_from(["t0", "t1", "t2", "t9", None]), max_size=40))
def test_correlate_is_total(tids):
    traces = [TraceGraph.from_spans([span("a", tid=t)]) for t in ("t0", "t1", "t2")]
    logs = [log("m", lid=str(i), tid=t) for i, t in enumerate(tids)]
    ctx = correlate(traces, logs)
    correlated = sum(len(v[1]) for v in ctx.mapping.values())
    assert correlated + len(ctx.uncorrelated) == len(logs)
    assert set(ctx.mapping) == {"t0", "t1", "t2"}
    for tid, (_, ls) in ctx.mapping.items():
        assert all(l.trace_id == tid for l in ls)


def test_batch_marks_invalid_traces():
    spans = [span("a", tid="ok"), span("x", "y", tid="bad"), span("y", "x", tid="bad")]
    batch = build_trace_batch(spans)
    i = batch.trace_ids.index("bad")
    assert batch.status[i] != 0 and batch.paths_of(i) == []
    assert np.array_equal(np.diff(batch.offsets), [2, 1])
