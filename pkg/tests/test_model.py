from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from telesample.model import (
    CallPath,
    CyclicTrace,
    Level,
    LogRecord,
    MetricVector,
    MultipleRoots,
    OrphanSpan,
    SpanRecord,
    TraceGraph,
    Window,
    validate_trace,
)


def span(sid, parent=None, service="A", op="op", tid="t1", start=0, dur=1.0):
    return SpanRecord(sid, tid, parent, service, op, start, dur)


def test_single_span_trace_is_valid():
    validate_trace(TraceGraph.from_spans([span("a")]))


def test_two_span_cycle():
    with pytest.raises(CyclicTrace) as exc:
        validate_trace(TraceGraph.from_spans([span("a", "b"), span("b", "a")]))
    assert set(exc.value.span_ids) == {"a", "b"}


def test_chain_is_valid():
    g = TraceGraph.from_spans([span("r"), span("a", "r"), span("b", "a")])
    validate_trace(g)
    assert len(g.edges) == 2


def test_multiple_roots_and_orphans():
    with pytest.raises(MultipleRoots):
        validate_trace(TraceGraph.from_spans([span("a"), span("b")]))
    with pytest.raises(OrphanSpan) as exc:
        validate_trace(TraceGraph.from_spans([span("a"), span("b", "zz")]))
    assert exc.value.span_ids == ("b",)


def test_cycle_hanging_off_a_valid_root():
    spans = [span("r"), span("a", "b"), span("b", "a")]
    with pytest.raises(CyclicTrace):
        validate_trace(TraceGraph.from_spans(spans))


def test_negative_duration_rejected():
    with pytest.raises(ValueError):
        span("a", dur=-1.0)


def test_level_enum_and_window():
    log = LogRecord("l1", 5, "A", "WARN", "x")
    assert log.level is Level.WARN
    with pytest.raises(ValueError):
        LogRecord("l1", 5, "A", "DEBUG", "x")
    w = Window.of(125, 60)
    assert (w.start_ns, w.end_ns) == (120, 180) and w.contains(179) and not w.contains(180)
    with pytest.raises(ValueError):
        Window(0, 0)


def test_call_path_non_empty():
    with pytest.raises(ValueError):
        CallPath(())


ids = st.text("0123456789abcdef", min_size=1, max_size=16)
names = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=12)


@given(sid=ids, tid=ids, parent=st.none() | ids, svc=names, op=names,
       start=st.integers(0, 2**62), dur=st.floats(0, 1e9, allow_nan=False))
def test_span_round_trip(sid, tid, parent, svc, op, start, dur):
    sp = SpanRecord(sid, tid, parent, svc, op, start, dur)
    assert SpanRecord.from_dict(sp.to_dict()) == sp


@given(lid=ids, ts=st.integers(0, 2**62), svc=names, level=st.sampled_from(list(Level)),
       msg=st.text(min_size=1, max_size=40), tid=st.none() | ids,
       tpl=st.none() | st.integers(0, 1000))
def test_log_round_trip(lid, ts, svc, level, msg, tid, tpl):
    log = LogRecord(lid, ts, svc, level, msg, tid, tpl)
    assert LogRecord.from_dict(log.to_dict()) == log


@given(svc=names, start=st.integers(0, 2**40), vals=st.lists(st.floats(-1e9, 1e9), min_size=1, max_size=16))
def test_metric_vector_round_trip(svc, start, vals):
    v = MetricVector(svc, Window(start), tuple(vals), 3)
    names_ = [f"m{i}" for i in range(len(vals))]
    assert MetricVector.from_dict(v.to_dict(names_)) == v


@given(st.lists(st.tuples(names, names), min_size=1, max_size=6))
def test_call_path_round_trip(elems):
    p = CallPath(tuple(elems))
    assert CallPath.from_list(p.to_list()) == p
