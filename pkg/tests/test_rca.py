from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from telesample.model import LogRecord, LogTemplate, MetricReading, SpanRecord, Telemetry
from telesample.pipeline import analyze
from telesample.profile import MetricHistogram, build_profile
from telesample.rca import (
    MissingHistogram,
    Modality,
    PatternEvent,
    RcaConfig,
    log_deviation,
    metric_deviation,
    mine_log_patterns,
    mine_metric_patterns,
    mine_trace_patterns,
    overlap,
    rank_patterns,
    relative_increase,
    score_services,
    trace_deviation,
)


def profile_for(metric_names=("cpu",)):
    tel = Telemetry([SpanRecord("s", "t", None, "A", "op", 0, 1.0)],
                    readings=[MetricReading("A", 0, (0.0,) * len(metric_names))],
                    metric_names=tuple(metric_names))
    return build_profile(tel)


def ev(dev, service="A", name="x", modality=Modality.LOG, ranking=0):
    return PatternEvent(modality, name, service, 0.0, 0.0, dev, ranking)


# metric deviation


def test_identical_distribution_has_zero_deviation():
    p = np.array([0.2, 0.3, 0.5])
    assert overlap(p, p) == pytest.approx(1.0)
    assert metric_deviation(overlap(p, p), 4.0, 4.0) == 0.0


def test_disjoint_distribution_example():
    o = overlap(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert o == 0.0
    assert metric_deviation(o, 1.0, 2.0, k_w=0.8, eps=0.0) == pytest.approx(1.0, abs=1e-15)


def test_literal_overlap_switch():
    assert metric_deviation(1.0, 4.0, 4.0, literal=True) == pytest.approx(0.8)


def test_metric_patterns_from_readings():
    p = profile_for()
    p.metric_ref = {("A", "cpu"): MetricHistogram(np.array([0.0, 1.0, 2.0]), np.array([1.0, 0.0]), 0.5)}
    quiet = [MetricReading("A", 0, (0.5,))]
    assert mine_metric_patterns(quiet, p) == []
    (e,) = mine_metric_patterns([MetricReading("A", 0, (1.5,))], p)
    # overlap 0 and mean shift |1.5 - 0.5| / 0.5
    assert e.deviation == pytest.approx(0.8 + 0.2 * 2.0, rel=1e-5)
    assert (e.modality, e.name, e.service, e.normal_value, e.observed_value) == \
        (Modality.METRIC, "cpu", "A", 0.5, 1.5)


def test_out_of_range_mass_lands_in_edge_bins():
    p = profile_for()
    p.metric_ref = {("A", "cpu"): MetricHistogram(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0]), 1.5)}
    (e,) = mine_metric_patterns([MetricReading("A", 0, (1.5,)), MetricReading("A", 0, (99.0,))], p,
                                RcaConfig(tau_metric=0.0))
    assert e.deviation == pytest.approx(0.2 * (50.25 - 1.5) / 1.5, rel=1e-5)


def test_missing_histogram():
    p = profile_for()
    p.metric_ref = {}
    with pytest.raises(MissingHistogram):
        mine_metric_patterns([MetricReading("A", 0, (1.0,))], p)


# trace deviation


def test_relative_increase_examples():
    assert relative_increase(0.56, 0.03) == pytest.approx(17.6667, rel=1e-4)
    assert relative_increase(0.03, 0.03) == 0.0
    assert relative_increase(0.01, 0.03) == 0.0


def test_trace_patterns_use_window_mean():
    p = profile_for()
    p.span_ref_lat = {("A", "op"): 2.0}
    spans = [SpanRecord(f"s{i}", "t", None, "A", "op", 0, d) for i, d in enumerate([3.0, 5.0])]
    (e,) = mine_trace_patterns(spans, p)
    assert (e.observed_value, e.normal_value, e.deviation) == (4.0, 2.0, 1.0)
    assert mine_trace_patterns(spans, p, RcaConfig(tau_trace=1.5)) == []
    assert trace_deviation(spans, p) == pytest.approx(1.5)


# log deviation


def test_unseen_template_deviation():
    assert log_deviation(4.05, 0.0, 1.0) == pytest.approx(4.05)


def test_log_deviation_examples():
    assert log_deviation(6.0, 2.0) == pytest.approx(4 / 3)
    assert log_deviation(2.0, 2.0) == 0.0


def test_log_patterns_error_only_and_drop_non_positive():
    p = profile_for()
    p.template_rate = {0: 2.0, 1: 6.0}
    templates = [LogTemplate(0, "A", ("boom",)), LogTemplate(1, "A", ("meh",))]
    logs = [LogRecord(f"e{i}", 0, "A", "ERROR", "boom") for i in range(6)]
    logs += [LogRecord(f"w{i}", 0, "A", "WARN", "boom") for i in range(9)]
    logs += [LogRecord(f"m{i}", 0, "A", "ERROR", "meh") for i in range(6)]
    tids = [0] * 15 + [1] * 6
    (e,) = mine_log_patterns(logs, tids, templates, p)
    assert e.name == "boom" and e.deviation == pytest.approx(4 / 3) and e.observed_value == 6.0


# ranking and scoring


def test_rank_ties_are_lexicographic():
    ranked = rank_patterns([ev(3, "B"), ev(5, "C"), ev(3, "A")])
    assert [(e.service, e.ranking) for e in ranked] == [("C", 1), ("A", 2), ("B", 3)]
    assert [e.ranking for e in rank_patterns([ev(1)])] == [1]
    assert rank_patterns([]) == []


def test_rankings_are_per_modality():
    ranked = rank_patterns([ev(1, modality=Modality.TRACE), ev(2, modality=Modality.LOG)])
    assert sorted(e.ranking for e in ranked) == [1, 1]


def test_score_example():
    scores = score_services(rank_patterns([ev(4, "s"), ev(1, "t")]), ["s", "t", "u"])
    phi = {s.service: s.score for s in scores}
    assert phi["s"] == pytest.approx(0.5 * 4 / 2)
    assert phi["u"] == 0.0
    assert [s.service for s in scores] == ["s", "t", "u"]


def test_score_additivity_across_modalities():
    one = score_services(rank_patterns([ev(4, "s"), ev(1, "t")]))
    two = score_services(rank_patterns([ev(4, "s"), ev(1, "t"),
                                        ev(4, "s", modality=Modality.TRACE),
                                        ev(1, "t", modality=Modality.TRACE)]))
    v = {s.service: s.score for s in one}["s"]
    assert {s.service: s.score for s in two}["s"] == pytest.approx(2 * v)


def test_unranked_events_rejected():
    with pytest.raises(ValueError):
        score_services([ev(1)])


event_lists = st.lists(
    st.tuples(st.sampled_from(list(Modality)), st.sampled_from("ABCDE"), st.sampled_from("xyz"),
              st.floats(1e-6, 1e6)),
    max_size=25)


def build(rows, scale_mod=None, alpha=1.0):
    return [PatternEvent(m, n, s, 0.0, 0.0, d * (alpha if m is scale_mod else 1.0)) for m, s, n, d in rows]


@settings(max_examples=1000)
@given(event_lists, st.sampled_from(list(Modality)), st.integers(-20, 20))
def test_scaling_one_modality(rows, mod, exp):
    alpha = 2.0 ** exp  # exact in binary, so no ties are created or broken
    base = rank_patterns(build(rows))
    scaled = rank_patterns(build(rows, mod, alpha))
    key = [(e.modality, e.service, e.name, e.ranking) for e in base]
    assert key == [(e.modality, e.service, e.name, e.ranking) for e in scaled]

    def contribution(events):
        return {s.service: s.score for s in score_services([e for e in events if e.modality is mod])}

    c0, c1 = contribution(base), contribution(scaled)
    assert c0.keys() == c1.keys()
    for s in c0:
        assert c1[s] == pytest.approx(alpha * c0[s], rel=1e-12)


@settings(max_examples=1000)
@given(event_lists)
def test_scores_non_negative_and_events_partition(rows):
    ranked = rank_patterns(build(rows))
    scores = score_services(ranked, "ABCDE")
    assert all(s.score >= 0 for s in scores)
    for mod in Modality:
        total = sum(1 for e in ranked if e.modality is mod)
        owned = sum(1 for s in scores for e in s.contributing_events if e.modality is mod)
        assert owned == total
    for s in scores:
        # kept events always carry a positive deviation
        assert (s.score == 0) == (not s.contributing_events)


def test_error_fault_ranks_target_first(error_case):
    _, prod, truth, profile = error_case
    a = analyze(prod, profile)
    (case,) = truth.cases
    assert a.ranking_for(case.start_ns, case.end_ns)[0] == case.root_cause


def test_latency_fault_ranks_target_first(latency_case):
    _, prod, truth, profile = latency_case
    a = analyze(prod, profile)
    (case,) = truth.cases
    assert a.ranking_for(case.start_ns, case.end_ns)[0] == case.root_cause


def test_config_validation():
    for bad in (dict(k_w=2.0), dict(overlap_mode="x"), dict(eps_mean=0), dict(eps_freq=-1)):
        with pytest.raises(ValueError):
            RcaConfig(**bad)
