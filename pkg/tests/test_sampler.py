from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from telesample.model import CallPath, SpanRecord, Telemetry
from telesample.pipeline import analyze, decisions, sample
from telesample.profile import build_profile
from telesample.sampler import (
    P_MAX,
    EmptyReferenceSet,
    InactiveAnalysis,
    SamplerConfig,
    analysis_prob_log,
    analysis_prob_trace,
    behavior_score_trace,
    budget_size,
    compose,
    compose_lq,
    edge_prob_log,
    edge_prob_trace,
    g,
    log1m_g,
    log_rarity,
    p_from_lq,
    propagate_log_to_trace,
    propagate_trace_to_log,
    select_within_budget,
    topo_score,
)

G1 = 0.76159  # 2 / (1 + e^-2) - 1 to five decimals


def path(*services):
    return CallPath(tuple((s, "op") for s in services))


# topology and behavior scores


def test_topo_score_examples():
    refs = [path("A", "B", "D")]
    assert topo_score([path("A", "B", "D")], refs) == (0.0, None)
    score, (dev, near) = topo_score([path("A", "B", "C")], refs)
    assert score == 0.5 and dev == path("A", "B", "C") and near == path("A", "B", "D")
    assert topo_score([path("X", "Y")], refs)[0] == 1.0
    with pytest.raises(EmptyReferenceSet):
        topo_score([path("A")], [])


def test_topo_score_takes_max_over_paths():
    refs = [path("A", "B"), path("A", "C")]
    assert topo_score([path("A", "B"), path("A", "Z")], refs)[0] == pytest.approx(2 / 3)


def stats_profile(stats):
    p = build_profile(Telemetry([SpanRecord("s", "t", None, "A", "op", 0, 1.0)]))
    p.span_stats = stats
    return p


def spans(*rows):
    return [SpanRecord(f"s{i}", "t", None, s, o, 0, d) for i, (s, o, d) in enumerate(rows)]


def test_behavior_score_examples():
    p = stats_profile({("A", "op"): (1.0, 2.0), ("B", "op"): (10.0, 1.0), ("C", "op"): (0.0, 1.0)})
    assert behavior_score_trace(spans(("A", "op", 1.0)), p) == 0.0
    assert behavior_score_trace(spans(("A", "op", 5.0)), p) == 2.0
    assert behavior_score_trace(spans(("A", "op", 2.0), ("B", "op", 13.2), ("C", "op", -0.0 + 1.1)), p) == \
        pytest.approx(3.2)
    assert behavior_score_trace(spans(("Z", "op", 1.0)), p, z_unknown=3.0) == 3.0


# probabilities


def test_g_examples():
    assert g(0.0) == 0.0
    assert round(g(1.0), 5) == G1
    assert g(50.0) < 1.0 and g(np.array([50.0]))[0] < 1.0


def test_edge_prob_trace_examples():
    assert edge_prob_trace(0.0, 0.0) == 0.0
    assert round(edge_prob_trace(0.0, 1.0), 5) == G1
    assert edge_prob_trace(1.0, 0.0) == pytest.approx(math.tanh(math.tanh(1.0)))
    assert edge_prob_trace(0.0, 1e9) < 1.0


def test_edge_prob_log_examples():
    assert log_rarity(0.0) == pytest.approx(13.815510557964274)
    assert 1 - edge_prob_log(0.0) == pytest.approx(2e-12, rel=1e-4)
    assert edge_prob_log(1 - 1e-6) == pytest.approx(0.0, abs=1e-12)
    assert round(edge_prob_log(math.exp(-1) - 1e-6), 5) == G1
    assert log_rarity(1.0) == 0.0


def test_analysis_prob_examples():
    assert analysis_prob_trace(["A", "B"], {"A": 0.0}) == 0.0
    assert round(analysis_prob_trace(["A"], {"A": 1.0}), 5) == G1
    assert analysis_prob_trace(["A", "B"], {"A": 0.2, "B": 1.5}) == g(1.5)
    assert analysis_prob_log("B", {"B": 1.5}) == g(1.5)
    assert analysis_prob_log("Q", {"B": 1.5}) == 0.0
    with pytest.raises(InactiveAnalysis):
        analysis_prob_trace(["A"], {"A": 1.0}, anomalous=False)
    with pytest.raises(InactiveAnalysis):
        analysis_prob_log("A", {"A": 1.0}, anomalous=False)


def test_propagation_examples():
    assert propagate_trace_to_log(0.3, 0.0) == 0.3
    assert propagate_trace_to_log(0.2, 0.9, 0.5) == pytest.approx(1 - math.sqrt(0.1))
    assert round(propagate_trace_to_log(0.2, 0.9, 0.5), 4) == 0.6838
    assert propagate_trace_to_log(0.2, 0.9, 1.0) == pytest.approx(0.9)
    assert propagate_log_to_trace(0.4, []) == 0.4
    assert propagate_log_to_trace(0.1, [0.3, 0.99], 0.5) == pytest.approx(0.9)
    assert propagate_log_to_trace(0.4, [0.0, 0.0]) == 0.4


def test_propagation_array_form_matches_scalar():
    pa = np.array([0.1, 0.5, 0.2])
    logs_max = np.array([0.99, np.nan, 0.0])
    got = propagate_log_to_trace(pa, logs_max, 0.5)
    assert got == pytest.approx([0.9, 0.5, 0.2])


def test_compose_examples():
    assert compose(0.8, None, anomalous=False) == 0.8
    assert compose(0.8, 0.5, anomalous=False) == 0.8
    assert compose(0.8, 0.5, anomalous=True) == pytest.approx(0.4)
    assert compose(0.8, 0.0, anomalous=True) == 0.0
    assert compose(0.8, 0.5, anomalous=True, composition="max") == 0.8


@given(st.floats(0, 30), st.floats(0, 30))
def test_complement_log_compose_matches_direct(x, y):
    pe, pa = g(x), g(y)
    lq = compose_lq(np.array([log1m_g(x)]), np.array([log1m_g(y)]))
    assert p_from_lq(lq)[0] == pytest.approx(min(pe * pa, P_MAX), rel=1e-12, abs=1e-15)
    lq = compose_lq(np.array([log1m_g(x)]), np.array([log1m_g(y)]), "max")
    assert p_from_lq(lq)[0] == pytest.approx(max(pe, pa), rel=1e-12)


@settings(max_examples=200)
@given(st.floats(0, 700))
def test_log1m_g_matches_high_precision(x):
    # 1 - tanh(700) is about 1e-608, so the direct form needs ~650 digits
    with mpmath.workdps(650):
        want = mpmath.log(1 - mpmath.tanh(mpmath.mpf(x)))
    assert log1m_g(x) == pytest.approx(float(want), rel=1e-12, abs=1e-15)


# selection


def test_select_top_two():
    mask = select_within_budget(["1", "2", "3", "4"], np.array([0.9, 0.1, 0.8, 0.2]), 0.5)
    assert mask.tolist() == [True, False, True, False]


def test_select_ties_by_id():
    mask = select_within_budget(["d", "b", "a", "c"], np.full(4, 0.5), 0.5)
    assert mask.tolist() == [False, True, True, False]


def test_select_everything_at_full_budget():
    assert select_within_budget(list("abc"), np.zeros(3), 1.0).all()


def test_complement_log_key_breaks_saturated_ties():
    ids = ["a", "b"]
    lq = np.array([-40.0, -45.0])
    mask = select_within_budget(ids, p_from_lq(lq), 0.5, lq=lq)
    assert mask.tolist() == [False, True]


def test_budget_validation():
    with pytest.raises(ValueError):
        select_within_budget(["a"], np.array([0.5]), 0.0)
    with pytest.raises(ValueError):
        SamplerConfig(budget=1.5)
    with pytest.raises(ValueError):
        SamplerConfig(w_t=0.0)
    with pytest.raises(ValueError):
        SamplerConfig(mode="reservoir")


def test_budget_size_rounding():
    assert budget_size(100, 0.05) == 5
    assert budget_size(101, 0.05) == 6
    assert budget_size(3, 0.001) == 1
    assert budget_size(0, 0.5) == 0


@settings(max_examples=300)
@given(st.lists(st.floats(0, 1, exclude_max=True), min_size=0, max_size=60),
       st.floats(0.001, 1.0), st.sampled_from(["rank", "bernoulli"]), st.integers(0, 2 ** 32 - 1))
def test_selection_size_is_exact(ps, budget, mode, seed):
    ids = [f"i{j:03d}" for j in range(len(ps))]
    mask = select_within_budget(ids, np.array(ps), budget, mode, seed)
    assert mask.sum() == math.ceil(round(budget * len(ps), 9))
    again = select_within_budget(ids, np.array(ps), budget, mode, seed)
    assert np.array_equal(mask, again)


# properties


@settings(max_examples=1000)
@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_g_range_and_monotonicity(a, b):
    ga, gb = g(a), g(b)
    assert 0.0 <= ga < 1.0 and 0.0 <= gb < 1.0
    if a < b:
        assert ga <= gb
        # strict while tanh is resolvable in double precision
        if b < 15:
            assert ga < gb


@settings(max_examples=1000)
@given(st.floats(0, 1, exclude_max=True), st.floats(0, 1, exclude_max=True),
       st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_propagation_never_decreases_and_grows_with_w(pa_own, pa_other, w1, w2):
    lo, hi = sorted((w1, w2))
    for f in (propagate_trace_to_log, lambda a, b, w: propagate_log_to_trace(a, [b], w)):
        p_lo, p_hi = f(pa_own, pa_other, lo), f(pa_own, pa_other, hi)
        assert p_lo >= pa_own and p_hi >= pa_own
        assert p_hi >= p_lo - 1e-15


# pipeline-level sampler behavior


@pytest.fixture(scope="module")
def error_analysis(error_case):
    _, prod, truth, profile = error_case
    return analyze(prod, profile), truth


def test_decision_invariants(error_analysis):
    a, _ = error_analysis
    res = sample(a, SamplerConfig(budget=0.05))
    ds = list(decisions(a, res))
    assert len(ds) == a.batch.n_traces + len(a.logs)
    for d in ds:
        for p in (d.p_edge, d.p_analysis, d.p_analysis_propagated, d.p_final):
            assert p is None or 0.0 <= p < 1.0
        if d.p_analysis is not None:
            assert d.p_analysis_propagated >= d.p_analysis
    by_window: dict[tuple[int, str], list] = {}
    for d in ds:
        by_window.setdefault((d.window_start_ns, d.kind), []).append(d)
    for group in by_window.values():
        assert sum(d.selected for d in group) == budget_size(len(group), 0.05)


def test_normal_windows_use_edge_probability(error_analysis):
    a, _ = error_analysis
    res = sample(a, SamplerConfig())
    normal = [wa for wa in a.windows if not wa.anomalous]
    assert normal
    for wa in normal:
        assert np.array_equal(res.p_trace[wa.traces], a.p_edge_trace[wa.traces])
        assert np.array_equal(res.p_log[wa.logs], a.p_edge_log[wa.logs])
        assert wa.pa_trace is None and wa.pa_log is None


def test_anomalous_windows_multiply(error_analysis):
    a, _ = error_analysis
    res = sample(a, SamplerConfig())
    wa = next(w for w in a.windows if w.anomalous)
    want = np.minimum(a.p_edge_trace[wa.traces] * wa.pa_trace_prop, P_MAX)
    assert res.p_trace[wa.traces] == pytest.approx(want, rel=1e-9, abs=1e-15)


def test_evidence_completeness(error_analysis):
    a, _ = error_analysis
    res = sample(a, SamplerConfig(budget=0.2))
    topo = dict(zip(a.batch.trace_ids, a.topo))
    checked = 0
    for d in decisions(a, res):
        if not d.selected:
            assert d.evidence == {}
            continue
        assert d.evidence
        if d.kind == "trace" and topo[d.subject] > 0:
            assert "deviant_path" in d.evidence or "invalid_trace" in d.evidence
            checked += 1
        if d.p_analysis:
            assert d.evidence.get("top_events")
    assert checked


def test_variants_are_configurable(error_analysis):
    a, _ = error_analysis
    edge = sample(a, SamplerConfig(variant="edge_only"))
    assert np.array_equal(edge.p_trace, a.p_edge_trace)
    ana = sample(a, SamplerConfig(variant="analysis_only"))
    for wa in a.windows:
        want = wa.pa_trace_prop if wa.anomalous else np.zeros(wa.traces.size)
        assert np.array_equal(ana.p_trace[wa.traces], want)
    u1 = sample(a, SamplerConfig(variant="uniform"), seed=1)
    u2 = sample(a, SamplerConfig(variant="uniform"), seed=1)
    u3 = sample(a, SamplerConfig(variant="uniform"), seed=2)
    assert np.array_equal(u1.trace_selected, u2.trace_selected)
    assert not np.array_equal(u1.trace_selected, u3.trace_selected)


def test_rank_mode_is_deterministic(error_analysis):
    a, _ = error_analysis
    r1, r2 = sample(a, SamplerConfig()), sample(a, SamplerConfig())
    assert np.array_equal(r1.trace_selected, r2.trace_selected)
    assert np.array_equal(r1.log_selected, r2.log_selected)


@settings(max_examples=1000, deadline=None)
@given(st.floats(0.001, 1.0), st.floats(0.001, 1.0), st.sampled_from(["full", "edge_only", "analysis_only"]))
def test_coverage_monotone_in_budget(error_analysis, b1, b2, variant):
    a, truth = error_analysis
    lo, hi = sorted((b1, b2))
    assume(lo < hi)
    s_lo = sample(a, SamplerConfig(budget=lo, variant=variant))
    s_hi = sample(a, SamplerConfig(budget=hi, variant=variant))
    # rank mode: a larger budget keeps a superset in every window
    assert not (s_lo.trace_selected & ~s_hi.trace_selected).any()
    assert not (s_lo.log_selected & ~s_hi.log_selected).any()
