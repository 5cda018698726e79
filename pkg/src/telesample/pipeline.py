"""Windowed production pipeline: templates and paths, detection, RCA, sampling.

``analyze`` does everything that does not depend on the sampler variant or
budget; ``sample`` turns an analysis into per-window selections, so one
analysis can be sampled under many configurations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .detect import DetectionReport, DetectorConfig, UnknownService, detect_window
from .ingest import ElementIndex, aggregate_metrics, assign_templates, build_trace_batch
from .model import LogRecord, LogTemplate, MetricVector, Telemetry, Window
from .profile import ReferenceProfile
from .rca import RcaConfig, RcaReport, analyze_window
from .sampler import (
    EmptyReferenceSet,
    SamplerConfig,
    SamplingDecision,
    compose_lq,
    log1m_g,
    log_rarity,
    p_from_lq,
    select_within_budget,
)
from .wire import DataError, dumps, write_jsonl


class ProfileMismatch(DataError):
    """Production telemetry does not fit the profile's schema."""


@dataclass(frozen=True)
class PipelineConfig:
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    rca: RcaConfig = field(default_factory=RcaConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    seed: int = 0


@dataclass
class WindowAnalysis:
    window: Window
    report: DetectionReport
    rca: Optional[RcaReport]
    traces: np.ndarray              # indexes into the trace batch
    logs: np.ndarray                # indexes into the log list
    # analysis probabilities as log(1 - p); None in normal windows
    lq_trace: Optional[np.ndarray] = None
    lq_trace_prop: Optional[np.ndarray] = None
    lq_log: Optional[np.ndarray] = None
    lq_log_prop: Optional[np.ndarray] = None

    @property
    def anomalous(self) -> bool:
        return self.report.anomalous

    @property
    def pa_trace(self) -> Optional[np.ndarray]:
        return None if self.lq_trace is None else p_from_lq(self.lq_trace)

    @property
    def pa_trace_prop(self) -> Optional[np.ndarray]:
        return None if self.lq_trace_prop is None else p_from_lq(self.lq_trace_prop)

    @property
    def pa_log(self) -> Optional[np.ndarray]:
        return None if self.lq_log is None else p_from_lq(self.lq_log)

    @property
    def pa_log_prop(self) -> Optional[np.ndarray]:
        return None if self.lq_log_prop is None else p_from_lq(self.lq_log_prop)


@dataclass
class Analysis:
    profile: ReferenceProfile
    batch: object
    logs: list[LogRecord]
    template_ids: np.ndarray
    templates: list[LogTemplate]
    topo: np.ndarray
    path_scores: np.ndarray
    path_nearest: np.ndarray
    ref_paths: list
    max_z: np.ndarray
    max_z_span: np.ndarray
    delta_t: np.ndarray
    lq_edge_trace: np.ndarray
    p_prime: np.ndarray
    lq_edge_log: np.ndarray
    log_trace: np.ndarray           # trace index per log, -1 if uncorrelated
    windows: list[WindowAnalysis]

    def ranking_for(self, start_ns: int, end_ns: int) -> Optional[list[str]]:
        """Service ranking of the window with the largest total deviation overlapping [start, end)."""
        best, best_dev = None, -1.0
        for w in self.windows:
            if w.rca is None or w.window.end_ns <= start_ns or w.window.start_ns >= end_ns:
                continue
            dev = w.rca.total_deviation
            if dev > best_dev:
                best, best_dev = w.rca, dev
        return None if best is None else best.ranking()

    @property
    def p_edge_trace(self) -> np.ndarray:
        return p_from_lq(self.lq_edge_trace)

    @property
    def p_edge_log(self) -> np.ndarray:
        return p_from_lq(self.lq_edge_log)


@dataclass
class SampleResult:
    config: SamplerConfig
    p_trace: np.ndarray
    p_log: np.ndarray
    trace_selected: np.ndarray
    log_selected: np.ndarray

    def selected_trace_ids(self, analysis: Analysis) -> set[str]:
        ids = analysis.batch.trace_ids
        return {ids[i] for i in np.flatnonzero(self.trace_selected)}

    def selected_log_ids(self, analysis: Analysis) -> set[str]:
        return {analysis.logs[i].log_id for i in np.flatnonzero(self.log_selected)}


def _check_schema(prod: Telemetry, profile: ReferenceProfile) -> None:
    if prod.readings and tuple(prod.metric_names) != tuple(profile.metric_names):
        raise ProfileMismatch(
            f"metric schema differs from the profile: {list(prod.metric_names)} vs {list(profile.metric_names)}")
    unknown = sorted(prod.services - set(profile.services))
    if unknown:
        raise ProfileMismatch(f"services without fault-free baseline: {', '.join(unknown)}")


def _csr_sets(seqs, elements: ElementIndex) -> tuple[np.ndarray, np.ndarray]:
    offsets = [0]
    flat: list[int] = []
    for elems in seqs:
        ids = sorted({elements.intern(e) for e in elems})
        flat.extend(ids)
        offsets.append(len(flat))
    return np.asarray(offsets, dtype=np.int64), np.asarray(flat, dtype=np.int64)


def _segment_reduce(ufunc, values: np.ndarray, offsets: np.ndarray, empty: float) -> np.ndarray:
    n = len(offsets) - 1
    out = np.full(n, empty)
    nonempty = offsets[1:] > offsets[:-1]
    if values.size and nonempty.any():
        starts = offsets[:-1][nonempty]
        out[nonempty] = ufunc.reduceat(values, starts)
    return out


def analyze(prod: Telemetry, profile: ReferenceProfile, config: PipelineConfig = PipelineConfig()) -> Analysis:
    _check_schema(prod, profile)
    scfg = config.sampler
    wlen = profile.window_ns

    # logs: templates and rarity
    miner = profile.miner()
    logs = prod.logs
    tids = assign_templates(logs, miner)
    templates = miner.templates()
    freq = np.zeros(len(templates))
    for tid, p in profile.template_freq.items():
        freq[tid] = p
    p_prime = freq[tids] if len(tids) else np.zeros(0)
    lq_edge_log = log1m_g(log_rarity(p_prime, scfg.eps))

    # traces: paths, topology novelty, span deviations
    batch = build_trace_batch(prod.spans)
    elements = batch.elements
    ref_paths = sorted(profile.path_set, key=lambda c: c.to_list())
    n_traces = batch.n_traces
    if n_traces and not ref_paths:
        raise EmptyReferenceSet("profile has no reference call paths")
    q_off, q_el = _csr_sets((p.elements for p in batch.paths), elements)
    r_off, r_el = _csr_sets((p.elements for p in ref_paths), elements)
    path_scores, path_nearest = kernels.topo_scores(q_off, q_el, r_off, r_el)
    topo = _segment_reduce(np.maximum, path_scores[batch.path_ids], batch.path_offsets, 1.0)
    topo[batch.status != kernels.STATUS_OK] = 1.0

    idx, mu, sigma, ref = profile.span_arrays(elements)
    stat_idx = idx[batch.elem] if batch.elem.size else np.zeros(0, dtype=np.int64)
    max_z, max_z_span, max_rel = kernels.span_scores(batch.offsets, stat_idx, batch.durations, mu, sigma, ref,
                                                     scfg.z_unknown)
    delta_t = np.maximum(max_rel, 0.0)
    lq_edge_trace = log1m_g(np.maximum(np.tanh(topo), max_z))

    # correlation and service ids
    trace_pos = {tid: i for i, tid in enumerate(batch.trace_ids)}
    log_trace = np.fromiter((trace_pos.get(l.trace_id, -1) if l.trace_id is not None else -1 for l in logs),
                            dtype=np.int64, count=len(logs))
    services = sorted(set(profile.services) | prod.services)
    svc_id = {s: i for i, s in enumerate(services)}
    elem_svc = np.array([svc_id[elements[i][0]] for i in range(len(elements))], dtype=np.int64)
    span_svc = elem_svc[batch.elem] if batch.elem.size else np.zeros(0, dtype=np.int64)
    log_svc = np.fromiter((svc_id[l.service] for l in logs), dtype=np.int64, count=len(logs))
    correlated = log_trace >= 0

    # window assignment
    t_win = batch.root_start_ns // wlen
    l_win = np.fromiter((l.timestamp_ns for l in logs), dtype=np.int64, count=len(logs)) // wlen
    vectors: dict[int, list[MetricVector]] = {}
    readings: dict[int, list] = {}
    if prod.readings:
        for v in aggregate_metrics(prod.readings, prod.metric_names, wlen):
            vectors.setdefault(v.window.start_ns // wlen, []).append(v)
        for r in prod.readings:
            readings.setdefault(r.timestamp_ns // wlen, []).append(r)
    all_w = sorted(set(t_win.tolist()) | set(l_win.tolist()) | set(vectors))
    t_order = np.argsort(t_win, kind="stable")
    l_order = np.argsort(l_win, kind="stable")
    t_sorted, l_sorted = t_win[t_order], l_win[l_order]

    windows: list[WindowAnalysis] = []
    for w in all_w:
        tw = t_order[np.searchsorted(t_sorted, w, "left"):np.searchsorted(t_sorted, w, "right")]
        lw = l_order[np.searchsorted(l_sorted, w, "left"):np.searchsorted(l_sorted, w, "right")]
        window = Window(w * wlen, wlen)
        w_spans = [sp for t in tw.tolist() for sp in batch.spans[batch.offsets[t]:batch.offsets[t + 1]]]
        w_logs = [logs[i] for i in lw.tolist()]
        try:
            report = detect_window(window, w_spans, w_logs, vectors.get(w, []), profile, config.detector)
        except UnknownService as exc:
            raise ProfileMismatch(str(exc)) from None
        wa = WindowAnalysis(window, report, None, tw, lw)
        if report.anomalous:
            rca = analyze_window(window.start_ns, w_spans, w_logs, tids[lw], templates,
                                 readings.get(w, []), profile, config.rca, services=profile.services)
            wa.rca = rca
            phi = np.zeros(len(services))
            for s in rca.scores:
                phi[svc_id[s.service]] = s.score
            # 1 - (1 - p) ** w is w * lq in complement-log form; lq = 0 means p = 0
            lq_phi = log1m_g(phi)
            lq_all_t = _segment_reduce(np.minimum, lq_phi[span_svc], batch.offsets, 0.0)
            lq_all_l = lq_phi[log_svc]
            best_log = np.zeros(n_traces)
            np.minimum.at(best_log, log_trace[correlated], lq_all_l[correlated])
            wa.lq_trace = lq_all_t[tw]
            wa.lq_trace_prop = np.minimum(wa.lq_trace, scfg.w_l * best_log[tw])
            wa.lq_log = lq_all_l[lw]
            lt = log_trace[lw]
            lifted = np.where(lt >= 0, scfg.w_t * lq_all_t[np.maximum(lt, 0)], 0.0)
            wa.lq_log_prop = np.minimum(wa.lq_log, lifted)
        windows.append(wa)

    return Analysis(profile, batch, logs, tids, templates, topo, path_scores, path_nearest, ref_paths,
                    max_z, max_z_span, delta_t, lq_edge_trace, p_prime, lq_edge_log, log_trace, windows)


def _window_seed(seed: int, window_start_ns: int, kind: int) -> int:
    return int(np.random.SeedSequence([seed, window_start_ns, kind]).generate_state(1)[0])


def sample(analysis: Analysis, config: SamplerConfig = SamplerConfig(), seed: int = 0) -> SampleResult:
    n_t, n_l = len(analysis.lq_edge_trace), len(analysis.lq_edge_log)
    p_trace = np.zeros(n_t)
    p_log = np.zeros(n_l)
    sel_t = np.zeros(n_t, dtype=bool)
    sel_l = np.zeros(n_l, dtype=bool)
    trace_ids = analysis.batch.trace_ids
    for wa in analysis.windows:
        start = wa.window.start_ns
        for kind, idx, lq_edge, lq_a, out_p, out_sel, ids_of in (
            (0, wa.traces, analysis.lq_edge_trace, wa.lq_trace_prop, p_trace, sel_t,
             lambda ix: [trace_ids[i] for i in ix]),
            (1, wa.logs, analysis.lq_edge_log, wa.lq_log_prop, p_log, sel_l,
             lambda ix: [analysis.logs[i].log_id for i in ix]),
        ):
            if idx.size == 0:
                continue
            lq_e = lq_edge[idx]
            lq, tiebreak = None, None
            if config.variant == "full":
                if wa.anomalous:
                    lq = compose_lq(lq_e, lq_a, config.composition)
                    # orders values that coincide in double precision
                    tiebreak = lq_e + lq_a
                else:
                    lq = lq_e
            elif config.variant == "edge_only":
                lq = lq_e
            elif config.variant == "analysis_only":
                lq = lq_a if wa.anomalous else np.zeros(idx.size)
            if lq is None:
                p = np.random.default_rng(_window_seed(seed, start, kind + 2)).random(idx.size)
            else:
                p = p_from_lq(lq)
            ids = ids_of(idx.tolist())
            mask = select_within_budget(ids, p, config.budget, config.mode, _window_seed(seed, start, kind),
                                        tiebreak=tiebreak, lq=lq)
            out_p[idx] = p
            out_sel[idx] = mask
    return SampleResult(config, p_trace, p_log, sel_t, sel_l)


def run(prod: Telemetry, profile: ReferenceProfile, config: PipelineConfig = PipelineConfig()) -> tuple[Analysis, SampleResult]:
    analysis = analyze(prod, profile, config)
    return analysis, sample(analysis, config.sampler, config.seed)


# ---------------------------------------------------------------------------
# decisions and evidence


def _top_events(rca: Optional[RcaReport], n: int = 3) -> list[dict]:
    if rca is None:
        return []
    events = sorted(rca.events, key=lambda e: (-e.deviation, e.modality.value, e.service, e.name))
    return [e.to_dict() for e in events[:n]]


def _trace_evidence(a: Analysis, t: int, wa: WindowAnalysis) -> dict:
    ev: dict = {}
    batch = a.batch
    if a.topo[t] > 0:
        if batch.status[t] != kernels.STATUS_OK:
            ev["invalid_trace"] = int(batch.status[t])
        else:
            pids = batch.path_ids[batch.path_offsets[t]:batch.path_offsets[t + 1]]
            best = int(pids[np.argmax(a.path_scores[pids])])
            ev["deviant_path"] = batch.paths[best].to_list()
            near = int(a.path_nearest[best])
            ev["nearest_reference"] = a.ref_paths[near].to_list() if near >= 0 else None
            ev["topo_score"] = float(a.topo[t])
    span_i = int(a.max_z_span[t])
    if span_i >= 0:
        ev["max_z_span"] = batch.spans[span_i].span_id
        ev["max_z"] = float(a.max_z[t])
    ev["delta_t"] = float(a.delta_t[t])
    top = _top_events(wa.rca)
    if top:
        ev["top_events"] = top
    return ev


def _log_evidence(a: Analysis, i: int, wa: WindowAnalysis) -> dict:
    tpl = a.templates[int(a.template_ids[i])]
    ev: dict = {"template_id": tpl.template_id, "template": tpl.pattern, "template_freq": float(a.p_prime[i])}
    top = _top_events(wa.rca)
    if top:
        ev["top_events"] = top
    return ev


def _opt(arr: Optional[np.ndarray], j: int) -> Optional[float]:
    return None if arr is None else float(arr[j])


def decisions(analysis: Analysis, result: SampleResult):
    """Yield one SamplingDecision per trace and log, window by window (traces first)."""
    a = analysis
    pe_t, pe_l = a.p_edge_trace, a.p_edge_log
    for wa in a.windows:
        start = wa.window.start_ns
        pa_t, pa_tp, pa_l, pa_lp = wa.pa_trace, wa.pa_trace_prop, wa.pa_log, wa.pa_log_prop
        for j, t in enumerate(wa.traces.tolist()):
            sel = bool(result.trace_selected[t])
            yield SamplingDecision(a.batch.trace_ids[t], "trace", start, float(pe_t[t]),
                                   _opt(pa_t, j), _opt(pa_tp, j), float(result.p_trace[t]),
                                   sel, _trace_evidence(a, t, wa) if sel else {})
        for j, i in enumerate(wa.logs.tolist()):
            sel = bool(result.log_selected[i])
            yield SamplingDecision(a.logs[i].log_id, "log", start, float(pe_l[i]),
                                   _opt(pa_l, j), _opt(pa_lp, j), float(result.p_log[i]),
                                   sel, _log_evidence(a, i, wa) if sel else {})


def write_run_outputs(out_dir: Path | str, analysis: Analysis, result: SampleResult) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    a = analysis
    write_jsonl(out / "detection.jsonl", (wa.report.to_dict() for wa in a.windows))
    write_jsonl(out / "rca_report.jsonl", (wa.rca.to_dict() for wa in a.windows if wa.rca is not None))
    write_jsonl(out / "decisions.jsonl", (d.to_dict() for d in decisions(a, result)))
    sel_traces = np.flatnonzero(result.trace_selected).tolist()
    write_jsonl(out / "sampled_traces.jsonl",
                (sp.to_dict() for t in sel_traces for sp in a.batch.spans_of(t)))
    write_jsonl(out / "sampled_logs.jsonl",
                (a.logs[i].to_dict() | {"template_id": int(a.template_ids[i])}
                 for i in np.flatnonzero(result.log_selected).tolist()))
    write_jsonl(out / "templates.jsonl",
                ({"template_id": t.template_id, "service": t.service, "pattern": t.pattern} for t in a.templates))
    write_jsonl(out / "paths.jsonl",
                ({"path_id": i, "path": p.to_list(), "topo_score": float(a.path_scores[i])}
                 for i, p in enumerate(a.batch.paths)))


__all__ = ["Analysis", "PipelineConfig", "ProfileMismatch", "SampleResult", "analyze", "sample", "run",
           "decisions", "write_run_outputs", "dumps"]
