"""Pattern mining over a flagged window and service ranking."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .model import Level, LogRecord, LogTemplate, MetricReading, SpanRecord
from .profile import ReferenceProfile, histogram_on
from .wire import DataError

OVERLAP_MODES = ("one_minus", "literal")


class MissingHistogram(DataError):
    pass


class Modality(str, enum.Enum):
    METRIC = "Metric"
    TRACE = "Trace"
    LOG = "Log"


@dataclass(frozen=True)
class RcaConfig:
    k_w: float = 0.8
    overlap_mode: str = "one_minus"
    eps_mean: float = 1e-6
    eps_freq: float = 1.0
    tau_metric: float = 0.1
    tau_trace: float = 0.5
    tau_log: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.k_w <= 1.0:
            raise ValueError("k_w must lie in [0, 1]")
        if self.overlap_mode not in OVERLAP_MODES:
            raise ValueError(f"overlap_mode must be one of {OVERLAP_MODES}")
        for name in ("eps_mean", "eps_freq"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class PatternEvent:
    modality: Modality
    name: str
    service: str
    normal_value: float
    observed_value: float
    deviation: float
    ranking: int = 0

    def to_dict(self) -> dict:
        return {"modality": self.modality.value, "ranking": self.ranking, "name": self.name,
                "service": self.service, "normal_value": self.normal_value,
                "observed_value": self.observed_value, "deviation": self.deviation}


@dataclass(frozen=True)
class ServiceScore:
    service: str
    score: float
    contributing_events: tuple[PatternEvent, ...] = ()

    def to_dict(self) -> dict:
        return {"service": self.service, "score": self.score,
                "events": [e.to_dict() for e in self.contributing_events]}


def overlap(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.minimum(p, q).sum())


def metric_deviation(o: float, mu_p: float, mu_q: float, k_w: float = 0.8, eps: float = 1e-6,
                     literal: bool = False) -> float:
    shift = abs(mu_q - mu_p) / (abs(mu_p) + eps)
    return k_w * (o if literal else 1.0 - o) + (1.0 - k_w) * shift


def relative_increase(observed: float, reference: float) -> float:
    """(observed - reference) / reference, clamped at 0."""
    return max((observed - reference) / reference, 0.0)


def log_deviation(r: float, r_hat: float, eps_freq: float = 1.0) -> float:
    return (r - r_hat) / (r_hat + eps_freq)


def mine_metric_patterns(readings: Iterable[MetricReading], profile: ReferenceProfile,
                         config: RcaConfig = RcaConfig()) -> list[PatternEvent]:
    by_service: dict[str, list] = {}
    for r in readings:
        by_service.setdefault(r.service, []).append(r.values)
    events = []
    literal = config.overlap_mode == "literal"
    for service in sorted(by_service):
        arr = np.asarray(by_service[service], dtype=np.float64)
        if arr.shape[1] != len(profile.metric_names):
            raise MissingHistogram(f"{service}: {arr.shape[1]} metrics, profile has {len(profile.metric_names)}")
        for j, name in enumerate(profile.metric_names):
            hist = profile.metric_ref.get((service, name))
            if hist is None:
                raise MissingHistogram(f"no reference histogram for {service}/{name}")
            col = arr[:, j]
            q = histogram_on(hist.edges, col)
            mu_q = float(col.mean())
            dev = metric_deviation(overlap(hist.probs, q), hist.mean, mu_q, config.k_w,
                                   config.eps_mean, literal)
            if dev >= config.tau_metric:
                events.append(PatternEvent(Modality.METRIC, name, service, hist.mean, mu_q, dev))
    return events


def mine_trace_patterns(spans: Iterable[SpanRecord], profile: ReferenceProfile,
                        config: RcaConfig = RcaConfig()) -> list[PatternEvent]:
    """Per (service, operation): relative increase of the window mean over the reference latency."""
    sums: dict[tuple[str, str], list[float]] = {}
    for sp in spans:
        acc = sums.setdefault((sp.service, sp.operation), [0.0, 0])
        acc[0] += sp.duration_ms
        acc[1] += 1
    events = []
    for key in sorted(sums):
        ref = profile.span_ref_lat.get(key)
        if ref is None:
            continue
        total, n = sums[key]
        observed = total / n
        dev = relative_increase(observed, ref)
        if dev >= config.tau_trace:
            events.append(PatternEvent(Modality.TRACE, key[1], key[0], ref, observed, dev))
    return events


def trace_deviation(spans: Iterable[SpanRecord], profile: ReferenceProfile) -> float:
    """Largest relative latency increase over a trace's spans (0 if none are known)."""
    best = 0.0
    for sp in spans:
        ref = profile.span_ref_lat.get((sp.service, sp.operation))
        if ref is not None:
            best = max(best, relative_increase(sp.duration_ms, ref))
    return best


def mine_log_patterns(logs: Sequence[LogRecord], template_ids: Sequence[int],
                      templates: Mapping[int, LogTemplate] | Sequence[LogTemplate],
                      profile: ReferenceProfile, config: RcaConfig = RcaConfig()) -> list[PatternEvent]:
    """ERROR templates whose window count rises above the fault-free rate."""
    counts: dict[int, int] = {}
    for log, tid in zip(logs, template_ids):
        if log.level is Level.ERROR:
            counts[int(tid)] = counts.get(int(tid), 0) + 1
    events = []
    for tid in sorted(counts):
        tpl = templates[tid]
        r_hat = profile.template_rate.get(tid, 0.0)
        r = float(counts[tid])
        dev = log_deviation(r, r_hat, config.eps_freq)
        if dev > config.tau_log:
            events.append(PatternEvent(Modality.LOG, tpl.pattern, tpl.service, r_hat, r, dev))
    return events


def rank_patterns(events: Iterable[PatternEvent]) -> list[PatternEvent]:
    """Assign 1-based rankings per modality (deviation descending, then service and name)."""
    by_mod: dict[Modality, list[PatternEvent]] = {}
    for e in events:
        by_mod.setdefault(e.modality, []).append(e)
    out = []
    for mod in Modality:
        group = sorted(by_mod.get(mod, []), key=lambda e: (-e.deviation, e.service, e.name))
        out.extend(replace(e, ranking=i + 1) for i, e in enumerate(group))
    return out


def score_services(events: Sequence[PatternEvent], services: Iterable[str] = ()) -> list[ServiceScore]:
    """phi_s = sum over modalities of (|A_s| / |A|) * sum_a deviation / (ranking + 1).

    Services listed in ``services`` without events are appended with score 0.
    """
    totals: dict[Modality, int] = {}
    for e in events:
        if e.ranking < 1:
            raise ValueError("events must be ranked before scoring")
        totals[e.modality] = totals.get(e.modality, 0) + 1
    owned: dict[str, dict[Modality, list[PatternEvent]]] = {}
    for e in events:
        owned.setdefault(e.service, {}).setdefault(e.modality, []).append(e)
    scores = []
    for service, mods in owned.items():
        phi = 0.0
        for mod, evs in mods.items():
            phi += len(evs) / totals[mod] * sum(e.deviation / (e.ranking + 1) for e in evs)
        contrib = tuple(sorted((e for evs in mods.values() for e in evs),
                               key=lambda e: (e.modality.value, e.ranking)))
        scores.append(ServiceScore(service, phi, contrib))
    for s in set(services) - set(owned):
        scores.append(ServiceScore(s, 0.0))
    scores.sort(key=lambda s: (-s.score, s.service))
    return scores


@dataclass
class RcaReport:
    window_start_ns: int
    events: list[PatternEvent] = field(default_factory=list)
    scores: list[ServiceScore] = field(default_factory=list)

    @property
    def phi(self) -> dict[str, float]:
        return {s.service: s.score for s in self.scores}

    @property
    def total_deviation(self) -> float:
        return float(sum(e.deviation for e in self.events))

    def ranking(self) -> list[str]:
        return [s.service for s in self.scores]

    def to_dict(self) -> dict:
        return {"window_start_ns": self.window_start_ns,
                "events": [e.to_dict() for e in self.events],
                "services": [{"service": s.service, "score": s.score} for s in self.scores]}


def analyze_window(window_start_ns: int, spans: Sequence[SpanRecord], logs: Sequence[LogRecord],
                   template_ids: Sequence[int], templates, readings: Sequence[MetricReading],
                   profile: ReferenceProfile, config: RcaConfig = RcaConfig(),
                   services: Optional[Iterable[str]] = None) -> RcaReport:
    events = (mine_metric_patterns(readings, profile, config)
              + mine_trace_patterns(spans, profile, config)
              + mine_log_patterns(logs, template_ids, templates, profile, config))
    ranked = rank_patterns(events)
    scores = score_services(ranked, profile.services if services is None else services)
    return RcaReport(window_start_ns, ranked, scores)
