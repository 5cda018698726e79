"""Always-on per-window detectors for logs, traces and metrics.

The union of their flags decides whether root-cause analysis and the
analysis-guided sampler run for a window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import Level, LogRecord, MetricVector, SpanRecord, Window
from .profile import ReferenceProfile
from .wire import DataError

TRACE_RULES = ("window_mean", "span")


class UnknownService(DataError):
    """A service has telemetry in the window but no fault-free baseline."""


class DimensionMismatch(DataError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    w: float = 0.8
    k_log: float = 3.0
    k_trace: float = 3.0
    trace_rule: str = "window_mean"

    def __post_init__(self) -> None:
        if not 0.0 <= self.w <= 1.0:
            raise ValueError("w must lie in [0, 1]")
        for name in ("k_log", "k_trace"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.trace_rule not in TRACE_RULES:
            raise ValueError(f"trace_rule must be one of {TRACE_RULES}")


@dataclass(frozen=True, order=True)
class LogFlag:
    service: str
    r: float
    r_bar: float
    sigma: float


@dataclass(frozen=True, order=True)
class TraceFlag:
    service: str
    operation: str
    z: float


@dataclass(frozen=True, order=True)
class MetricFlag:
    service: str
    re: float
    rho: float


@dataclass(frozen=True)
class DetectionReport:
    window: Window
    log_flags: tuple[LogFlag, ...] = ()
    trace_flags: tuple[TraceFlag, ...] = ()
    metric_flags: tuple[MetricFlag, ...] = ()
    skipped_spans: int = 0

    @property
    def anomalous(self) -> bool:
        return bool(self.log_flags or self.trace_flags or self.metric_flags)

    @property
    def flagged_services(self) -> set[str]:
        return {f.service for f in (*self.log_flags, *self.trace_flags, *self.metric_flags)}

    def to_dict(self) -> dict:
        return {
            "window_start_ns": self.window.start_ns,
            "window_length_ns": self.window.length_ns,
            "anomalous": self.anomalous,
            "log_flags": [vars(f) for f in self.log_flags],
            "trace_flags": [vars(f) for f in self.trace_flags],
            "metric_flags": [vars(f) for f in self.metric_flags],
            "skipped_spans": self.skipped_spans,
        }


def weighted_rate(n_error: float, n_warn: float, w: float) -> float:
    return w * n_error + (1.0 - w) * n_warn


def detect_logs(logs: Iterable[LogRecord], profile: ReferenceProfile, w: float = 0.8,
                k: float = 3.0) -> tuple[LogFlag, ...]:
    """Flag services whose weighted ERROR/WARN count exceeds the baseline by more than k sigma."""
    if not 0.0 <= w <= 1.0:
        raise ValueError("w must lie in [0, 1]")
    if k <= 0:
        raise ValueError("k must be > 0")
    counts: dict[str, list[int]] = {}
    for log in logs:
        c = counts.setdefault(log.service, [0, 0])
        if log.level is Level.ERROR:
            c[0] += 1
        elif log.level is Level.WARN:
            c[1] += 1
    flags = []
    floor = profile.config.rate_sigma_floor
    for service in sorted(counts):
        base = profile.log_rate_base.get(service)
        if base is None:
            raise UnknownService(f"no log baseline for service {service!r}")
        r = weighted_rate(counts[service][0], counts[service][1], w)
        r_bar, sigma = base.rate(w, floor)
        if r - r_bar > k * sigma:
            flags.append(LogFlag(service, r, r_bar, sigma))
    return tuple(flags)


def detect_traces(spans: Sequence[SpanRecord], profile: ReferenceProfile, k: float = 3.0,
                  rule: str = "window_mean") -> tuple[tuple[TraceFlag, ...], int]:
    """One-sided k-sigma latency rule. Returns (flags, number of skipped spans).

    ``span`` flags a service owning any span with (duration - mu) / sigma > k.
    ``window_mean`` applies the same test to each operation's mean duration in
    the window, with the standard error sigma / sqrt(n) as the scale.
    """
    if k <= 0:
        raise ValueError("k must be > 0")
    if rule not in TRACE_RULES:
        raise ValueError(f"unknown trace rule {rule!r}")
    groups: dict[tuple[str, str], list[float]] = {}
    skipped = 0
    for sp in spans:
        key = (sp.service, sp.operation)
        if key not in profile.span_stats:
            skipped += 1
            continue
        groups.setdefault(key, []).append(sp.duration_ms)
    best: dict[str, TraceFlag] = {}
    for key in sorted(groups):
        mu, sigma = profile.span_stats[key]
        d = np.asarray(groups[key])
        if rule == "span":
            z = float((d.max() - mu) / sigma)
        else:
            z = float((d.mean() - mu) / (sigma / math.sqrt(d.size)))
        if z > k:
            cur = best.get(key[0])
            if cur is None or z > cur.z:
                best[key[0]] = TraceFlag(key[0], key[1], z)
    return tuple(best[s] for s in sorted(best)), skipped


def detect_metrics(vectors: Iterable[MetricVector], profile: ReferenceProfile) -> tuple[MetricFlag, ...]:
    """Flag services whose window vector's PCA reconstruction error exceeds rho."""
    flags = []
    for v in sorted(vectors, key=lambda v: v.service):
        model = profile.pca.get(v.service)
        if model is None:
            continue
        x = np.asarray(v.values, dtype=np.float64)
        if x.shape != (model.dim,):
            raise DimensionMismatch(
                f"{v.service}: vector has {x.size} dimensions, model expects {model.dim}")
        re = float(model.reconstruction_error(x))
        if re > model.rho:
            flags.append(MetricFlag(v.service, re, model.rho))
    return tuple(flags)


def detect_window(window: Window, spans: Sequence[SpanRecord], logs: Sequence[LogRecord],
                  vectors: Sequence[MetricVector], profile: ReferenceProfile,
                  config: DetectorConfig = DetectorConfig()) -> DetectionReport:
    trace_flags, skipped = detect_traces(spans, profile, config.k_trace, config.trace_rule)
    return DetectionReport(
        window=window,
        log_flags=detect_logs(logs, profile, config.w, config.k_log),
        trace_flags=trace_flags,
        metric_flags=detect_metrics(vectors, profile),
        skipped_spans=skipped,
    )
