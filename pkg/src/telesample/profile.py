"""Fault-free reference statistics: latency, call paths, templates, log rates, metrics, PCA."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .ingest import (
    ElementIndex,
    TemplateMiner,
    aggregate_metrics,
    assign_templates,
    build_trace_batch,
)
from .model import NS_PER_S, CallPath, Level, LogTemplate, Telemetry
from .wire import DataError

PROFILE_VERSION = 1


class EmptyPhase(DataError):
    pass


class MissingService(DataError):
    pass


class DegenerateData(ValueError):
    """All training vectors are identical. ``model`` holds the k=0 fallback."""

    def __init__(self, model: "PcaModel"):
        self.model = model
        super().__init__("training vectors are all identical; PCA has no components")


@dataclass(frozen=True)
class ProfileConfig:
    window_s: float = 60.0
    sigma_floor_ms: float = 0.01
    rate_sigma_floor: float = 0.1
    variance_target: float = 0.95
    rho_sigma: float = 3.0
    rho_floor: float = 1e-9
    bins: int = 20
    sim_threshold: float = 0.5

    def __post_init__(self) -> None:
        for name in ("window_s", "sigma_floor_ms", "rate_sigma_floor", "rho_floor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not 0.0 < self.variance_target <= 1.0:
            raise ValueError("variance_target must lie in (0, 1]")
        if self.rho_sigma < 0:
            raise ValueError("rho_sigma must be >= 0")
        if self.bins < 1:
            raise ValueError("bins must be >= 1")
        if not 0.0 < self.sim_threshold <= 1.0:
            raise ValueError("sim_threshold must lie in (0, 1]")

    @property
    def window_ns(self) -> int:
        return int(round(self.window_s * NS_PER_S))


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray          # (D,)
    components: np.ndarray    # (D, k), orthonormal columns
    rho: float
    explained: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def k(self) -> int:
        return self.components.shape[1]

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def reconstruct_centered(self, x: np.ndarray) -> np.ndarray:
        xc = np.asarray(x, dtype=np.float64) - self.mean
        return xc @ self.components @ self.components.T

    def reconstruction_error(self, x: np.ndarray) -> np.ndarray | float:
        """Squared distance between the centered sample and its projection."""
        xc = np.asarray(x, dtype=np.float64) - self.mean
        resid = xc - xc @ self.components @ self.components.T
        return np.sum(resid * resid, axis=-1)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "components": self.components.T.tolist(),
                "dim": self.dim, "k": self.k, "rho": self.rho,
                "explained": self.explained.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        dim = int(d["dim"])
        comps = np.array(d["components"], dtype=np.float64).reshape(int(d["k"]), dim).T
        return cls(np.array(d["mean"], dtype=np.float64), comps, float(d["rho"]),
                   np.array(d.get("explained", []), dtype=np.float64))


def fit_pca(vectors, variance_target: float = 0.95, rho_sigma: float = 3.0,
            rho_floor: float = 1e-9) -> PcaModel:
    """PCA by covariance eigendecomposition.

    Keeps the fewest components whose cumulative explained variance reaches
    ``variance_target``. Components are sorted by decreasing eigenvalue and
    signed so their largest-magnitude entry is positive. The threshold is
    mean + ``rho_sigma`` standard deviations of the training errors, floored
    at ``rho_floor``.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 1:
        raise ValueError(f"need at least 2 training vectors of dimension >= 1, got shape {x.shape}")
    n, dim = x.shape
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    total = evals.sum()
    if total <= 0.0 or np.allclose(xc, 0.0):
        raise DegenerateData(PcaModel(mean, np.zeros((dim, 0)), rho_floor, np.zeros(0)))
    ratio = np.cumsum(evals) / total
    k = int(np.searchsorted(ratio, variance_target - 1e-12) + 1)
    k = min(k, dim)
    comps = evecs[:, :k].copy()
    flip = comps[np.argmax(np.abs(comps), axis=0), np.arange(k)] < 0
    comps[:, flip] *= -1.0
    model = PcaModel(mean, comps, rho_floor, evals / total)
    errs = model.reconstruction_error(x)
    rho = max(float(errs.mean() + rho_sigma * errs.std()), rho_floor)
    return PcaModel(mean, comps, rho, evals / total)


@dataclass(frozen=True)
class MetricHistogram:
    edges: np.ndarray   # (B+1,)
    probs: np.ndarray   # (B,)
    mean: float

    def distribution(self, values: np.ndarray) -> np.ndarray:
        """Histogram of ``values`` on these edges; out-of-range mass lands in the edge bins."""
        return histogram_on(self.edges, values)

    def to_dict(self) -> dict:
        return {"edges": self.edges.tolist(), "probs": self.probs.tolist(), "mean": self.mean}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricHistogram":
        return cls(np.array(d["edges"]), np.array(d["probs"]), float(d["mean"]))


def histogram_on(edges: np.ndarray, values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    b = len(edges) - 1
    if v.size == 0:
        return np.zeros(b)
    idx = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, b - 1)
    return np.bincount(idx, minlength=b) / v.size


def fit_histogram(values, bins: int = 20) -> MetricHistogram:
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise ValueError("no finite values")
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    return MetricHistogram(edges, histogram_on(edges, v), float(v.mean()))


@dataclass(frozen=True)
class LogRateBase:
    """Per-window ERROR/WARN count moments; the weighted rate follows for any weight."""

    mean_error: float
    mean_warn: float
    var_error: float
    var_warn: float
    cov: float

    def rate(self, w: float, sigma_floor: float) -> tuple[float, float]:
        mean = w * self.mean_error + (1 - w) * self.mean_warn
        var = w * w * self.var_error + (1 - w) ** 2 * self.var_warn + 2 * w * (1 - w) * self.cov
        return mean, max(float(np.sqrt(max(var, 0.0))), sigma_floor)


@dataclass
class ReferenceProfile:
    window_ns: int
    services: tuple[str, ...]
    metric_names: tuple[str, ...]
    span_stats: dict[tuple[str, str], tuple[float, float]]
    span_ref_lat: dict[tuple[str, str], float]
    span_counts: dict[tuple[str, str], int]
    path_set: frozenset[CallPath]
    templates: list[LogTemplate]
    template_freq: dict[int, float]
    template_rate: dict[int, float]
    log_rate_base: dict[str, LogRateBase]
    metric_ref: dict[tuple[str, str], MetricHistogram]
    pca: dict[str, PcaModel]
    config: ProfileConfig = field(default_factory=ProfileConfig)
    n_windows: int = 0

    def miner(self) -> TemplateMiner:
        """A fresh miner seeded with the fault-free templates."""
        return TemplateMiner(self.config.sim_threshold, self.templates)

    def span_arrays(self, elements: ElementIndex) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Reference (mu, sigma, median) arrays aligned with ``elements``; stat index -1 if unknown."""
        n = len(elements)
        idx = np.full(n, -1, dtype=np.int64)
        mu = np.zeros(n)
        sigma = np.ones(n)
        ref = np.ones(n)
        for i in range(n):
            e = elements[i]
            st = self.span_stats.get(e)
            if st is not None:
                idx[i] = i
                mu[i], sigma[i] = st
                ref[i] = self.span_ref_lat[e]
        return idx, mu, sigma, ref

    def to_dict(self) -> dict:
        c = self.config
        return {
            "version": PROFILE_VERSION,
            "window_ns": self.window_ns,
            "n_windows": self.n_windows,
            "services": list(self.services),
            "metric_names": list(self.metric_names),
            "config": {k: getattr(c, k) for k in c.__dataclass_fields__},
            "span_stats": [
                {"service": s, "operation": o, "mu": mu, "sigma": sd,
                 "ref_lat": self.span_ref_lat[(s, o)], "count": self.span_counts[(s, o)]}
                for (s, o), (mu, sd) in sorted(self.span_stats.items())
            ],
            "path_set": sorted(p.to_list() for p in self.path_set),
            "templates": [t.to_dict() for t in self.templates],
            "template_freq": {str(k): v for k, v in sorted(self.template_freq.items())},
            "template_rate": {str(k): v for k, v in sorted(self.template_rate.items())},
            "log_rate_base": {s: vars(b) for s, b in sorted(self.log_rate_base.items())},
            "metric_ref": [
                {"service": s, "metric": m, **h.to_dict()}
                for (s, m), h in sorted(self.metric_ref.items())
            ],
            "pca": {s: m.to_dict() for s, m in sorted(self.pca.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceProfile":
        if d.get("version") != PROFILE_VERSION:
            raise DataError(f"unsupported profile version {d.get('version')!r}")
        stats, ref, counts = {}, {}, {}
        for row in d["span_stats"]:
            key = (row["service"], row["operation"])
            stats[key] = (float(row["mu"]), float(row["sigma"]))
            ref[key] = float(row["ref_lat"])
            counts[key] = int(row["count"])
        return cls(
            window_ns=int(d["window_ns"]),
            services=tuple(d["services"]),
            metric_names=tuple(d["metric_names"]),
            span_stats=stats,
            span_ref_lat=ref,
            span_counts=counts,
            path_set=frozenset(CallPath.from_list(p) for p in d["path_set"]),
            templates=[LogTemplate.from_dict(t) for t in d["templates"]],
            template_freq={int(k): float(v) for k, v in d["template_freq"].items()},
            template_rate={int(k): float(v) for k, v in d["template_rate"].items()},
            log_rate_base={s: LogRateBase(**b) for s, b in d["log_rate_base"].items()},
            metric_ref={(r["service"], r["metric"]): MetricHistogram.from_dict(r) for r in d["metric_ref"]},
            pca={s: PcaModel.from_dict(m) for s, m in d["pca"].items()},
            config=ProfileConfig(**d["config"]),
            n_windows=int(d.get("n_windows", 0)),
        )

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> "ReferenceProfile":
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"profile not found: {p}")
        try:
            return cls.from_dict(json.loads(p.read_text()))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{p}: malformed profile: {exc}") from None


def _phase_windows(tel: Telemetry, window_ns: int) -> tuple[int, int]:
    ts = [s.start_ns for s in tel.spans] + [l.timestamp_ns for l in tel.logs] + \
         [r.timestamp_ns for r in tel.readings]
    first = min(ts) // window_ns
    last = max(ts) // window_ns
    return first, last - first + 1


def build_profile(tel: Telemetry, config: ProfileConfig = ProfileConfig(),
                  services: Optional[Sequence[str]] = None) -> ReferenceProfile:
    """Reference statistics of a fault-free phase."""
    if tel.is_empty():
        raise EmptyPhase("fault-free phase contains no telemetry")
    seen = tel.services
    if services is not None:
        missing = sorted(set(services) - seen)
        if missing:
            raise MissingService(f"no fault-free data for services: {', '.join(missing)}")
    else:
        services = sorted(seen)
    window_ns = config.window_ns
    first_w, n_windows = _phase_windows(tel, window_ns)

    # span latency statistics
    durs: dict[tuple[str, str], list[float]] = {}
    for sp in tel.spans:
        durs.setdefault((sp.service, sp.operation), []).append(sp.duration_ms)
    span_stats, span_ref, span_counts = {}, {}, {}
    for key, vals in durs.items():
        a = np.asarray(vals)
        sd = float(a.std()) if a.size >= 2 else 0.0
        span_stats[key] = (float(a.mean()), max(sd, config.sigma_floor_ms))
        span_ref[key] = float(np.median(a))
        span_counts[key] = int(a.size)

    batch = build_trace_batch(tel.spans)
    path_set = frozenset(batch.paths[p] for p in np.unique(batch.path_ids).tolist())

    # templates, frequencies and log-rate moments
    miner = TemplateMiner(config.sim_threshold)
    tids = assign_templates(tel.logs, miner)
    tpl_counts = np.bincount(tids, minlength=len(miner)) if len(tids) else np.zeros(len(miner))
    per_service_total: dict[str, int] = {}
    for tid, cnt in enumerate(tpl_counts):
        s = miner.service_of(tid)
        per_service_total[s] = per_service_total.get(s, 0) + int(cnt)
    template_freq = {tid: float(cnt) / per_service_total[miner.service_of(tid)]
                     for tid, cnt in enumerate(tpl_counts)}
    template_rate = {tid: float(cnt) / n_windows for tid, cnt in enumerate(tpl_counts)}

    svc_index = {s: i for i, s in enumerate(services)}
    err = np.zeros((len(services), n_windows))
    warn = np.zeros((len(services), n_windows))
    for log in tel.logs:
        i = svc_index.get(log.service)
        if i is None:
            continue
        w = log.timestamp_ns // window_ns - first_w
        if log.level is Level.ERROR:
            err[i, w] += 1
        elif log.level is Level.WARN:
            warn[i, w] += 1
    log_rate_base = {}
    for s, i in svc_index.items():
        e, wv = err[i], warn[i]
        log_rate_base[s] = LogRateBase(float(e.mean()), float(wv.mean()), float(e.var()),
                                       float(wv.var()), float(((e - e.mean()) * (wv - wv.mean())).mean()))

    # metric histograms and PCA
    metric_ref: dict[tuple[str, str], MetricHistogram] = {}
    pca: dict[str, PcaModel] = {}
    if tel.readings:
        by_service: dict[str, list] = {}
        for r in tel.readings:
            by_service.setdefault(r.service, []).append(r.values)
        for s, rows in by_service.items():
            arr = np.asarray(rows, dtype=np.float64)
            for j, m in enumerate(tel.metric_names):
                metric_ref[(s, m)] = fit_histogram(arr[:, j], config.bins)
        vectors = aggregate_metrics(tel.readings, tel.metric_names, window_ns,
                                    first_w * window_ns, (first_w + n_windows) * window_ns)
        per_service: dict[str, list] = {}
        for v in vectors:
            per_service.setdefault(v.service, []).append(v.values)
        for s, rows in per_service.items():
            if len(rows) < 2:
                continue
            try:
                pca[s] = fit_pca(rows, config.variance_target, config.rho_sigma, config.rho_floor)
            except DegenerateData as exc:
                pca[s] = exc.model

    return ReferenceProfile(
        window_ns=window_ns,
        services=tuple(services),
        metric_names=tuple(tel.metric_names),
        span_stats=span_stats,
        span_ref_lat=span_ref,
        span_counts=span_counts,
        path_set=path_set,
        templates=miner.templates(),
        template_freq=template_freq,
        template_rate=template_rate,
        log_rate_base=log_rate_base,
        metric_ref=metric_ref,
        pca=pca,
        config=config,
        n_windows=n_windows,
    )
