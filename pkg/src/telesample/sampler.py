"""Edge-case and analysis-guided sampling probabilities, and budgeted selection.

Every function here is pure. The scalar forms document the arithmetic; the
pipeline uses the array forms (``np.ndarray`` in, ``np.ndarray`` out).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .model import CallPath, SpanRecord
from .profile import ReferenceProfile

MODES = ("rank", "bernoulli")
COMPOSITIONS = ("multiply", "max")
VARIANTS = ("full", "edge_only", "analysis_only", "uniform")


class InactiveAnalysis(RuntimeError):
    """Analysis probabilities were requested for a window that is not anomalous."""


class EmptyReferenceSet(ValueError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    budget: float = 0.05
    w_t: float = 0.5
    w_l: float = 0.5
    mode: str = "rank"
    composition: str = "multiply"
    variant: str = "full"
    z_unknown: float = 3.0
    eps: float = 1e-6

    def __post_init__(self) -> None:
        if not 0.0 < self.budget <= 1.0:
            raise ValueError("budget must lie in (0, 1]")
        for name in ("w_t", "w_l"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.composition not in COMPOSITIONS:
            raise ValueError(f"composition must be one of {COMPOSITIONS}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.z_unknown < 0:
            raise ValueError("z_unknown must be >= 0")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")


@dataclass
class SamplingDecision:
    subject: str
    kind: str                     # "trace" or "log"
    window_start_ns: int
    p_edge: float
    p_analysis: Optional[float]
    p_analysis_propagated: Optional[float]
    p_final: float
    selected: bool
    evidence: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "kind": self.kind,
            "window_start_ns": self.window_start_ns,
            "p_edge": self.p_edge,
            "p_analysis": self.p_analysis,
            "p_analysis_propagated": self.p_analysis_propagated,
            "p_final": self.p_final,
            "selected": self.selected,
            "evidence": self.evidence,
        }


# largest double below 1; tanh rounds to exactly 1.0 once x passes about 19
P_MAX = float(np.nextafter(1.0, 0.0))


def g(x):
    """2 / (1 + exp(-2x)) - 1, evaluated as tanh and kept below 1."""
    if isinstance(x, np.ndarray):
        return np.minimum(np.tanh(x), P_MAX)
    return min(math.tanh(x), P_MAX)


def jaccard(a: frozenset | set, b: frozenset | set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def topo_score(paths: Iterable[CallPath], reference: Iterable[CallPath]) -> tuple[float, Optional[tuple[CallPath, CallPath]]]:
    """1 - max Jaccard similarity of each path to the reference paths, maximized over paths.

    Returns (score, (deviant path, nearest reference path)) with evidence only
    when the score is positive.
    """
    refs = [(r, frozenset(r.elements)) for r in reference]
    if not refs:
        raise EmptyReferenceSet("reference path set is empty")
    ref_exact = {s for _, s in refs}
    best_score, evidence = 0.0, None
    for c in paths:
        cs = frozenset(c.elements)
        if cs in ref_exact:
            continue
        sim, nearest = -1.0, None
        for r, rs in refs:
            s = jaccard(cs, rs)
            if s > sim:
                sim, nearest = s, r
        score = 1.0 - sim
        if score > best_score:
            best_score, evidence = score, (c, nearest)
    return best_score, evidence


def behavior_score_trace(spans: Iterable[SpanRecord], profile: ReferenceProfile, z_unknown: float = 3.0) -> float:
    """Largest |duration - mu| / sigma over the trace's spans."""
    best = 0.0
    for sp in spans:
        st = profile.span_stats.get((sp.service, sp.operation))
        z = z_unknown if st is None else abs(sp.duration_ms - st[0]) / st[1]
        best = max(best, z)
    return best


def edge_prob_trace(topo, behavior):
    if isinstance(topo, np.ndarray) or isinstance(behavior, np.ndarray):
        return g(np.maximum(np.tanh(topo), behavior))
    return g(max(math.tanh(topo), behavior))


def log_rarity(p_prime, eps: float = 1e-6):
    """-ln(p' + eps), clamped at 0."""
    if isinstance(p_prime, np.ndarray):
        return np.maximum(-np.log(p_prime + eps), 0.0)
    return max(-math.log(p_prime + eps), 0.0)


def edge_prob_log(p_prime, eps: float = 1e-6):
    """Edge probability of a log whose template has fault-free frequency ``p_prime`` (0 if unseen)."""
    return g(log_rarity(p_prime, eps))


def analysis_prob_trace(services: Iterable[str], phi: dict[str, float], anomalous: bool = True) -> float:
    if not anomalous:
        raise InactiveAnalysis("window is not anomalous")
    return g(max((phi.get(s, 0.0) for s in services), default=0.0))


def analysis_prob_log(service: str, phi: dict[str, float], anomalous: bool = True) -> float:
    if not anomalous:
        raise InactiveAnalysis("window is not anomalous")
    return g(phi.get(service, 0.0))


def propagate_trace_to_log(pa_log, pa_trace, w_t: float = 0.5):
    """max(p_a(l), 1 - (1 - p_a(t_l)) ** w_t)."""
    if isinstance(pa_log, np.ndarray) or isinstance(pa_trace, np.ndarray):
        return np.maximum(pa_log, 1.0 - (1.0 - np.asarray(pa_trace)) ** w_t)
    return max(pa_log, 1.0 - (1.0 - pa_trace) ** w_t)


def propagate_log_to_trace(pa_trace, pa_logs, w_l: float = 0.5):
    """max(p_a(t), 1 - (1 - max_l p_a(l)) ** w_l); an empty log set leaves p_a(t) unchanged.

    For arrays, ``pa_logs`` is the per-trace maximum with NaN marking traces
    without correlated logs.
    """
    if isinstance(pa_trace, np.ndarray):
        m = np.asarray(pa_logs, dtype=np.float64)
        lifted = 1.0 - (1.0 - np.nan_to_num(m, nan=0.0)) ** w_l
        return np.where(np.isnan(m), pa_trace, np.maximum(pa_trace, lifted))
    logs = list(pa_logs)
    if not logs:
        return pa_trace
    return max(pa_trace, 1.0 - (1.0 - max(logs)) ** w_l)


def compose(p_edge, p_analysis, anomalous: bool, composition: str = "multiply"):
    """p_e in normal windows; p_e * p_a' (or max) in anomalous ones."""
    if not anomalous or p_analysis is None:
        return p_edge
    if composition == "max":
        return np.maximum(p_edge, p_analysis) if isinstance(p_edge, np.ndarray) else max(p_edge, p_analysis)
    return p_edge * p_analysis


# Probabilities close to 1 are carried as lq = log(1 - p). tanh saturates to
# exactly 1.0 in double precision near x = 19, and anomaly scores routinely
# exceed that, so ranking on p itself would turn strict orderings into ties.


def log1m_g(x):
    """log(1 - g(x)) for x >= 0, accurate for large x."""
    if isinstance(x, np.ndarray):
        return math.log(2.0) - 2.0 * x - np.log1p(np.exp(-2.0 * x))
    return math.log(2.0) - 2.0 * x - math.log1p(math.exp(-2.0 * x))


def p_from_lq(lq):
    """p = 1 - exp(lq)."""
    if isinstance(lq, np.ndarray):
        return np.minimum(-np.expm1(lq), P_MAX)
    return min(-math.expm1(lq), P_MAX)


def compose_lq(lq_edge: np.ndarray, lq_analysis: np.ndarray, composition: str = "multiply") -> np.ndarray:
    """Complement-log form of ``compose`` for an anomalous window."""
    if composition == "max":
        return np.minimum(lq_edge, lq_analysis)
    # 1 - p_e p_a = q_e + q_a (1 - q_e)
    with np.errstate(divide="ignore"):
        return np.logaddexp(lq_edge, lq_analysis + np.log1p(-np.exp(lq_edge)))


def budget_size(n: int, budget: float) -> int:
    # guard against ceil(0.05 * 100) == 6 from binary rounding
    return min(n, int(math.ceil(round(budget * n, 9))))


def rank_order(ids: Sequence[str], p: np.ndarray, tiebreak: Optional[np.ndarray] = None,
               lq: Optional[np.ndarray] = None) -> np.ndarray:
    """Indexes sorted by p descending, ties by id ascending.

    ``lq`` (log(1 - p)) replaces p as the primary key when given; ``tiebreak``
    orders items whose primary keys are equal (ascending) before the id rule.
    """
    n = len(ids)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    primary = np.asarray(lq, dtype=np.float64) if lq is not None else -np.asarray(p, dtype=np.float64)
    id_rank = np.empty(n, dtype=np.int64)
    id_rank[np.argsort(np.asarray(ids, dtype=object), kind="stable")] = np.arange(n)
    keys = [id_rank] + ([np.asarray(tiebreak, dtype=np.float64)] if tiebreak is not None else []) + [primary]
    return np.lexsort(keys)


def select_within_budget(ids: Sequence[str], p: np.ndarray, budget: float, mode: str = "rank",
                         seed: int = 0, tiebreak: Optional[np.ndarray] = None,
                         lq: Optional[np.ndarray] = None) -> np.ndarray:
    """Boolean mask selecting exactly ceil(budget * N) items."""
    if not 0.0 < budget <= 1.0:
        raise ValueError("budget must lie in (0, 1]")
    n = len(ids)
    p = np.asarray(p, dtype=np.float64)
    target = budget_size(n, budget)
    order = rank_order(ids, p, tiebreak, lq)
    mask = np.zeros(n, dtype=bool)
    if mode == "rank":
        mask[order[:target]] = True
        return mask
    if mode != "bernoulli":
        raise ValueError(f"unknown mode {mode!r}")
    draw = np.random.default_rng(seed).random(n) < p
    hit = draw[order]
    chosen = order[hit][:target]
    if chosen.size < target:
        chosen = np.concatenate([chosen, order[~hit][:target - chosen.size]])
    mask[chosen] = True
    return mask
