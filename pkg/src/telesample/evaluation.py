"""Coverage and root-cause ranking metrics, and the benchmark runner."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .pipeline import Analysis, PipelineConfig, analyze, sample
from .profile import build_profile
from .sampler import VARIANTS
from .synth import GroundTruth, Scenario


class EmptyLabelSet(ValueError):
    pass


class EmptyCaseSet(ValueError):
    pass


def coverage(selected: Iterable[str], labeled: Iterable[str]) -> float:
    """Fraction of labeled ids that were selected."""
    lab = set(labeled)
    if not lab:
        raise EmptyLabelSet("coverage is undefined for an empty label set")
    return len(lab.intersection(selected)) / len(lab)


def _case_hits(ranking: Sequence[str], truth: set[str], k: int) -> float:
    hits = sum(1 for i in range(min(k, len(ranking))) if ranking[i] in truth)
    return hits / min(k, len(truth))


def ac_at_k(rankings: Sequence[Sequence[str]], truths: Sequence[Iterable[str]], k: int) -> float:
    """Mean over cases of (true root causes among the top k) / min(k, |truth|)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not rankings:
        raise EmptyCaseSet("no fault cases")
    if len(rankings) != len(truths):
        raise ValueError("rankings and truths differ in length")
    total = 0.0
    for ranking, truth in zip(rankings, truths):
        t = set(truth)
        if not t:
            raise ValueError("a case has an empty root-cause set")
        total += _case_hits(ranking, t, k)
    return total / len(rankings)


def mrr(rankings: Sequence[Sequence[str]], truths: Sequence[Iterable[str]]) -> float:
    """Mean reciprocal 1-based rank of the first true root cause; 0 when it is absent."""
    if not rankings:
        return 0.0
    total = 0.0
    for ranking, truth in zip(rankings, truths):
        t = set(truth)
        for i, s in enumerate(ranking):
            if s in t:
                total += 1.0 / (i + 1)
                break
    return total / len(rankings)


@dataclass
class BenchmarkResult:
    scenario: str
    variant: str
    budget: float
    trace_coverage: Optional[float]
    log_coverage: Optional[float]
    ac1: float
    ac3: float
    mrr: float
    wall_time: float
    seed: int = 0


RESULT_COLUMNS = [f.name for f in fields(BenchmarkResult)]


def case_rankings(analysis: Analysis, truth: GroundTruth) -> list[list[str]]:
    """One service ranking per fault case (empty when no window overlapping it was analyzed)."""
    out = []
    for case in truth.cases:
        ranking = analysis.ranking_for(case.start_ns, case.end_ns)
        out.append(ranking or [])
    return out


def evaluate_analysis(analysis: Analysis, truth: GroundTruth, scenario: str, budgets: Sequence[float],
                      variants: Sequence[str], config: PipelineConfig, seed: int,
                      analysis_time: float = 0.0) -> list[BenchmarkResult]:
    rankings = case_rankings(analysis, truth)
    truths = [{c.root_cause} for c in truth.cases]
    if rankings:
        ac1, ac3, m = ac_at_k(rankings, truths, 1), ac_at_k(rankings, truths, 3), mrr(rankings, truths)
    else:
        ac1 = ac3 = m = math.nan
    results = []
    for budget in budgets:
        for variant in variants:
            if variant not in VARIANTS:
                raise ValueError(f"unknown variant {variant!r}")
            scfg = replace(config.sampler, budget=budget, variant=variant)
            t0 = time.perf_counter()
            res = sample(analysis, scfg, seed)
            elapsed = analysis_time + time.perf_counter() - t0
            tc = coverage(res.selected_trace_ids(analysis), truth.labeled_traces) if truth.labeled_traces else None
            lc = coverage(res.selected_log_ids(analysis), truth.labeled_logs) if truth.labeled_logs else None
            results.append(BenchmarkResult(scenario, variant, budget, tc, lc, ac1, ac3, m, elapsed, seed))
    return results


def _benchmark_job(sc: Scenario, seed: int, budgets: Sequence[float], variants: Sequence[str],
                   config: PipelineConfig) -> list[BenchmarkResult]:
    ff, prod, truth = sc.generate(seed)
    t0 = time.perf_counter()
    profile = build_profile(ff)
    analysis = analyze(prod, profile, config)
    elapsed = time.perf_counter() - t0
    return evaluate_analysis(analysis, truth, sc.name, budgets, variants, config, seed, elapsed)


def run_benchmark(scenarios: Sequence[Scenario], budgets: Sequence[float] = (0.05,),
                  variants: Sequence[str] = VARIANTS, seeds: Optional[Sequence[int]] = None,
                  config: PipelineConfig = PipelineConfig(), parallelism: int = 1) -> list[BenchmarkResult]:
    """Generate, profile, analyze and sample every (scenario, seed); one row per budget and variant.

    Without ``seeds`` each scenario runs once with its own seed. Rows come back
    in job order whatever the parallelism.
    """
    jobs = [(sc, seed) for sc in scenarios for seed in (seeds if seeds is not None else [sc.seed])]
    if parallelism <= 1 or len(jobs) <= 1:
        chunks = [_benchmark_job(sc, seed, budgets, variants, config) for sc, seed in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(parallelism, len(jobs))) as pool:
            futures = [pool.submit(_benchmark_job, sc, seed, budgets, variants, config) for sc, seed in jobs]
            chunks = [f.result() for f in futures]
    return [r for chunk in chunks for r in chunk]


def write_results_csv(path: Path | str, results: Sequence[BenchmarkResult]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in results:
            row = asdict(r)
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})


def mean_of(results: Sequence[BenchmarkResult], attr: str, variant: str) -> float:
    """Mean of a metric over rows of one variant, ignoring missing values."""
    vals = [getattr(r, attr) for r in results if r.variant == variant]
    vals = [v for v in vals if v is not None and not (isinstance(v, float) and math.isnan(v))]
    return sum(vals) / len(vals) if vals else math.nan
