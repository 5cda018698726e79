"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--traces 20000] [--repeat 5] [--end-to-end]

Each kernel runs on identical random inputs under both backends; the table
reports the best of ``--repeat`` runs. ``--end-to-end`` also times a full
analyze + sample pass on generated telemetry, once per backend, in separate
interpreters so the backend is chosen at import as in normal use.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from telesample.kernels import _pykernels as py
from telesample.kernels import native


def random_forest(rng: np.random.Generator, n_traces: int, max_spans: int = 12):
    sizes = rng.integers(1, max_spans + 1, n_traces)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    parent = np.empty(offsets[-1], dtype=np.int64)
    for t in range(n_traces):
        lo, n = offsets[t], sizes[t]
        parent[lo] = -1
        if n > 1:
            parent[lo + 1:lo + n] = (rng.random(n - 1) * np.arange(1, n)).astype(np.int64)
    elem = rng.integers(0, 60, offsets[-1]).astype(np.int64)
    return offsets, parent, elem


def random_sets(rng: np.random.Generator, n: int, universe: int = 60, max_size: int = 8):
    sizes = rng.integers(1, max_size + 1, n)
    flat = [np.unique(rng.integers(0, universe, s)) for s in sizes]
    offsets = np.concatenate([[0], np.cumsum([len(f) for f in flat])]).astype(np.int64)
    return offsets, np.concatenate(flat).astype(np.int64)


def best_of(fn, args, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(n_traces: int, seed: int):
    rng = np.random.default_rng(seed)
    forest = random_forest(rng, n_traces)
    n_spans = int(forest[0][-1])
    n_stats = 200
    span_args = (forest[0], rng.integers(-1, n_stats, n_spans).astype(np.int64),
                 rng.lognormal(3.0, 1.0, n_spans), rng.uniform(5, 50, n_stats),
                 rng.uniform(1, 10, n_stats), rng.uniform(5, 50, n_stats), 3.0)
    queries = random_sets(rng, max(1, n_traces // 4))
    refs = random_sets(rng, 150)
    return {
        f"path_hashes ({n_spans} spans)": ("path_hashes", forest),
        f"span_scores ({n_spans} spans)": ("span_scores", span_args),
        f"topo_scores ({len(queries[0]) - 1} x {len(refs[0]) - 1} sets)": ("topo_scores", (*queries, *refs)),
    }


def end_to_end(backend: str) -> float:
    code = (
        "import time\n"
        "from telesample.synth import Scenario, FaultSpec\n"
        "from telesample.profile import build_profile\n"
        "from telesample.pipeline import analyze, sample, PipelineConfig\n"
        "sc = Scenario(request_rate=25.0, fault_free_duration=1200.0, production_duration=600.0, log_scale=2.2,\n"
        "              faults=[FaultSpec('ErrorReturn', 'cart', 120.0, 420.0, 0.5)], seed=1)\n"
        "ff, prod, _ = sc.generate()\n"
        "p = build_profile(ff)\n"
        "t0 = time.perf_counter()\n"
        "a = analyze(prod, p)\n"
        "sample(a, PipelineConfig().sampler)\n"
        "print(time.perf_counter() - t0)\n"
    )
    env = dict(os.environ, TELESAMPLE_PURE_PYTHON="1" if backend == "python" else "0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--traces", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args(argv)
    if native is None:
        print("compiled kernels are not available; build with `pip install --no-build-isolation -e .`")
        return 1

    print(f"{'kernel':<42} {'cython (ms)':>12} {'python (ms)':>12} {'speedup':>8}")
    for label, (name, kargs) in kernel_cases(args.traces, args.seed).items():
        t_c = best_of(getattr(native, name), kargs, args.repeat)
        t_p = best_of(getattr(py, name), kargs, args.repeat)
        print(f"{label:<42} {t_c * 1e3:>12.2f} {t_p * 1e3:>12.2f} {t_p / t_c:>7.1f}x")
    if args.end_to_end:
        t_c, t_p = end_to_end("cython"), end_to_end("python")
        print(f"{'analyze + sample, 10 min of telemetry':<42} {t_c * 1e3:>12.0f} {t_p * 1e3:>12.0f} "
              f"{t_p / t_c:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
