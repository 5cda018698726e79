"""Command-line entry point: generate, profile, run, eval.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

from .config import RunConfig, field_default, load_config_file, merge
from .evaluation import BenchmarkResult, evaluate_analysis, write_results_csv
from .pipeline import analyze, run, write_run_outputs
from .profile import DegenerateData, ReferenceProfile, build_profile
from .synth import ConfigError, GroundTruth, Scenario, load_scenario, write_outputs
from .wire import DataError, load_telemetry

log = logging.getLogger("telesample")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
RUN_CONFIG_FILE = "config.json"

# positional argument of each subcommand -> RunConfig field
_POSITIONAL = {
    "generate": ("scenario", "?", "scenario file"),
    "profile": ("fault_free_dir", "?", "fault-free telemetry directory"),
    "run": ("production_dir", "?", "production telemetry directory"),
    "eval": ("run_dirs", "*", "run output directories"),
}


def _flag_type(f):
    if f.name in ("seed", "parallelism", "bins"):
        return int
    default = field_default(f)
    if f.name == "budgets" or isinstance(default, float):
        return float
    return str


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=argparse.SUPPRESS, metavar="FILE",
                        help="YAML or JSON file with RunConfig fields; flags override it")
    for f in fields(RunConfig):
        if f.name == "run_dirs":
            continue
        meta = f.metadata
        kwargs = dict(dest=f.name, default=argparse.SUPPRESS, type=_flag_type(f),
                      help=f"{meta['help']} (default: {field_default(f)})")
        if meta.get("choices"):
            kwargs["choices"] = meta["choices"]
        if meta.get("nargs"):
            kwargs["nargs"] = meta["nargs"]
        parser.add_argument("--" + f.name.replace("_", "-"), **kwargs)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _add_config_flags(common)
    parser = argparse.ArgumentParser(
        prog="telesample", parents=[common],
        description="Anomaly-aware sampling of microservice traces and logs.",
        epilog="Every option may also be given after the subcommand. Exit codes: 0 ok, 2 config error, 3 data error.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "generate": "write synthetic fault-free and production telemetry plus ground truth",
        "profile": "build a reference profile from fault-free telemetry",
        "run": "detect, analyze and sample production telemetry",
        "eval": "score run outputs against ground truth for several budgets and variants",
    }
    for name, (dest, nargs, help_) in _POSITIONAL.items():
        p = sub.add_parser(name, parents=[common], help=helps[name], description=helps[name])
        p.add_argument("positional", nargs=nargs, default=None, metavar=dest.upper(), help=help_)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {k: v for k, v in vars(args).items() if k not in ("config", "command", "positional", "verbose")}
    pos = getattr(args, "positional", None)
    if pos not in (None, []):
        values[_POSITIONAL[args.command][0]] = pos
    base = load_config_file(args.config) if getattr(args, "config", None) else {}
    return merge(base, values)


def _require(cfg: RunConfig, name: str) -> str:
    value = getattr(cfg, name)
    if not value:
        raise ConfigError(name, "is required for this command")
    return value


def cmd_generate(cfg: RunConfig) -> None:
    scenario = load_scenario(cfg.scenario) if cfg.scenario else Scenario()
    seed = cfg.seed_or(scenario.seed)
    ff, prod, truth = scenario.generate(seed)
    write_outputs(cfg.out_dir, ff, prod, truth)
    log.info("generated %d/%d spans, %d/%d logs (fault-free/production), %d fault cases",
             len(ff.spans), len(prod.spans), len(ff.logs), len(prod.logs), len(truth.cases))


def _profile_path(cfg: RunConfig) -> Path:
    return Path(cfg.profile_path) if cfg.profile_path else Path(cfg.out_dir) / "profile.json"


def cmd_profile(cfg: RunConfig) -> None:
    tel = load_telemetry(_require(cfg, "fault_free_dir"))
    profile = build_profile(tel, cfg.profile_config())
    out = _profile_path(cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    profile.save(out)
    log.info("profile over %d windows written to %s", profile.n_windows, out)


def cmd_run(cfg: RunConfig) -> None:
    prod_dir = _require(cfg, "production_dir")
    profile_path = _profile_path(cfg)
    profile = ReferenceProfile.load(profile_path)
    prod = load_telemetry(prod_dir)
    analysis, result = run(prod, profile, cfg.pipeline_config())
    out = Path(cfg.out_dir)
    write_run_outputs(out, analysis, result)
    # enough to re-run the analysis from eval
    cfg.production_dir = str(Path(prod_dir).resolve())
    cfg.profile_path = str(profile_path.resolve())
    cfg.save(out / RUN_CONFIG_FILE)
    n_anom = sum(1 for w in analysis.windows if w.anomalous)
    log.info("%d windows, %d anomalous; kept %d traces and %d logs", len(analysis.windows), n_anom,
             int(result.trace_selected.sum()), int(result.log_selected.sum()))


def _ground_truth_for(run_cfg: RunConfig, explicit: Optional[str]) -> Path:
    if explicit:
        path = Path(explicit)
    elif run_cfg.production_dir:
        # generator layout: <out>/production next to <out>/ground_truth.json
        path = Path(run_cfg.production_dir).parent / "ground_truth.json"
    else:
        raise ConfigError("ground_truth", "is required when the run has no production directory")
    if not path.exists():
        raise FileNotFoundError(f"ground truth not found: {path}")
    return path


def evaluate_run(run_dir: str, cfg: RunConfig) -> list[BenchmarkResult]:
    """Re-analyze one run's inputs with its recorded configuration and score every budget and variant."""
    cfg_path = Path(run_dir) / RUN_CONFIG_FILE
    if not cfg_path.exists():
        raise FileNotFoundError(f"run configuration not found: {cfg_path}")
    run_cfg = merge(load_config_file(cfg_path), {})
    truth = GroundTruth.load(_ground_truth_for(run_cfg, cfg.ground_truth))
    profile = ReferenceProfile.load(_require(run_cfg, "profile_path"))
    prod = load_telemetry(_require(run_cfg, "production_dir"))
    pcfg = run_cfg.pipeline_config()
    analysis = analyze(prod, profile, pcfg)
    return evaluate_analysis(analysis, truth, Path(run_dir).name, cfg.budgets, cfg.variants, pcfg,
                             pcfg.seed)


def cmd_eval(cfg: RunConfig) -> None:
    run_dirs = cfg.run_dirs or ([cfg.run_dir] if cfg.run_dir else [])
    if not run_dirs:
        raise ConfigError("run_dirs", "at least one run directory is required")
    if cfg.ground_truth and len(run_dirs) > 1:
        raise ConfigError("ground_truth", "cannot be shared by several run directories")
    if cfg.parallelism > 1 and len(run_dirs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.parallelism, len(run_dirs))) as pool:
            chunks = list(pool.map(evaluate_run, run_dirs, [cfg] * len(run_dirs)))
    else:
        chunks = [evaluate_run(d, cfg) for d in run_dirs]
    results = [r for c in chunks for r in c]
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_results_csv(out / "results.csv", results)
    log.info("%d result rows written to %s", len(results), out / "results.csv")


COMMANDS = {"generate": cmd_generate, "profile": cmd_profile, "run": cmd_run, "eval": cmd_eval}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"telesample: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DegenerateData, FileNotFoundError) as exc:
        print(f"telesample: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
