"""Run configuration: one YAML/JSON file plus command-line overrides (flags win)."""

from __future__ import annotations

import json
import os
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .detect import TRACE_RULES, DetectorConfig
from .pipeline import PipelineConfig
from .profile import ProfileConfig
from .rca import OVERLAP_MODES, RcaConfig
from .sampler import COMPOSITIONS, MODES, VARIANTS, SamplerConfig
from .synth import ConfigError


def _opt(default: Any, help: str, *, choices: Optional[tuple] = None, nargs: Optional[str] = None,
         factory: Any = None) -> Any:
    meta = {"help": help, "choices": choices, "nargs": nargs}
    if factory is not None:
        return field(default_factory=factory, metadata=meta)
    return field(default=default, metadata=meta)


def _default_parallelism() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return os.cpu_count() or 1


@dataclass
class RunConfig:
    # paths
    scenario: Optional[str] = _opt(None, "scenario file for generate (built-in default scenario if unset)")
    fault_free_dir: Optional[str] = _opt(None, "fault-free telemetry directory for profile")
    production_dir: Optional[str] = _opt(None, "production telemetry directory for run")
    profile_path: Optional[str] = _opt(None, "reference profile file (written by profile, read by run)")
    run_dir: Optional[str] = _opt(None, "output directory of a previous run, read by eval")
    run_dirs: list[str] = _opt(None, "several run directories for eval, evaluated in parallel", nargs="+",
                               factory=list)
    ground_truth: Optional[str] = _opt(None, "ground_truth.json for eval")
    out_dir: str = _opt("out", "output directory")
    seed: Optional[int] = _opt(None, "random seed (generate falls back to the scenario's seed, others to 0)")
    parallelism: int = _opt(_default_parallelism(), "worker processes for eval")

    # profile
    window_s: float = _opt(60.0, "window length in seconds (run reuses the profile's)")
    sigma_floor_ms: float = _opt(0.01, "lower bound on span latency standard deviations (ms)")
    rate_sigma_floor: float = _opt(0.1, "lower bound on log-rate standard deviations")
    variance_target: float = _opt(0.95, "PCA explained-variance target")
    rho_sigma: float = _opt(3.0, "PCA threshold: mean + rho_sigma * std of fault-free reconstruction errors")
    rho_floor: float = _opt(1e-9, "minimum PCA threshold")
    bins: int = _opt(20, "histogram bins per metric")
    sim_threshold: float = _opt(0.5, "template miner similarity threshold")

    # detector
    w: float = _opt(0.8, "ERROR weight in the log rate (WARN gets 1 - w)")
    k_log: float = _opt(3.0, "log-rate k-sigma multiplier")
    k_trace: float = _opt(3.0, "span-latency k-sigma multiplier")
    trace_rule: str = _opt("window_mean", "span-latency rule", choices=TRACE_RULES)

    # rca
    k_w: float = _opt(0.8, "weight of the distribution term in the metric deviation")
    overlap_mode: str = _opt("one_minus", "distribution term of the metric deviation", choices=OVERLAP_MODES)
    eps_mean: float = _opt(1e-6, "denominator guard of the metric mean shift")
    eps_freq: float = _opt(1.0, "denominator guard of the log deviation")
    tau_metric: float = _opt(0.1, "minimum metric deviation kept as an event")
    tau_trace: float = _opt(0.5, "minimum trace deviation kept as an event")
    tau_log: float = _opt(0.0, "log deviation must exceed this to be kept as an event")

    # sampler
    budget: float = _opt(0.05, "fraction of items kept per window and data type, in (0, 1]")
    w_t: float = _opt(0.5, "trace-to-log propagation weight, in (0, 1]")
    w_l: float = _opt(0.5, "log-to-trace propagation weight, in (0, 1]")
    mode: str = _opt("rank", "selection mode", choices=MODES)
    composition: str = _opt("multiply", "combination of the two pillars", choices=COMPOSITIONS)
    variant: str = _opt("full", "sampler variant used by run", choices=VARIANTS)
    z_unknown: float = _opt(3.0, "z-score of spans without a baseline")
    eps: float = _opt(1e-6, "template-frequency guard in the log rarity score")

    # eval
    budgets: list[float] = _opt(None, "budgets evaluated by eval", nargs="+", factory=lambda: [0.05])
    variants: list[str] = _opt(None, "variants evaluated by eval", nargs="+", choices=VARIANTS,
                               factory=lambda: list(VARIANTS))

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.parallelism < 1:
            raise ConfigError("parallelism", "must be >= 1")
        if self.window_s <= 0:
            raise ConfigError("window_s", "must be > 0")
        if not self.budgets:
            raise ConfigError("budgets", "at least one budget is required")
        for b in self.budgets:
            if not 0.0 < b <= 1.0:
                raise ConfigError("budgets", f"{b} is outside (0, 1]")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError("variants", f"unknown variant {v!r}")
        # the module configs check their own domains; map failures to the field
        for build in (self.profile_config, self.detector_config, self.rca_config, self.sampler_config):
            try:
                build()
            except ValueError as exc:
                raise ConfigError(_field_in(str(exc)), str(exc)) from None

    def profile_config(self) -> ProfileConfig:
        return ProfileConfig(window_s=self.window_s, sigma_floor_ms=self.sigma_floor_ms,
                             rate_sigma_floor=self.rate_sigma_floor, variance_target=self.variance_target,
                             rho_sigma=self.rho_sigma, rho_floor=self.rho_floor, bins=self.bins,
                             sim_threshold=self.sim_threshold)

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(w=self.w, k_log=self.k_log, k_trace=self.k_trace, trace_rule=self.trace_rule)

    def rca_config(self) -> RcaConfig:
        return RcaConfig(k_w=self.k_w, overlap_mode=self.overlap_mode, eps_mean=self.eps_mean,
                         eps_freq=self.eps_freq, tau_metric=self.tau_metric, tau_trace=self.tau_trace,
                         tau_log=self.tau_log)

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(budget=self.budget, w_t=self.w_t, w_l=self.w_l, mode=self.mode,
                             composition=self.composition, variant=self.variant,
                             z_unknown=self.z_unknown, eps=self.eps)

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(self.detector_config(), self.rca_config(), self.sampler_config(),
                              self.seed_or(0))

    def seed_or(self, fallback: int) -> int:
        return fallback if self.seed is None else self.seed

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _field_in(msg: str) -> str:
    names = [f.name for f in fields(RunConfig)]
    hits = [n for n in names if msg.startswith(n + " ") or msg.startswith(n + ":")]
    return hits[0] if hits else "config"


def field_default(f) -> Any:
    if f.default is not MISSING:
        return f.default
    return f.default_factory()


_INT_FIELDS = {"seed", "parallelism", "bins"}


def _coerce(f, value: Any) -> Any:
    if value is None:
        return None
    name = f.name
    try:
        if name in ("budgets",):
            vals = value if isinstance(value, list) else [value]
            return [float(v) for v in vals]
        if name in ("variants", "run_dirs"):
            vals = value if isinstance(value, list) else [value]
            return [str(v) for v in vals]
        if name in _INT_FIELDS:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        default = field_default(f)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"invalid value {value!r}") from None


def merge(base: Mapping[str, Any], overrides: Mapping[str, Any]) -> RunConfig:
    """RunConfig from file values, then overrides; unknown keys are rejected."""
    known = {f.name: f for f in fields(RunConfig)}
    values: dict[str, Any] = {}
    for source in (base, overrides):
        for key, value in source.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(key, "unknown configuration field")
            values[key] = _coerce(known[key], value)
    return RunConfig(**values)


def load_config_file(path: Path | str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError("config", f"configuration file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"cannot parse {p}: {exc}") from None
    if not isinstance(data, Mapping):
        raise ConfigError("config", "top level must be a mapping")
    return dict(data)


def load_run_config(path: Optional[Path | str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    base = load_config_file(path) if path is not None else {}
    return merge(base, overrides or {})
