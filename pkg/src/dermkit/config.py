"""Declarative run configuration: one JSON file drives every subcommand.

Validation collects every problem in one pass and reports them together;
flag overrides beat environment variables, which beat the file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path


@dataclass
class PathsConfig:
    manifest: str = ""
    scored_corpus: str = ""
    certified_ids: str = ""
    teacher_file: str = ""
    bench_cases: str = ""
    classify_manifest: str = ""
    report_rows: str = ""


@dataclass
class DimsConfig:
    patch_size: int = 4
    channels: int = 1
    d_c: int = 16
    d_b: int = 4
    n_blocks: int = 2
    d_s: int = 16
    d_t: int = 8
    rank: int = 8
    d_model: int = 24
    vocab_size: int = 48
    d_hidden: int = 32
    max_len: int = 64
    backbone_seed: int = 7


@dataclass
class ScheduleConfig:
    t_max: int = 2000
    bump: bool = False


@dataclass
class TrainConfig:
    pairs: int = 32
    token_groups: int = 8
    batch_size: int = 8
    lr: float = 2e-4
    weight_decay: float = 0.01
    warmup_frac: float = 0.05
    validation_frac: float = 0.10


@dataclass
class FilterConfig:
    threshold: float = 4.5
    max_skew: int = 5
    balance_keys: list[str] = field(default_factory=lambda: ["label", "anatomic_site"])


@dataclass
class ClientsConfig:
    backend: str = "mock"  # mock | http
    endpoint: str = ""
    endpoints: dict[str, str] = field(default_factory=dict)  # per-model, http backend
    model_id: str = "mock-vlm-1"
    api_key_env: str = "DERMKIT_API_KEY"
    temperature: float = 0.0
    max_tokens: int = 1024
    max_workers: int = 4
    min_interval_s: float = 0.0
    fixed_timestamp: str = "1970-01-01T00:00:00Z"  # mock runs only; empty -> wall clock


@dataclass
class EvalTrainConfig:
    feature_dim: int = 8
    profiles: int = 6
    format_cases: int = 240
    scored_cases: int = 192
    stage1_target: float = 0.99
    stage1_max_epochs: int = 800
    stage2_steps: int = 8000
    stage2_batch: int = 32
    stage2_lr: float = 1e-2


@dataclass
class BenchConfig:
    models: list[str] = field(default_factory=lambda: ["model-a", "model-b"])


@dataclass
class ClassifyConfig:
    dataset_name: str = "synthetic"
    labels: list[str] = field(default_factory=list)
    aliases: dict[str, str] = field(default_factory=dict)
    strict: bool = True
    models: list[str] = field(default_factory=lambda: ["model-a"])


@dataclass
class ReportConfig:
    baseline: str = ""
    classify_accuracies: str = ""  # optional JSON {model: {dataset: pct}}


@dataclass
class RunConfig:
    seed: int = 0
    run_dir: str = "runs/default"
    paths: PathsConfig = field(default_factory=PathsConfig)
    dims: DimsConfig = field(default_factory=DimsConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    clients: ClientsConfig = field(default_factory=ClientsConfig)
    evaltrain: EvalTrainConfig = field(default_factory=EvalTrainConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    classify: ClassifyConfig = field(default_factory=ClassifyConfig)
    report: ReportConfig = field(default_factory=ReportConfig)


_SECTIONS = {
    "paths": PathsConfig,
    "dims": DimsConfig,
    "schedule": ScheduleConfig,
    "train": TrainConfig,
    "filter": FilterConfig,
    "clients": ClientsConfig,
    "evaltrain": EvalTrainConfig,
    "bench": BenchConfig,
    "classify": ClassifyConfig,
    "report": ReportConfig,
}


def _build_section(cls, data: dict, prefix: str, errors: list[str]):
    kwargs = {}
    known = {f.name: f for f in fields(cls)}
    for key, value in data.items():
        if key not in known:
            errors.append(f"{prefix}{key}: unknown field")
            continue
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        errors.append(f"{prefix.rstrip('.')}: {exc}")
        return cls()


def config_from_dict(data: dict) -> tuple[RunConfig, list[str]]:
    """Builds a RunConfig, returning every validation error found."""
    errors: list[str] = []
    if not isinstance(data, dict):
        return RunConfig(), ["config root must be a JSON object"]
    cfg = RunConfig()
    for key, value in data.items():
        if key in ("seed", "run_dir"):
            setattr(cfg, key, value)
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                errors.append(f"{key}: must be an object")
                continue
            setattr(cfg, key, _build_section(_SECTIONS[key], value, key + ".", errors))
        else:
            errors.append(f"{key}: unknown section")
    errors.extend(_validate(cfg))
    return cfg, errors


def _validate(cfg: RunConfig) -> list[str]:
    errors = []
    if not isinstance(cfg.seed, int):
        errors.append("seed: must be an integer")
    if not cfg.run_dir:
        errors.append("run_dir: must be nonempty")
    if cfg.schedule.t_max < 1:
        errors.append("schedule.t_max: must be >= 1")
    if not 1.0 <= cfg.filter.threshold <= 5.0:
        errors.append("filter.threshold: must lie in [1, 5]")
    if cfg.filter.max_skew < 0:
        errors.append("filter.max_skew: must be >= 0")
    if cfg.clients.backend not in ("mock", "http"):
        errors.append("clients.backend: must be 'mock' or 'http'")
    if cfg.clients.backend == "http" and not (cfg.clients.endpoint or cfg.clients.endpoints):
        errors.append("clients.endpoint: required for the http backend")
    if cfg.clients.temperature < 0:
        errors.append("clients.temperature: must be >= 0")
    if cfg.train.pairs < 1:
        errors.append("train.pairs: must be >= 1")
    if cfg.train.batch_size < 1:
        errors.append("train.batch_size: must be >= 1")
    if cfg.train.lr <= 0:
        errors.append("train.lr: must be positive")
    if not 0 <= cfg.train.validation_frac < 1:
        errors.append("train.validation_frac: must lie in [0, 1)")
    if cfg.dims.patch_size < 1:
        errors.append("dims.patch_size: must be >= 1")
    if cfg.dims.d_s != cfg.dims.d_c:
        errors.append("dims.d_s: must equal dims.d_c (mean + square projection)")
    if cfg.evaltrain.stage2_steps < 1:
        errors.append("evaltrain.stage2_steps: must be >= 1")
    if not cfg.bench.models:
        errors.append("bench.models: must list at least one model")
    return errors


def load_config(path: str | Path) -> tuple[RunConfig, list[str]]:
    path = Path(path)
    if not path.exists():
        return RunConfig(), [f"config file not found: {path}"]
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        return RunConfig(), [f"config is not valid JSON: {exc}"]
    return config_from_dict(data)


def require_paths(cfg: RunConfig, names: list[str]) -> list[str]:
    """Command-specific input paths must be set and resolvable."""
    errors = []
    for name in names:
        value = getattr(cfg.paths, name)
        if not value:
            errors.append(f"paths.{name}: required by this command")
        elif not Path(value).exists():
            errors.append(f"paths.{name}: file not found: {value}")
    return errors
