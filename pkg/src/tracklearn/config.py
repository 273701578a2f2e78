"""Run configuration: a strict JSON tree mapped onto frozen dataclasses.

Precedence, lowest first: built-in defaults, the config file, command-line
overrides. The seed is taken from ``--seed`` if given, else from the
``TRACKLEARN_SEED`` environment variable, else from the file.
Unknown keys and wrongly typed values raise :class:`ConfigError` naming the
offending key path.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .env import EPS_D_MAX, EPS_THETA_MAX, OBS_DIM
from .errors import ConfigError, DomainError
from .harness import DEFAULT_DEVIATIONS, TRANSIENT_STEPS
from .learn.sac import SacConfig
from .pipeline.paths import PathGenSpec
from .pipeline.training import DRConfig, TrainConfig
from .vehicle import VehicleParams

SCHEMA_VERSION = 1
SEED_ENV = "TRACKLEARN_SEED"


@dataclass(frozen=True)
class EnvLimits:
    max_steps: int = 1200
    eps_d_max: float = EPS_D_MAX
    eps_theta_max: float = EPS_THETA_MAX


@dataclass(frozen=True)
class TrainSection:
    variant: str = "SAC-HF-RW"
    data: str = ""
    phase1_steps: int = 150_000
    phase2_steps: int = 100_000
    eval_every: int = 2500
    eval_scenarios: int = 4
    plateau_k: int = 10
    plateau_min_delta: float = 0.005
    stop_on_plateau: bool = True
    mixed_finetune: bool = False


@dataclass(frozen=True)
class HarnessSection:
    data: str = ""
    checkpoints: dict = field(default_factory=dict)  # label -> checkpoint path
    tags: tuple = ("Virtual",)
    split: str = "eval"
    tier: str = "ST"  # ST, HF or both
    init_deviations: tuple = DEFAULT_DEVIATIONS
    transient_steps: int = TRANSIENT_STEPS
    record_traces: bool = True


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    output_dir: str = "runs/default"
    jobs: int = 1
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    paths: PathGenSpec = field(default_factory=PathGenSpec)
    env: EnvLimits = field(default_factory=EnvLimits)
    dr: DRConfig = field(default_factory=DRConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    train: TrainSection = field(default_factory=TrainSection)
    harness: HarnessSection = field(default_factory=HarnessSection)


def _convert(tp, value, key):
    """Coerce a JSON value to the annotated type, rejecting anything ambiguous."""
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"expected an object, got {type(value).__name__}", key)
        return build(tp, value, key)
    origin = typing.get_origin(tp)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"expected a finite number, got {value!r}", key)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key)
        return value
    if tp is tuple or origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", key)
        for i, v in enumerate(value):
            if isinstance(v, (dict, list)):
                raise ConfigError("nested containers are not allowed here", f"{key}[{i}]")
        return tuple(value)
    if tp is dict or origin is dict:
        if not isinstance(value, dict) or not all(isinstance(v, str) for v in value.values()):
            raise ConfigError(f"expected an object of strings, got {value!r}", key)
        return dict(value)
    raise ConfigError(f"unsupported field type {tp!r}", key)


def build(cls, data: dict, prefix: str = ""):
    """Instantiate dataclass ``cls`` from ``data``, field by field."""
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls) if f.init}
    for k in data:
        if k not in known:
            raise ConfigError(f"unknown key (expected one of {sorted(known)})", f"{prefix}.{k}" if prefix else k)
    kwargs = {k: _convert(hints[k], v, f"{prefix}.{k}" if prefix else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (DomainError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc), prefix or cls.__name__) from exc


def to_dict(obj) -> dict:
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        return v

    return {k: plain(v) for k, v in dataclasses.asdict(obj).items()}


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", "<root>")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})", "schema_version")
    cfg = build(RunConfig, data)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.sac.obs_dim != OBS_DIM:
        raise ConfigError(f"must equal the observation width {OBS_DIM}", "sac.obs_dim")
    if cfg.jobs < 1:
        raise ConfigError("must be >= 1", "jobs")
    if cfg.seed < 0:
        raise ConfigError("must be non-negative", "seed")
    if cfg.harness.tier not in ("ST", "HF", "both"):
        raise ConfigError("must be ST, HF or both", "harness.tier")
    if not cfg.harness.init_deviations:
        raise ConfigError("must not be empty", "harness.init_deviations")
    if cfg.harness.split not in ("train", "eval"):
        raise ConfigError("must be train or eval", "harness.split")
    if not 0.0 <= cfg.dr.param_frac <= 0.3:
        raise ConfigError("must lie in [0, 0.3]", "dr.param_frac")
    to_train_config(cfg)


def load(path=None, overrides: dict | None = None, environ=None) -> RunConfig:
    """Read ``path`` (or defaults), apply dotted-key ``overrides`` and the seed variable."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}", str(path)) from exc
        except ValueError as exc:
            raise ConfigError(f"invalid JSON: {exc}", str(path)) from exc
        if not isinstance(data, dict):
            raise ConfigError("top level must be an object", "<root>")
    for dotted, value in (overrides or {}).items():
        node = data
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError("cannot override inside a non-object", dotted)
        node[leaf] = value
    environ = os.environ if environ is None else environ
    if environ.get(SEED_ENV):
        try:
            data["seed"] = int(environ[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {environ[SEED_ENV]!r}", SEED_ENV) from exc
    return from_dict(data)


def dumps(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n"


def to_train_config(cfg: RunConfig) -> TrainConfig:
    t = cfg.train
    try:
        return TrainConfig(variant=t.variant, phase1_steps=t.phase1_steps, phase2_steps=t.phase2_steps,
                           eval_every=t.eval_every, eval_scenarios=t.eval_scenarios, plateau_k=t.plateau_k,
                           plateau_min_delta=t.plateau_min_delta, stop_on_plateau=t.stop_on_plateau,
                           mixed_finetune=t.mixed_finetune, max_episode_steps=cfg.env.max_steps,
                           eps_d_max=cfg.env.eps_d_max, eps_theta_max=cfg.env.eps_theta_max, eval_jobs=cfg.jobs,
                           nominal=cfg.vehicle, dr=cfg.dr, sac=cfg.sac, seed=cfg.seed)
    except DomainError as exc:
        raise ConfigError(str(exc), "train") from exc


__all__ = ["EnvLimits", "HarnessSection", "RunConfig", "SCHEMA_VERSION", "SEED_ENV", "TrainSection", "build",
           "dumps", "from_dict", "load", "to_dict", "to_train_config", "validate"]
