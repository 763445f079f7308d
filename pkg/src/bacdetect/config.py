"""Pipeline configuration: one JSON file, overridable by command-line flags."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from typing import Optional

from .traffic import DEFAULT_GAP_MS


@dataclass(frozen=True)
class MinerSettings:
    threshold: float = 0.5
    depth: int = 4


@dataclass(frozen=True)
class SimulatorSettings:
    n: int = 500
    k: int = 8
    target_url: Optional[str] = None
    own_cookie: str = "own-session"
    own_account: str = "1"
    foreign_cookie: str = "foreign-session"
    foreign_account: str = "2"
    llm_url: Optional[str] = None
    model: str = "deepseek-reasoner"
    temperature: float = 0.7
    parallelism: int = 1
    max_retries: int = 2
    backoff_ms: float = 500.0
    max_attempts: Optional[int] = None
    usd_per_1k_tokens: float = 0.0


@dataclass(frozen=True)
class TrainingSettings:
    backend: str = "ngram"
    delta: float = 0.1
    seq_epochs: int = 10
    seq_lr: float = 1e-5
    tree_iterations: int = 300
    tree_depth: int = 6
    tree_lr: float = 0.5
    neural_epochs: int = 80
    gate_epochs: int = 80
    pos_weight: float = 1.0


@dataclass(frozen=True)
class EvaluationSettings:
    train_frac: float = 0.8
    threshold: float = 0.5


@dataclass(frozen=True)
class PipelineConfig:
    logs: Optional[str] = None
    corpus: Optional[str] = None
    kb: str = "kb.json"
    bundle: str = "bundle"
    seed: int = 0
    offline: bool = False
    gap_ms: int = DEFAULT_GAP_MS
    miner: MinerSettings = field(default_factory=MinerSettings)
    simulator: SimulatorSettings = field(default_factory=SimulatorSettings)
    training: TrainingSettings = field(default_factory=TrainingSettings)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _build(cls, raw: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ValueError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        default = getattr(cls(), name)
        kwargs[name] = _build(type(default), value) if is_dataclass(default) else value
    return cls(**kwargs)


def load_config(path: Optional[str]) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path, encoding="utf-8") as fh:
        return _build(PipelineConfig, json.load(fh))


def override(cfg, **changes):
    """Apply non-None overrides; dotted names reach into sections."""
    top, nested = {}, {}
    for key, value in changes.items():
        if value is None:
            continue
        if "." in key:
            section, name = key.split(".", 1)
            nested.setdefault(section, {})[name] = value
        else:
            top[key] = value
    for section, vals in nested.items():
        top[section] = replace(getattr(cfg, section), **vals)
    return replace(cfg, **top)
