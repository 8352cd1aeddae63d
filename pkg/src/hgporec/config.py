"""Run configuration: nested dataclasses serialized as JSON.

Every field has a default; unknown keys are rejected with the dotted key path.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .hgpo.config import HgpoConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    interactions: str = "interactions.tsv"
    semantic: str | None = "semantic.txt"
    k_core: int = 5
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)


@dataclass
class BackboneConfig:
    d: int = 64
    d_id: int = 64
    layers: int = 3
    k_positive: int = 1
    init_std: float = 0.1


@dataclass
class OptimizerConfig:
    lr: float = 0.001
    batch_size: int = 4096
    epochs: int = 100
    lambda_reg: float = 1e-4


@dataclass
class ContrastiveConfig:
    lambda_cl: float = 0.1
    tau_fixed: float = 0.2  # temperature when the policy does not choose one
    reduction: str = "sum"  # how per-anchor InfoNCE terms combine: "sum" or "mean"


@dataclass
class AblationConfig:
    no_hgpo: bool = False
    fixed_tau: bool = False
    random_neg: bool = False
    grpo: bool = False
    weighted_sum_fusion: bool = False
    no_semantic: bool = False


@dataclass
class EarlyStoppingConfig:
    patience: int = 10
    metric: str = "ndcg@20"


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    hgpo: HgpoConfig = field(default_factory=HgpoConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    early_stopping: EarlyStoppingConfig = field(default_factory=EarlyStoppingConfig)
    eval_ks: tuple[int, ...] = (10, 20)

    def validate(self) -> RunConfig:
        self.hgpo.validate()
        if self.ablation.grpo:
            self.hgpo.lambda_harm = 0.0
        b = self.backbone
        if b.layers < 0 or not (1 <= b.k_positive <= max(b.layers, 1)):
            raise ConfigError("backbone.k_positive must lie in [1, layers]")
        if self.ablation.weighted_sum_fusion and b.d_id != b.d:
            raise ConfigError("weighted_sum_fusion needs backbone.d_id == backbone.d")
        if self.contrastive.reduction not in ("sum", "mean"):
            raise ConfigError("contrastive.reduction must be 'sum' or 'mean'")
        if self.optimizer.batch_size < 1 or self.optimizer.epochs < 0:
            raise ConfigError("optimizer.batch_size must be >= 1 and epochs >= 0")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")


def _build(cls, raw, prefix):
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in fields:
            raise ConfigError(f"unknown config key: {path}")
        default = fields[key].default_factory() if fields[key].default_factory is not dataclasses.MISSING \
            else fields[key].default
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, path)
        elif isinstance(default, tuple):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(raw: dict) -> RunConfig:
    return _build(RunConfig, raw, "").validate()


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    cfg = config_from_dict(raw)
    base = Path(path).resolve().parent
    for attr in ("interactions", "semantic"):
        val = getattr(cfg.data, attr)
        if val is not None and not Path(val).is_absolute():
            setattr(cfg.data, attr, str(base / val))
    return cfg


def desk_scale(**overrides) -> RunConfig:
    """Small-scale defaults for laptop runs (batch 256, d 32, per-anchor mean of the contrastive term,
    policy lr 3e-4 to make up for the few policy updates a small dataset affords)."""
    cfg = RunConfig()
    cfg.backbone.d = cfg.backbone.d_id = 32
    cfg.optimizer.batch_size = 256
    cfg.optimizer.epochs = 50
    cfg.contrastive.reduction = "mean"
    cfg.hgpo.policy_lr = 3e-4
    for key, value in overrides.items():
        target = cfg
        *parents, leaf = key.split(".")
        for p in parents:
            target = getattr(target, p)
        if not hasattr(target, leaf):
            raise ConfigError(f"unknown config key: {key}")
        setattr(target, leaf, value)
    return cfg.validate()
