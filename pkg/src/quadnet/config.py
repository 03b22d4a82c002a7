"""Run configuration: one JSON document, strict keys, flag overrides on top."""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .data import SynthConfig
from .errors import ConfigError
from .losses import LossConfig
from .model import ModelConfig
from .sampling import SamplerConfig
from .seeding import derive_int
from .training import TrainConfig


@dataclass
class ModelSection:
    embed_dim: int | None = None  # None: num_classes + 1
    backbone_hidden: list[int] = field(default_factory=lambda: [64])
    leaky_slope: float = 0.01
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5


@dataclass
class TrainSection:
    lr: float = 0.005
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 20
    patience: int = 5


@dataclass
class SplitSection:
    ratios: list[float] = field(default_factory=lambda: [0.6, 0.2, 0.2])
    stratified: bool = True


@dataclass
class SamplerSection:
    outlier_share: float = 1.0 / 3.0
    batch_size: int = 64
    quads_per_batch: int = 256


@dataclass
class PathsSection:
    data: str | None = None
    checkpoint: str | None = None
    out: str | None = None


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    loss: LossConfig = field(default_factory=LossConfig)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    split: SplitSection = field(default_factory=SplitSection)
    synth: SynthConfig = field(default_factory=SynthConfig)
    paths: PathsSection = field(default_factory=PathsSection)
    k: int = 10
    alpha: float = 0.025
    beta: float = 0.025

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def model_config(self, input_dim: int, num_classes: int) -> ModelConfig:
        m = self.model
        return ModelConfig(
            input_dim=input_dim,
            embed_dim=m.embed_dim if m.embed_dim is not None else num_classes + 1,
            num_classes=num_classes,
            backbone_hidden=list(m.backbone_hidden),
            leaky_slope=m.leaky_slope,
            bn_momentum=m.bn_momentum,
            bn_eps=m.bn_eps,
            seed=derive_int(self.seed, "init"),
        )

    def train_config(self) -> TrainConfig:
        t, s = self.train, self.sampler
        sampler_seed = derive_int(self.seed, "sampler")
        return TrainConfig(
            lr=t.lr,
            weight_decay=t.weight_decay,
            beta1=t.beta1,
            beta2=t.beta2,
            adam_eps=t.adam_eps,
            max_epochs=t.max_epochs,
            patience=t.patience,
            loss=dataclasses.replace(self.loss),
            sampler=SamplerConfig(s.outlier_share, s.batch_size, s.quads_per_batch, sampler_seed),
            seed=sampler_seed,
        )

    def split_seed(self) -> int:
        return derive_int(self.seed, "split")

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError("must be >= 1", "k")
        for name in ("alpha", "beta"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError("must lie in (0, 1)", name)
        if len(self.split.ratios) != 3 or any(r <= 0 for r in self.split.ratios):
            raise ConfigError("need three positive ratios", "split.ratios")
        if abs(sum(self.split.ratios) - 1.0) > 1e-9:
            raise ConfigError("ratios must sum to 1", "split.ratios")
        if self.model.embed_dim is not None and self.model.embed_dim < 2:
            raise ConfigError("must be >= 2", "model.embed_dim")
        self.train_config().validate()


def _check_value(value, tp, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _check_value(value, inner[0], path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError("expected a list", path)
        return [_check_value(v, args[0], f"{path}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError("expected true or false", path)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    if dataclasses.is_dataclass(tp):
        return build(tp, value, path)
    return value


def build(cls, raw, path: str = ""):
    """Instantiate dataclass ``cls`` from a dict, rejecting unknown keys."""
    if not isinstance(raw, dict):
        raise ConfigError("expected an object", path or "<root>")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError("unknown key", f"{path}.{key}" if path else key)
    kwargs = {k: _check_value(v, hints[k], f"{path}.{k}" if path else k) for k, v in raw.items()}
    return cls(**kwargs)


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON ({exc})", str(path)) from exc
    return build(RunConfig, raw)
