"""Run configuration: a JSON document mirroring the training, encoder,
matcher and augmentation settings. Unknown keys are rejected."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .augment import DEFAULT_VIEWS, AugmentSpec
from .encoder import EncoderConfig
from .matcher import MatcherConfig

MODES = ("cl", "sup-continuous", "sup-discrete", "finetune")
FINETUNE_LRS = (0.01, 0.001, 0.0001)


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    mode: str = "cl"
    epochs: int = 20
    batch_size: int = 32
    q: int = 4
    lr: float = 0.001
    seed: int = 0
    tau: float = 0.07
    views: tuple[AugmentSpec, AugmentSpec] = DEFAULT_VIEWS
    finetune_lrs: tuple[float, ...] = FINETUNE_LRS
    finetune_epochs: int = 100
    patience: int = 10
    freeze_encoder: bool = False
    checkpoint: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.mode == "cl" and not 1 <= self.q <= 2 * self.batch_size:
            raise ConfigError(f"q must be in [1, 2 * batch_size = {2 * self.batch_size}], got {self.q}")
        if len(self.views) != 2:
            raise ConfigError("views must hold exactly two augmentation specs")
        self.views = tuple(v if isinstance(v, AugmentSpec) else AugmentSpec(**v) for v in self.views)
        self.finetune_lrs = tuple(float(v) for v in self.finetune_lrs)


@dataclass
class ModelConfig:
    arch: str = "gin"
    num_layers: int = 3
    hidden: int = 64
    similarity: str = "dot"
    normalize_target: bool = False

    def encoder(self, node_dim: int, edge_dim: int) -> EncoderConfig:
        return EncoderConfig(node_dim, edge_dim, self.num_layers, self.hidden, self.arch)

    def matcher(self, edge_dim: int) -> MatcherConfig:
        return MatcherConfig(self.hidden, edge_dim, self.similarity, self.normalize_target)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        d = {"model": asdict(self.model), "train": asdict(self.train)}
        d["train"]["views"] = [asdict(v) for v in self.train.views]
        d["train"]["finetune_lrs"] = list(self.train.finetune_lrs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _reject_unknown(d, {"model", "train"}, "config")
        model = d.get("model", {})
        train = dict(d.get("train", {}))
        _reject_unknown(model, {f.name for f in fields(ModelConfig)}, "model")
        _reject_unknown(train, {f.name for f in fields(TrainConfig)}, "train")
        if "views" in train:
            views = []
            for v in train["views"]:
                _reject_unknown(v, {"kind", "ratio"}, "train.views[]")
                views.append(AugmentSpec(**v))
            train["views"] = tuple(views)
        try:
            return cls(ModelConfig(**model), TrainConfig(**train))
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def dump(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _reject_unknown(d, allowed: set[str], where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown {where} keys: {sorted(extra)}")
