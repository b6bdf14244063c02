"""Run configuration: strict-keyed dataclasses for data, model, and
training knobs, JSON loading with presets, and a stable config hash.

Unknown keys are always errors so a typo never silently falls back to a
default.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Iterable

from .errors import ConfigError
from .losses import LossConfig
from .prompts import TaskSpec

PRESETS = ("default", "morph")

# Offset applied to the data seed when generating the held-out synthetic
# split, so train and test never share a noise stream.
TEST_SEED_OFFSET = 1000003


def check_keys(d: dict, allowed: Iterable[str], context: str) -> None:
    """Reject unknown keys with a message naming the config section."""
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {context} config keys: {', '.join(unknown)}")


def _build(cls, d: dict, context: str):
    check_keys(d, cls.__dataclass_fields__, context)
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad {context} config: {exc}") from exc


@dataclass(frozen=True)
class DataConfig:
    """Synthetic dataset shape for a run; label_values default to 1..M."""

    num_ranks: int = 10
    label_values: tuple[float, ...] | None = None
    train_per_class: int = 200
    test_per_class: int = 50
    noise_sigma: float = 0.55
    height: int = 32
    width: int = 32

    def __post_init__(self):
        if self.num_ranks < 2:
            raise ConfigError("num_ranks must be >= 2")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ConfigError("per-class counts must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.height < 4 or self.width < 4:
            raise ConfigError("image dimensions must be >= 4")
        values = self.label_values
        if values is None:
            values = tuple(float(i + 1) for i in range(self.num_ranks))
        else:
            values = tuple(float(v) for v in values)
            if len(values) != self.num_ranks:
                raise ConfigError("label_values length must equal num_ranks")
        object.__setattr__(self, "label_values", values)

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        return _build(cls, d, "data")

    def to_dict(self) -> dict:
        return {
            "num_ranks": self.num_ranks,
            "label_values": list(self.label_values),
            "train_per_class": self.train_per_class,
            "test_per_class": self.test_per_class,
            "noise_sigma": self.noise_sigma,
            "height": self.height,
            "width": self.width,
        }


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions for the toy encoders and the rank-token refiner."""

    d_embed: int = 32
    d_feat: int = 64
    heads: int = 8
    d_ff: int | None = None
    alpha: float = 0.1
    text_hidden: int = 64
    image_hidden: int = 128
    max_rank_tokens: int = 8
    backbone: str | None = None

    def __post_init__(self):
        if self.d_embed < 1 or self.d_feat < 1:
            raise ConfigError("feature dimensions must be positive")
        if self.heads < 1 or self.d_embed % self.heads != 0:
            raise ConfigError("heads must divide d_embed")
        if self.d_ff is not None and self.d_ff < 1:
            raise ConfigError("d_ff must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.text_hidden < 1 or self.image_hidden < 1:
            raise ConfigError("hidden sizes must be positive")
        if self.max_rank_tokens < 1:
            raise ConfigError("max_rank_tokens must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return _build(cls, d, "model")

    def to_dict(self) -> dict:
        return {
            "d_embed": self.d_embed,
            "d_feat": self.d_feat,
            "heads": self.heads,
            "d_ff": self.d_ff,
            "alpha": self.alpha,
            "text_hidden": self.text_hidden,
            "image_hidden": self.image_hidden,
            "max_rank_tokens": self.max_rank_tokens,
            "backbone": self.backbone,
        }


@dataclass(frozen=True)
class TrainConfig:
    """Two-stage schedule. decay_epoch is 1-indexed within stage 2. The
    ablation flags gate the refiner and the ordinal pairwise terms;
    baseline_coop_mode overrides all three off (contrastive-plus-CE
    context tuning only)."""

    stage1_epochs: int = 20
    stage2_epochs: int = 40
    lr_rankformer: float = 3.5e-4
    lr_visual: float = 1e-5
    lr_context: float | None = None
    decay_epoch: int = 30
    decay_factor: float = 0.1
    batch_size: int = 64
    n_context: int = 5
    seed: int = 0
    use_rankformer: bool = True
    use_cop: bool = True
    use_scop: bool = True
    baseline_coop_mode: bool = False

    def __post_init__(self):
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.lr_rankformer <= 0 or self.lr_visual <= 0:
            raise ConfigError("learning rates must be positive")
        if self.lr_context is not None and self.lr_context <= 0:
            raise ConfigError("lr_context must be positive when given")
        if self.decay_epoch < 1:
            raise ConfigError("decay_epoch must be >= 1")
        if self.stage2_epochs > 0 and self.decay_epoch > self.stage2_epochs:
            raise ConfigError("decay_epoch must not exceed stage2_epochs")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError("decay_factor must lie in (0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.n_context < 0:
            raise ConfigError("n_context must be non-negative")

    @property
    def effective_lr_context(self) -> float:
        return self.lr_context if self.lr_context is not None else self.lr_rankformer

    def effective_flags(self) -> tuple[bool, bool, bool]:
        """(use_rankformer, use_cop, use_scop) after the baseline override."""
        if self.baseline_coop_mode:
            return (False, False, False)
        return (self.use_rankformer, self.use_cop, self.use_scop)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return _build(cls, d, "train")

    def to_dict(self) -> dict:
        return {
            "stage1_epochs": self.stage1_epochs,
            "stage2_epochs": self.stage2_epochs,
            "lr_rankformer": self.lr_rankformer,
            "lr_visual": self.lr_visual,
            "lr_context": self.lr_context,
            "decay_epoch": self.decay_epoch,
            "decay_factor": self.decay_factor,
            "batch_size": self.batch_size,
            "n_context": self.n_context,
            "seed": self.seed,
            "use_rankformer": self.use_rankformer,
            "use_cop": self.use_cop,
            "use_scop": self.use_scop,
            "baseline_coop_mode": self.baseline_coop_mode,
        }


def default_task_dict(num_ranks: int, label_values: tuple[float, ...]) -> dict:
    names = [f"{v:g}" for v in label_values]
    return {
        "template": "a photo of a level {} bar.",
        "label_names": names,
        "rank_labels": [float(v) for v in label_values],
    }


@dataclass(frozen=True)
class RunConfig:
    """Everything one training run needs, bundled and hashable."""

    task: TaskSpec
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    @classmethod
    def from_dict(cls, d: dict, preset: str = "default") -> "RunConfig":
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {PRESETS}")
        check_keys(d, ("task", "data", "model", "train", "loss"), "run")
        data = DataConfig.from_dict(dict(d.get("data", {})))
        task_dict = dict(
            d.get("task", default_task_dict(data.num_ranks, data.label_values))
        )
        loss_dict = dict(d.get("loss", {}))
        if preset == "morph":
            loss_dict.setdefault("stage1_weights", (0.03, 0.03, 3.0))
        return cls(
            task=TaskSpec.from_dict(task_dict),
            data=data,
            model=ModelConfig.from_dict(dict(d.get("model", {}))),
            train=TrainConfig.from_dict(dict(d.get("train", {}))),
            loss=LossConfig.from_dict(loss_dict),
        )

    @classmethod
    def from_file(cls, path: str, preset: str = "default") -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        return cls.from_dict(raw, preset=preset)

    def to_dict(self) -> dict:
        return {
            "task": {
                "template": self.task.template,
                "label_names": list(self.task.label_names),
                "rank_labels": [float(v) for v in self.task.rank_labels],
            },
            "data": self.data.to_dict(),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "loss": self.loss.to_dict(),
        }


def config_hash(cfg: RunConfig | dict[str, Any]) -> str:
    """First 16 hex digits of the SHA-256 of the canonical JSON form."""
    d = cfg.to_dict() if isinstance(cfg, RunConfig) else cfg
    canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]
