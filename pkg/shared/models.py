"""
Shared Pydantic models for TsallisSeg.
Used across the engine, the harness and the CLI.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .constants import (
    IGNORE_INDEX,
    ATTACK_DISPLAY_NAMES,
    AttackDefaults,
    ShapesWorldDefaults,
    TrainDefaults,
)


class LossName(str, Enum):
    CE = "ce"
    TSALLIS = "tsallis"
    SEGPGD = "segpgd"
    COSPGD = "cospgd"
    JS = "js"
    MASKED_CE = "maskedce"


class ScheduleType(str, Enum):
    FIXED = "fixed"
    LINEAR = "linear"


class MaskNormalization(str, Enum):
    MASKED = "masked"   # divide by the number of still-correct pixels
    TOTAL = "total"     # divide by the number of non-ignored pixels


class TieRule(str, Enum):
    MIN = "min"
    AVERAGE = "average"


class SeaMetric(str, Enum):
    ACC = "acc"
    MIOU = "miou"


class QSchedule(BaseModel):
    """Iteration-indexed Tsallis q: fixed, or a linear sweep q_start -> q_end."""
    model_config = ConfigDict(frozen=True)

    kind: ScheduleType = ScheduleType.FIXED
    q_start: float
    q_end: Optional[float] = None

    @model_validator(mode="after")
    def _check_range(self):
        if self.kind == ScheduleType.FIXED:
            if self.q_start > 1:
                raise ValueError(f"fixed q must be <= 1, got {self.q_start}")
        else:
            if self.q_end is None:
                raise ValueError("linear schedule needs q_end")
            if self.q_start >= 1 and self.q_start != self.q_end:
                raise ValueError(f"linear q_start must be < 1, got {self.q_start}")
            if self.q_end > 1:
                raise ValueError(f"linear q_end must be <= 1, got {self.q_end}")
        return self

    @classmethod
    def fixed(cls, q: float) -> "QSchedule":
        return cls(kind=ScheduleType.FIXED, q_start=q)

    @classmethod
    def linear(cls, q_start: float, q_end: float) -> "QSchedule":
        return cls(kind=ScheduleType.LINEAR, q_start=q_start, q_end=q_end)

    @property
    def label(self) -> str:
        if self.kind == ScheduleType.FIXED:
            return f"fixed:{self.q_start:g}"
        return f"linear:{self.q_start:g}:{self.q_end:g}"


class LossKind(BaseModel):
    """
    Attack objective selector.

    `q` is the concrete entropic index used by the objectives module;
    `q_schedule` is what an attack carries and resolves to `q` each step.
    """
    model_config = ConfigDict(frozen=True)

    name: LossName
    q: Optional[float] = None
    q_schedule: Optional[QSchedule] = None
    mask_normalization: MaskNormalization = MaskNormalization.MASKED

    @model_validator(mode="after")
    def _check_tsallis(self):
        if self.name == LossName.TSALLIS:
            if self.q is None and self.q_schedule is None:
                raise ValueError("tsallis loss needs q or a q_schedule")
            if self.q is not None and self.q > 1:
                raise ValueError(f"tsallis attacks restrict q <= 1, got {self.q}")
        return self

    @property
    def label(self) -> str:
        """Stable machine label, e.g. "ce" or "tsallis@linear:-2:1"."""
        if self.name == LossName.TSALLIS:
            if self.q_schedule is not None:
                return f"tsallis@{self.q_schedule.label}"
            return f"tsallis@fixed:{self.q:g}"
        if self.name == LossName.MASKED_CE and self.mask_normalization == MaskNormalization.TOTAL:
            return "maskedce@total"
        return self.name.value

    @property
    def display_name(self) -> str:
        base = ATTACK_DISPLAY_NAMES[self.name.value]
        if self.name == LossName.TSALLIS:
            return f"{base}({self.label.split('@', 1)[1]})"
        if self.name == LossName.MASKED_CE and self.mask_normalization == MaskNormalization.TOTAL:
            return f"{base}(total)"
        return base


class EpsPhases(BaseModel):
    """Multi-radius phases: (radius multiplier, iteration fraction) pairs."""
    model_config = ConfigDict(frozen=True)

    phases: Tuple[Tuple[float, float], ...] = AttackDefaults.PHASES

    @field_validator("phases")
    @classmethod
    def _check_phases(cls, phases):
        if not phases:
            raise ValueError("at least one phase is required")
        multipliers = [m for m, _ in phases]
        fractions = [f for _, f in phases]
        if any(f <= 0 for f in fractions):
            raise ValueError("phase fractions must be positive")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise ValueError(f"phase fractions must sum to 1, got {sum(fractions)}")
        if any(m <= 0 for m in multipliers):
            raise ValueError("phase multipliers must be positive")
        if any(a < b for a, b in zip(multipliers, multipliers[1:])):
            raise ValueError("phase multipliers must be non-increasing")
        if multipliers[-1] != 1.0:
            raise ValueError("final phase multiplier must be 1")
        return phases

    @classmethod
    def single(cls) -> "EpsPhases":
        return cls(phases=((1.0, 1.0),))

    @property
    def label(self) -> str:
        return ",".join(f"{m:g}@{f:g}" for m, f in self.phases)


class AttackConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    loss: LossKind
    eps: float = Field(gt=0.0, le=1.0)
    iters: int = Field(default=AttackDefaults.ITERS, ge=1)
    phases: EpsPhases = Field(default_factory=EpsPhases)
    seed: int = 0
    restarts: int = Field(default=AttackDefaults.RESTARTS, ge=1)


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(default=TrainDefaults.EPOCHS, ge=0)
    learning_rate: float = Field(default=TrainDefaults.LEARNING_RATE, gt=0.0)
    batch_size: int = Field(default=TrainDefaults.BATCH_SIZE, ge=1)
    adv_steps: int = Field(default=0, ge=0)
    adv_eps: float = Field(default=TrainDefaults.ADV_EPS, gt=0.0, le=1.0)
    seed: int = 0


class ShapesWorldSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    image_size: int = Field(default=ShapesWorldDefaults.IMAGE_SIZE, ge=8)
    num_classes: int = Field(default=TrainDefaults.NUM_CLASSES, ge=2, le=255)
    shapes_per_image: Tuple[int, int] = ShapesWorldDefaults.SHAPES_PER_IMAGE
    color_noise: float = Field(default=ShapesWorldDefaults.COLOR_NOISE, ge=0.0, le=0.5)
    contrast: float = Field(default=ShapesWorldDefaults.CONTRAST, gt=0.0, le=1.0)
    seed: int = 0

    @field_validator("shapes_per_image")
    @classmethod
    def _check_range(cls, value):
        lo, hi = value
        if lo < 0 or hi < lo:
            raise ValueError(f"shapes_per_image must satisfy 0 <= min <= max, got {value}")
        return value


class DatasetSplits(BaseModel):
    """Index ranges are assigned in order train, val, test, so splits never overlap."""
    model_config = ConfigDict(frozen=True)

    train: int = Field(default=ShapesWorldDefaults.TRAIN_COUNT, ge=0)
    val: int = Field(default=ShapesWorldDefaults.VAL_COUNT, ge=0)
    test: int = Field(default=ShapesWorldDefaults.TEST_COUNT, ge=0)

    @property
    def total(self) -> int:
        return self.train + self.val + self.test

    def index_range(self, split: str) -> range:
        bounds = {
            "train": (0, self.train),
            "val": (self.train, self.train + self.val),
            "test": (self.train + self.val, self.total),
        }
        if split not in bounds:
            raise ValueError(f"Unknown split '{split}'")
        return range(*bounds[split])


class BenchConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    schema_version: Literal[1]
    dataset_dir: str
    models: Dict[str, str]
    eps: List[float]
    attacks: List[LossKind]
    iters: int = Field(default=AttackDefaults.ITERS, ge=1)
    phases: EpsPhases = Field(default_factory=EpsPhases)
    seed: int = 0
    restarts: int = Field(default=AttackDefaults.RESTARTS, ge=1)
    split: Literal["val", "test"] = "test"
    output_dir: str = "results/bench"

    @field_validator("eps")
    @classmethod
    def _check_eps(cls, values):
        if not values:
            raise ValueError("eps list must not be empty")
        for e in values:
            if not 0.0 < e <= 1.0:
                raise ValueError(f"eps values must lie in (0, 1], got {e}")
        return values

    @field_validator("attacks")
    @classmethod
    def _check_attacks(cls, values):
        if not values:
            raise ValueError("attack list must not be empty")
        labels = [k.label for k in values]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate attacks in {labels}")
        return values

    @field_validator("models")
    @classmethod
    def _check_models(cls, values):
        if not values:
            raise ValueError("at least one model is required")
        return values


class AttackScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    acc: float = Field(ge=0.0, le=100.0)
    miou: float = Field(ge=0.0, le=100.0)


class RowScores(BaseModel):
    """One benchmark row: a (dataset, model, eps) cell scored by every attack."""
    model_config = ConfigDict(frozen=True)

    dataset: str = "shapes"
    model: str
    eps: str
    scores: Dict[str, AttackScore]

    @property
    def key(self) -> Tuple[str, str, str]:
        return (self.dataset, self.model, self.eps)


@dataclass(frozen=True)
class SegDataset:
    """
    In-memory image/label pairs.

    images: N x C x H x W float32 in [0, 1]; labels: N x H x W integer maps;
    indices: the global dataset index of each item (seeds derive from it).
    """
    images: np.ndarray
    labels: np.ndarray
    indices: Tuple[int, ...]
    num_classes: int
    ignore_index: int = IGNORE_INDEX

    def __post_init__(self):
        if self.images.ndim != 4 or self.labels.ndim != 3:
            raise ValueError("images must be N x C x H x W and labels N x H x W")
        if self.images.shape[0] != self.labels.shape[0] or len(self.indices) != self.labels.shape[0]:
            raise ValueError("images, labels and indices must have the same length")
        if self.images.shape[2:] != self.labels.shape[1:]:
            raise ValueError("image and label spatial dims differ")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, positions) -> "SegDataset":
        positions = list(positions)
        return SegDataset(
            images=self.images[positions],
            labels=self.labels[positions],
            indices=tuple(self.indices[p] for p in positions),
            num_classes=self.num_classes,
            ignore_index=self.ignore_index,
        )
