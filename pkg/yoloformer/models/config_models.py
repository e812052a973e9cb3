from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


class CsamVariant(str, Enum):
    SINGLE_HEAD = "sh"
    MULTI_BRANCH = "mb"
    MULTI_HEAD = "mh"
    MULTI_HEAD_MULTI_BRANCH = "mhmb"

    @property
    def has_branches(self) -> bool:
        return self in (CsamVariant.MULTI_BRANCH, CsamVariant.MULTI_HEAD_MULTI_BRANCH)

    @property
    def has_heads(self) -> bool:
        return self in (CsamVariant.MULTI_HEAD, CsamVariant.MULTI_HEAD_MULTI_BRANCH)


class CsamConfig(BaseModel):
    variant: CsamVariant = CsamVariant.SINGLE_HEAD
    channels: int = Field(gt=0)
    heads: int = Field(default=4, gt=0)
    shake_shake_enabled: bool = False

    @model_validator(mode="after")
    def check_variant(self):
        if self.variant.has_heads and self.channels % self.heads:
            raise ValueError(f"channels ({self.channels}) must be divisible by heads ({self.heads})")
        if self.shake_shake_enabled and not self.variant.has_branches:
            raise ValueError(f"shake-shake needs a multi-branch variant, got {self.variant.value}")
        return self


class TransformerConfig(BaseModel):
    in_channels: int = Field(gt=0)
    out_channels: int = Field(gt=0)
    csam: CsamConfig

    @model_validator(mode="after")
    def check_channels(self):
        if self.csam.channels != self.out_channels:
            raise ValueError("csam.channels must equal out_channels")
        return self


DEPTH_PRESETS = {
    "desk": [1, 1, 2, 2, 1],
    "full": [1, 2, 8, 8, 4],
}

STRIDES = (8, 16, 32)


def default_anchors() -> List[List[Tuple[float, float]]]:
    """Per scale {(0.75,0.75),(1.5,1.5),(3,3)} * stride"""
    return [[(m * s, m * s) for m in (0.75, 1.5, 3.0)] for s in STRIDES]


class DetectorConfig(BaseModel):
    input_size: int = Field(default=96, gt=0)
    num_classes: int = Field(default=2, gt=0)
    stage_depths: List[int] = Field(default_factory=lambda: list(DEPTH_PRESETS["desk"]))
    stage_channels: List[int] = Field(default_factory=lambda: [16, 32, 64, 128, 256])
    stem_channels: int = Field(default=8, gt=0)
    csam_variant: CsamVariant = CsamVariant.SINGLE_HEAD
    heads: int = Field(default=4, gt=0)
    shake_shake: bool = False
    block_type: str = "transformer"
    anchors: List[List[Tuple[float, float]]] = Field(default_factory=default_anchors)
    strides: Tuple[int, int, int] = STRIDES

    @field_validator("input_size")
    @classmethod
    def check_input_size(cls, v):
        if v % 32:
            raise ValueError(f"input_size {v} is not a multiple of 32")
        return v

    @field_validator("stage_depths", "stage_channels")
    @classmethod
    def check_five(cls, v):
        if len(v) != 5 or any(x <= 0 for x in v):
            raise ValueError("expected 5 positive ints")
        return v

    @field_validator("block_type")
    @classmethod
    def check_block_type(cls, v):
        if v not in ("transformer", "residual"):
            raise ValueError("block_type must be 'transformer' or 'residual'")
        return v

    @field_validator("strides")
    @classmethod
    def check_strides(cls, v):
        if tuple(v) != STRIDES:
            raise ValueError("strides are fixed at (8, 16, 32)")
        return tuple(v)

    @model_validator(mode="after")
    def check_consistency(self):
        if len(self.anchors) != 3 or any(len(scale) != 3 for scale in self.anchors):
            raise ValueError("anchors must be 3 scales x 3 (w, h) pairs")
        if any(w <= 0 or h <= 0 for scale in self.anchors for w, h in scale):
            raise ValueError("anchors must be positive")
        if self.csam_variant.has_heads and any(c % self.heads for c in self.stage_channels):
            raise ValueError(f"stage_channels must be divisible by {self.heads} for multi-head variants")
        if self.shake_shake and not self.csam_variant.has_branches:
            raise ValueError("shake_shake needs a multi-branch variant")
        return self

    @property
    def num_anchors(self) -> int:
        return 3

    @property
    def prediction_channels(self) -> int:
        return self.num_anchors * (5 + self.num_classes)


class TrainConfig(BaseModel):
    epochs: int = Field(default=225, ge=0)
    warmup_epochs: int = Field(default=20, ge=0)
    peak_lr: float = Field(default=0.0026, gt=0)
    momentum: float = Field(default=0.996, ge=0, lt=1)
    weight_decay: float = Field(default=0.0005, ge=0)
    label_smoothing: float = Field(default=0.01, ge=0, lt=1)
    batch_size: int = Field(default=32, gt=0)
    accumulate_steps: int = Field(default=1, gt=0)
    focal_gamma: float = Field(default=2.0, ge=0)
    focal_alpha: float = Field(default=0.25, gt=0, le=1)
    dropblock_enabled: bool = False
    dropblock_block_size: int = Field(default=3, gt=0)
    dropblock_keep_start: float = Field(default=1.0, gt=0, le=1)
    dropblock_keep_end: float = Field(default=0.90, gt=0, le=1)
    shake_shake: bool = False
    loss_weights: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    augment_policy: str = "none"
    mosaic: bool = False
    eval_every: int = Field(default=1, ge=0)

    @model_validator(mode="after")
    def check_schedule(self):
        if self.epochs > 0 and self.warmup_epochs >= self.epochs:
            raise ValueError(f"warmup_epochs ({self.warmup_epochs}) must be < epochs ({self.epochs})")
        if not self.dropblock_keep_end <= self.dropblock_keep_start <= 1:
            raise ValueError("need dropblock_keep_end <= dropblock_keep_start <= 1")
        if any(w < 0 for w in self.loss_weights):
            raise ValueError("loss_weights must be non-negative")
        return self


class ApInterpolation(str, Enum):
    ALL_POINTS = "ALL_POINTS"
    ELEVEN_POINT = "ELEVEN_POINT"


class EvalConfig(BaseModel):
    iou_threshold: float = Field(default=0.5, gt=0, le=1)
    conf_threshold: float = Field(default=0.005, gt=0, le=1)
    nms_iou: float = Field(default=0.5, gt=0, le=1)
    ap_interpolation: ApInterpolation = ApInterpolation.ALL_POINTS


class AugmentPolicyName(str, Enum):
    RANDAUGMENT = "randaugment"
    AUGMIX = "augmix"
    NONE = "none"


class AugmentPolicy(BaseModel):
    policy: AugmentPolicyName = AugmentPolicyName.NONE
    randaug_n: int = Field(default=2, ge=0)
    randaug_m: int = Field(default=10, ge=0, le=30)
    augmix_chains: int = Field(default=3, gt=0)
    augmix_severity: int = Field(default=7, ge=0, le=10)
    augmix_depth_range: Tuple[int, int] = (1, 3)
    augmix_ops: Optional[List[str]] = None
    geometric_prob: float = Field(default=0.5, ge=0, le=1)
    mix_alpha: float = Field(default=1.0, gt=0)
    mix_beta: float = Field(default=1.0, gt=0)

    @field_validator("augmix_depth_range")
    @classmethod
    def check_depth(cls, v):
        lo, hi = v
        if lo < 1 or hi < lo:
            raise ValueError("augmix_depth_range must satisfy 1 <= lo <= hi")
        return v

    @field_validator("augmix_ops")
    @classmethod
    def check_chain_ops(cls, v):
        if v is None:
            return v
        from yoloformer.augment.photometric import PHOTOMETRIC_OPS
        from yoloformer.augment.geometric import GEOMETRIC_NAMES
        for name in v:
            if name in GEOMETRIC_NAMES:
                raise ValueError(f"geometric op '{name}' is not allowed in an AugMix chain")
            if name not in PHOTOMETRIC_OPS:
                raise ValueError(f"unknown op '{name}'")
        return v


class SyntheticSpec(BaseModel):
    n_images: int = Field(default=16, ge=0)
    image_size: int = Field(default=96, gt=0)
    classes: List[str] = Field(default_factory=lambda: ["circle", "square"])
    objects_per_image: Tuple[int, int] = (1, 3)
    size_range: Tuple[int, int] = (10, 28)
    seed: int = Field(default=0, ge=0)

    @field_validator("classes")
    @classmethod
    def check_classes(cls, v):
        allowed = {"circle", "square", "triangle"}
        if not v or any(c not in allowed for c in v):
            raise ValueError(f"classes must be drawn from {sorted(allowed)}")
        return v

    @model_validator(mode="after")
    def check_ranges(self):
        lo, hi = self.objects_per_image
        if lo < 0 or hi < lo:
            raise ValueError("objects_per_image must satisfy 0 <= lo <= hi")
        smin, smax = self.size_range
        if smin < 4 or smax < smin or smax * 2 > self.image_size:
            raise ValueError("size_range must satisfy 4 <= min <= max <= image_size / 2")
        return self
