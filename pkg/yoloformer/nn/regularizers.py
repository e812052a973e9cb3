"""
Shake-shake coefficients and DropBlock.
"""
import logging
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, Field, model_validator

from yoloformer.engine import functional as F
from yoloformer.engine.tensor import Tensor
from yoloformer.models.config_models import Mode
from yoloformer.utils.exceptions import ValidationError
from yoloformer.utils.rng import SeededRng

logger = logging.getLogger(__name__)

EVAL_PAIR = (0.5, 0.5)


class ShakeMode(str, Enum):
    TRAIN_FORWARD = "train-forward"
    TRAIN_BACKWARD = "train-backward"
    EVAL = "eval"


class ShakeCoefficients(BaseModel):
    forward_pair: Tuple[float, float] = EVAL_PAIR
    backward_pair: Tuple[float, float] = EVAL_PAIR
    mode: Mode = Mode.EVAL

    @model_validator(mode="after")
    def check_pairs(self):
        if any(v < 0 for v in self.forward_pair + self.backward_pair):
            raise ValueError("shake coefficients must be non-negative")
        if self.mode == Mode.EVAL and (self.forward_pair != EVAL_PAIR or self.backward_pair != EVAL_PAIR):
            raise ValueError("eval-mode shake coefficients are fixed at (0.5, 0.5)")
        return self


def sample_shake_pair(rng: Optional[SeededRng], mode: ShakeMode) -> Tuple[float, float]:
    """uniform(0,1) pair forward, Beta(1,1) pair backward, (0.5, 0.5) in eval"""
    mode = ShakeMode(mode)
    if mode == ShakeMode.EVAL:
        return EVAL_PAIR
    if rng is None:
        raise ValidationError("shake-shake sampling needs an rng", field="rng")
    if mode == ShakeMode.TRAIN_FORWARD:
        a, b = rng.uniform(0.0, 1.0, size=2)
    else:
        a, b = rng.beta(1.0, 1.0, size=2)
    return float(a), float(b)


def sample_shake_coefficients(rng: Optional[SeededRng], mode: Mode) -> ShakeCoefficients:
    """One step's coefficients; forward and backward pairs are independent draws"""
    if Mode(mode) == Mode.EVAL:
        return ShakeCoefficients()
    forward = sample_shake_pair(rng, ShakeMode.TRAIN_FORWARD)
    backward = sample_shake_pair(rng, ShakeMode.TRAIN_BACKWARD)
    return ShakeCoefficients(forward_pair=forward, backward_pair=backward, mode=Mode.TRAIN)


def dropblock_gamma(keep_prob: float, block: int, height: int, width: int) -> float:
    """Seed rate (1-keep)/block^2 * H*W/((H-block+1)(W-block+1))"""
    valid = (height - block + 1) * (width - block + 1)
    return (1.0 - keep_prob) / (block * block) * (height * width) / valid


def dropblock_mask(shape, keep_prob: float, block: int, rng: SeededRng) -> np.ndarray:
    """Binary keep-mask with block x block holes around Bernoulli seeds"""
    n, c, h, w = shape
    gamma = dropblock_gamma(keep_prob, block, h, w)
    seeds = rng.bernoulli(gamma, size=(n, c, h - block + 1, w - block + 1)).astype(np.uint8)
    # a seed at (i, j) covers rows i..i+block-1 and cols j..j+block-1
    padded = np.pad(seeds, ((0, 0), (0, 0), (block - 1, block - 1), (block - 1, block - 1)))
    covered = sliding_window_view(padded, (block, block), axis=(2, 3)).max(axis=(-2, -1))
    return 1 - covered


def dropblock(x: Tensor, keep_prob: float, block: int = 3, mode: Mode = Mode.TRAIN,
              rng: Optional[SeededRng] = None) -> Tensor:
    """Structured dropout; identity in eval mode or at keep_prob 1"""
    if not 0.0 < keep_prob <= 1.0:
        raise ValidationError(f"keep_prob {keep_prob} outside (0, 1]", field="keep_prob")
    if Mode(mode) == Mode.EVAL or keep_prob >= 1.0:
        return x
    if x.ndim != 4:
        raise ValidationError(f"dropblock expects NCHW input, got {x.shape}", field="x")
    if rng is None:
        raise ValidationError("train-mode dropblock needs an rng", field="rng")
    block = min(block, x.shape[2], x.shape[3])

    mask = dropblock_mask(x.shape, keep_prob, block, rng)
    kept = int(mask.sum())
    scale = mask.size / kept if kept else 0.0
    return F.mul(x, (mask * scale).astype(x.dtype))
