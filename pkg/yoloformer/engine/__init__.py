from yoloformer.engine.tensor import DTYPE, Tape, TapeEntry, Tensor, backward, set_check_finite
from yoloformer.engine.optim import Param, sgd_step
from yoloformer.engine.functional import (
    BatchNormState, batch_norm, channel_concat, channel_split, conv2d, elementwise_add,
    elementwise_mul, mish, sigmoid, upsample_bilinear2x,
)

__all__ = [
    "DTYPE", "Tape", "TapeEntry", "Tensor", "backward", "set_check_finite", "Param", "sgd_step",
    "BatchNormState", "batch_norm", "channel_concat", "channel_split", "conv2d",
    "elementwise_add", "elementwise_mul", "mish", "sigmoid", "upsample_bilinear2x",
]
