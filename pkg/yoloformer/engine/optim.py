import logging
from typing import Iterable, Optional

import numpy as np

from yoloformer.engine.tensor import Tensor
from yoloformer.utils.exceptions import OptimizationError

logger = logging.getLogger(__name__)


class Param:
    """Trainable tensor with its SGD momentum buffer"""

    def __init__(self, value: np.ndarray, name: str = ""):
        self.value = Tensor(value, requires_grad=True, dtype=value.dtype)
        self.momentum_buffer = np.zeros_like(self.value.data)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.value.grad

    def assign(self, data: np.ndarray):
        """Replace the value in place of the optimizer, keeping dtype"""
        self.value = Tensor(np.asarray(data, dtype=self.value.dtype), requires_grad=True,
                            dtype=self.value.dtype)

    def astype(self, dtype):
        self.value = Tensor(self.value.data.astype(dtype), requires_grad=True, dtype=dtype)
        self.momentum_buffer = self.momentum_buffer.astype(dtype)
        return self

    def __repr__(self) -> str:
        return f"Param(name={self.name!r}, shape={self.shape})"


def sgd_step(params: Iterable[Param], lr: float, momentum: float, weight_decay: float = 0.0):
    """buf <- momentum*buf + grad + wd*value; value <- value - lr*buf; grads cleared"""
    # the warmup and cosine endpoints are exactly 0
    if lr < 0:
        raise OptimizationError(f"learning rate must be non-negative, got {lr}")
    params = list(params)
    for p in params:
        if p.value.grad is None:
            raise OptimizationError(f"Parameter {p.name} has no gradient", param=p.name)

    for p in params:
        dtype = p.value.dtype
        value = p.value.data
        buf = (np.asarray(momentum, dtype=dtype) * p.momentum_buffer
               + p.value.grad.astype(dtype, copy=False)
               + np.asarray(weight_decay, dtype=dtype) * value)
        p.momentum_buffer = buf
        p.value.data = value - np.asarray(lr, dtype=dtype) * buf
        p.value.grad = None
    logger.debug("sgd_step lr=%.6g momentum=%.4g wd=%.4g over %d params", lr, momentum, weight_decay, len(params))
