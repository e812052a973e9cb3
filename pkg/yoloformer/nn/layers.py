"""
Module tree, parameter naming and the convolution building blocks.

Parameters are named by their attribute path from the root module, e.g.
``backbone.stage3.tf0.csam.q.conv1.weight``; batch-norm running statistics
live under ``<bn>.running_mean`` / ``<bn>.running_var`` and SGD momentum
buffers under ``<param>.momentum``.
"""
import logging
import math
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from yoloformer.engine import functional as F
from yoloformer.engine.functional import BatchNormState, ReduceHook
from yoloformer.engine.optim import Param
from yoloformer.engine.tensor import DTYPE, Tensor
from yoloformer.models.config_models import Mode
from yoloformer.utils.config import settings
from yoloformer.utils.exceptions import CheckpointError, ValidationError
from yoloformer.utils.rng import SeededRng

logger = logging.getLogger(__name__)


class RunContext:
    """Per-forward settings: mode, the step RNG and regularizer knobs"""

    def __init__(self, mode: Mode = Mode.EVAL, rng: Optional[SeededRng] = None,
                 shake_override=None, dropblock_keep: float = 1.0, dropblock_block: int = 3,
                 bn_reduce: Optional[ReduceHook] = None):
        self.mode = Mode(mode)
        self.rng = rng
        self.shake_override = shake_override
        self.dropblock_keep = float(dropblock_keep)
        self.dropblock_block = int(dropblock_block)
        self.bn_reduce = bn_reduce

    @classmethod
    def eval(cls) -> "RunContext":
        return cls(mode=Mode.EVAL)

    @classmethod
    def train(cls, rng: SeededRng, **kwargs) -> "RunContext":
        return cls(mode=Mode.TRAIN, rng=rng, **kwargs)

    @property
    def training(self) -> bool:
        return self.mode == Mode.TRAIN

    def module_rng(self, path: str) -> SeededRng:
        """Stream owned by one module for this step"""
        if self.rng is None:
            raise ValidationError("train-mode regularizers need a step rng", field="rng")
        return self.rng.derive(path or "root")

    def shake_coefficients(self, path: str):
        from yoloformer.nn.regularizers import sample_shake_coefficients
        if self.shake_override is not None:
            return self.shake_override
        if not self.training:
            return sample_shake_coefficients(None, Mode.EVAL)
        return sample_shake_coefficients(self.module_rng(f"{path}.shake"), Mode.TRAIN)


class Module:
    """Base class: children and parameters are discovered from attributes"""

    path: str = ""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_children(self) -> Iterator[Tuple[str, "Module"]]:
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for key, child in self.named_children():
            yield from child.named_modules(f"{prefix}.{key}" if prefix else key)

    def _own_parameters(self) -> Iterator[Tuple[str, Param]]:
        for key, value in vars(self).items():
            if isinstance(value, Param):
                yield key, value

    def named_parameters(self) -> Iterator[Tuple[str, Param]]:
        for path, module in self.named_modules():
            for key, param in module._own_parameters():
                yield (f"{path}.{key}" if path else key), param

    def parameters(self) -> List[Param]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.value.size for p in self.parameters()))

    def named_bn_states(self) -> Iterator[Tuple[str, BatchNormState]]:
        for path, module in self.named_modules():
            if isinstance(module, BatchNorm2d):
                yield path, module.state

    def bind_names(self, prefix: str = "") -> "Module":
        """Stamp module paths and parameter names from the attribute tree"""
        for path, module in self.named_modules(prefix):
            module.path = path
            for key, param in module._own_parameters():
                param.name = f"{path}.{key}" if path else key
        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            raise ValidationError("parameter names are not unique", field="parameters")
        return self

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, param in self.named_parameters():
            state[name] = param.value.data
        for name, bn in self.named_bn_states():
            state[f"{name}.running_mean"] = bn.running_mean
            state[f"{name}.running_var"] = bn.running_var
        for name, param in self.named_parameters():
            state[f"{name}.momentum"] = param.momentum_buffer
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True):
        expected = self.state_dict()
        missing = [k for k in expected if k not in state]
        unexpected = [k for k in state if k not in expected]
        if strict and (missing or unexpected):
            raise CheckpointError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for key, current in expected.items():
            if key in state and tuple(np.shape(state[key])) != current.shape:
                raise CheckpointError(f"{key}: shape {np.shape(state[key])} != {current.shape}")

        for name, param in self.named_parameters():
            if name in state:
                param.assign(state[name])
            if f"{name}.momentum" in state:
                param.momentum_buffer = np.asarray(state[f"{name}.momentum"], dtype=param.value.dtype).copy()
        for name, bn in self.named_bn_states():
            if f"{name}.running_mean" in state:
                bn.running_mean = np.asarray(state[f"{name}.running_mean"], dtype=bn.running_mean.dtype).copy()
                bn.running_var = np.asarray(state[f"{name}.running_var"], dtype=bn.running_var.dtype).copy()

    def astype(self, dtype) -> "Module":
        """Cast parameters, buffers and running stats (float64 for gradcheck)"""
        for _, param in self.named_parameters():
            param.astype(dtype)
        for _, bn in self.named_bn_states():
            bn.astype(dtype)
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.value.grad = None


class ModuleList(Module):
    def __init__(self, modules=()):
        self._modules: List[Module] = list(modules)

    def named_children(self):
        for i, m in enumerate(self._modules):
            yield str(i), m

    def __iter__(self):
        return iter(self._modules)

    def __len__(self) -> int:
        return len(self._modules)

    def __getitem__(self, index: int) -> Module:
        return self._modules[index]


class Conv2d(Module):
    """He-initialized convolution; pad keeps the extent at stride 1"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 1, stride: int = 1,
                 rng: Optional[SeededRng] = None, bias: bool = True):
        rng = rng if rng is not None else SeededRng(0, "init")
        fan_in = in_channels * kernel_size * kernel_size
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weight = Param(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape).astype(DTYPE))
        self.bias = Param(np.zeros(out_channels, dtype=DTYPE)) if bias else None
        self.stride = stride
        self.pad = kernel_size // 2

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: Tensor, ctx: Optional[RunContext] = None) -> Tensor:
        bias = self.bias.value if self.bias is not None else None
        return F.conv2d(x, self.weight.value, bias, stride=self.stride, pad=self.pad)


class BatchNorm2d(Module):
    def __init__(self, channels: int, eps: Optional[float] = None, momentum: Optional[float] = None):
        self.gamma = Param(np.ones(channels, dtype=DTYPE))
        self.beta = Param(np.zeros(channels, dtype=DTYPE))
        self.state = BatchNormState(channels)
        self.eps = settings.bn_eps if eps is None else eps
        self.momentum = settings.bn_momentum if momentum is None else momentum

    def forward(self, x: Tensor, ctx: Optional[RunContext] = None) -> Tensor:
        ctx = ctx or RunContext.eval()
        return F.batch_norm(x, self.gamma.value, self.beta.value, self.state, mode=ctx.mode.value,
                            momentum=self.momentum, eps=self.eps, reduce_hook=ctx.bn_reduce)


class ConvBnMish(Module):
    """conv (no bias) -> BN -> mish"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 1, stride: int = 1,
                 rng: Optional[SeededRng] = None):
        self.conv = Conv2d(in_channels, out_channels, kernel_size, stride, rng=rng, bias=False)
        self.bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor, ctx: Optional[RunContext] = None) -> Tensor:
        return F.mish(self.bn(self.conv(x), ctx))
