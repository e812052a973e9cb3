"""
Differentiable primitives.

Every function takes and returns ``Tensor`` objects and records its backward
rule on the active tape. Single precision is the working dtype; every op also
runs in double precision, which the gradient checker relies on.
"""
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from yoloformer.engine.tensor import Tensor, as_tensor, record
from yoloformer.utils.exceptions import ShapeError


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _pair(a, b) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# ---------------------------------------------------------------------------
# element-wise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record("add", a.data + b.data, (a, b), _backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record("sub", a.data - b.data, (a, b), _backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record("mul", a.data * b.data, (a, b), _backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return record("div", a.data / b.data, (a, b), _backward)


def neg(x: Tensor) -> Tensor:
    return record("neg", -x.data, (x,), lambda g: (-g,))


def elementwise_add(a: Tensor, b: Tensor) -> Tensor:
    """Strict-shape addition"""
    if a.shape != b.shape:
        raise ShapeError(f"elementwise_add shapes differ: {a.shape} vs {b.shape}", dimension="shape")
    return add(a, b)


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    """Strict-shape multiplication"""
    if a.shape != b.shape:
        raise ShapeError(f"elementwise_mul shapes differ: {a.shape} vs {b.shape}", dimension="shape")
    return mul(a, b)


def pow_scalar(x: Tensor, exponent: float) -> Tensor:
    out = np.power(x.data, exponent)

    def _backward(g):
        return (g * exponent * np.power(x.data, exponent - 1),)

    return record("pow", out, (x,), _backward)


def maximum(a, b) -> Tensor:
    a, b = _pair(a, b)
    take_a = a.data >= b.data

    def _backward(g):
        return (_unbroadcast(np.where(take_a, g, 0), a.shape),
                _unbroadcast(np.where(take_a, 0, g), b.shape))

    return record("maximum", np.where(take_a, a.data, b.data), (a, b), _backward)


def minimum(a, b) -> Tensor:
    a, b = _pair(a, b)
    take_a = a.data <= b.data

    def _backward(g):
        return (_unbroadcast(np.where(take_a, g, 0), a.shape),
                _unbroadcast(np.where(take_a, 0, g), b.shape))

    return record("minimum", np.where(take_a, a.data, b.data), (a, b), _backward)


def clip(x: Tensor, low: Optional[float] = None, high: Optional[float] = None) -> Tensor:
    out = np.clip(x.data, low, high)
    inside = np.ones(x.shape, dtype=bool)
    if low is not None:
        inside &= x.data >= low
    if high is not None:
        inside &= x.data <= high

    return record("clip", out, (x,), lambda g: (np.where(inside, g, 0),))


# ---------------------------------------------------------------------------
# transcendental / activations
# ---------------------------------------------------------------------------

def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return record("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return record("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    half = np.asarray(0.5, dtype=v.dtype)
    return half * (1 + np.tanh(half * v))


def sigmoid(x: Tensor) -> Tensor:
    """Element-wise 1/(1+exp(-x))"""
    out = _sigmoid(x.data)
    return record("sigmoid", out, (x,), lambda g: (g * out * (1 - out),))


def softplus(x: Tensor) -> Tensor:
    """ln(1+exp(x)), overflow-safe"""
    out = np.logaddexp(np.zeros((), dtype=x.dtype), x.data)
    return record("softplus", out, (x,), lambda g: (g * _sigmoid(x.data),))


def mish(x: Tensor) -> Tensor:
    """x * tanh(softplus(x))"""
    sp = np.logaddexp(np.zeros((), dtype=x.dtype), x.data)
    t = np.tanh(sp)
    out = x.data * t

    def _backward(g):
        return (g * (t + x.data * (1 - t * t) * _sigmoid(x.data)),)

    return record("mish", out, (x,), _backward)


# ---------------------------------------------------------------------------
# reductions and shape plumbing
# ---------------------------------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record("sum", np.asarray(out, dtype=x.dtype), (x,), _backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / max(count, 1))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return record("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,),
                  lambda g: (g.transpose(inverse),))


def getitem(x: Tensor, key) -> Tensor:
    out = x.data[key]

    def _backward(g):
        full = np.zeros(x.shape, dtype=x.dtype)
        np.add.at(full, key, g)
        return (full,)

    return record("getitem", np.array(out, dtype=x.dtype), (x,), _backward)


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = list(xs)
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])

    def _backward(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs)))

    return record("concat", np.concatenate([t.data for t in xs], axis=axis), xs, _backward)


def channel_concat(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate NCHW tensors along channels"""
    xs = list(xs)
    if not xs:
        raise ShapeError("channel_concat needs at least one tensor", dimension="channels")
    ref = xs[0].shape
    for t in xs[1:]:
        if t.ndim != 4 or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeError(f"channel_concat extent mismatch: {ref} vs {t.shape}", dimension="spatial")
    return concat(xs, axis=1)


def channel_split(x: Tensor, parts: int) -> List[Tensor]:
    """Split NCHW tensor into ``parts`` equal channel groups"""
    channels = x.shape[1]
    if parts <= 0 or channels % parts:
        raise ShapeError(f"{channels} channels are not divisible into {parts} parts", dimension="channels")
    step = channels // parts
    return [getitem(x, (slice(None), slice(i * step, (i + 1) * step))) for i in range(parts)]


# ---------------------------------------------------------------------------
# convolution, normalization, resampling
# ---------------------------------------------------------------------------

def _output_extent(size: int, kernel: int, stride: int, pad: int, dimension: str) -> int:
    span = size + 2 * pad - kernel
    if span < 0:
        raise ShapeError(f"{dimension} extent {size} (pad {pad}) is smaller than kernel {kernel}",
                         dimension=dimension)
    remainder = span % stride
    # trailing positions the stride skips must be padding only
    if remainder > pad:
        raise ShapeError(
            f"{dimension}: (size {size} + 2*pad {pad} - kernel {kernel}) leaves {remainder} "
            f"input rows uncovered at stride {stride}",
            dimension=dimension
        )
    return span // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride: int = 1, pad: int = 0) -> Tensor:
    """Direct 2-D cross-correlation, NCHW input, [Cout,Cin,kh,kw] weight"""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}",
                         dimension="rank")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d input has {cin} channels, weight expects {wcin}", dimension="channels")
    if kh not in (1, 3) or kw not in (1, 3):
        raise ShapeError(f"conv2d kernel {kh}x{kw} not supported", dimension="kernel")
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d stride {stride} / pad {pad} invalid", dimension="stride")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d bias shape {bias.shape} != ({cout},)", dimension="bias")
    ho = _output_extent(h, kh, stride, pad, "height")
    wo = _output_extent(w, kw, stride, pad, "width")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out, dtype=x.dtype)

    def _backward(g):
        gw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3])).astype(weight.dtype, copy=False)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(g, weight.data[:, :, i, j], axes=([1], [0]))
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contrib.transpose(0, 3, 1, 2)
        gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        return gx, gw, gb

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return record("conv2d", out, inputs, _backward)


class BatchNormState:
    """Running statistics of one batch-norm layer"""

    def __init__(self, channels: int, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def astype(self, dtype):
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)
        return self


# (sums, squared sums, count) -> reduced across workers
ReduceHook = Callable[[np.ndarray, np.ndarray, int], Tuple[np.ndarray, np.ndarray, int]]


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, mode: str = "train",
               momentum: float = 0.99, eps: float = 1e-5, reduce_hook: Optional[ReduceHook] = None) -> Tensor:
    """Per-channel normalization over N,H,W.

    Train mode normalizes with batch statistics and moves the running stats
    ``running = momentum * running + (1 - momentum) * batch``; eval mode uses the
    running stats. ``reduce_hook`` receives per-channel sums so a multi-worker
    reduction can be plugged in; without one, single-device statistics are used.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects NCHW input, got {x.shape}", dimension="rank")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm affine shape mismatch for {c} channels", dimension="channels")
    shape = (1, c, 1, 1)

    if getattr(mode, "value", mode) == "train":
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if count < 2:
            raise ShapeError("batch_norm in train mode needs N*H*W >= 2", dimension="batch")
        if reduce_hook is None:
            mu = x.data.mean(axis=(0, 2, 3))
            var = ((x.data - mu.reshape(shape)) ** 2).mean(axis=(0, 2, 3))
        else:
            sums, sq_sums, count = reduce_hook(x.data.sum(axis=(0, 2, 3)),
                                               (x.data ** 2).sum(axis=(0, 2, 3)), count)
            mu = sums / count
            var = np.maximum(sq_sums / count - mu * mu, 0)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu.reshape(shape)) * inv_std.reshape(shape)
        out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

        state.running_mean = (momentum * state.running_mean + (1 - momentum) * mu).astype(state.running_mean.dtype)
        state.running_var = (momentum * state.running_var + (1 - momentum) * var).astype(state.running_var.dtype)

        def _backward(g):
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            dbeta = g.sum(axis=(0, 2, 3))
            dxhat = g * gamma.data.reshape(shape)
            dx = (inv_std.reshape(shape) / count) * (
                count * dxhat
                - dxhat.sum(axis=(0, 2, 3)).reshape(shape)
                - xhat * (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(shape)
            )
            return dx.astype(x.dtype, copy=False), dgamma, dbeta
    else:
        inv_std = 1.0 / np.sqrt(state.running_var.astype(x.dtype) + eps)
        xhat = (x.data - state.running_mean.astype(x.dtype).reshape(shape)) * inv_std.reshape(shape)
        out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

        def _backward(g):
            return ((g * gamma.data.reshape(shape) * inv_std.reshape(shape)).astype(x.dtype, copy=False),
                    (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3)))

    return record("batch_norm", out.astype(x.dtype, copy=False), (x, gamma, beta), _backward)


def bilinear_matrix(size: int, dtype=np.float32) -> np.ndarray:
    """[2*size, size] interpolation weights, align-corners=false"""
    m = np.zeros((2 * size, size), dtype=np.float64)
    for o in range(2 * size):
        src = max((o + 0.5) / 2.0 - 0.5, 0.0)
        i0 = min(int(np.floor(src)), size - 1)
        i1 = min(i0 + 1, size - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    return m.astype(dtype)


def upsample_bilinear2x(x: Tensor) -> Tensor:
    """Double H and W with bilinear interpolation (align-corners=false)"""
    if x.ndim != 4:
        raise ShapeError(f"upsample expects NCHW input, got {x.shape}", dimension="rank")
    uh = bilinear_matrix(x.shape[2], x.dtype)
    uw = bilinear_matrix(x.shape[3], x.dtype)
    out = np.matmul(np.matmul(uh, x.data), uw.T)

    def _backward(g):
        return (np.matmul(np.matmul(uh.T, g), uw),)

    return record("upsample_bilinear2x", out, (x,), _backward)


# ---------------------------------------------------------------------------
# regularizer plumbing
# ---------------------------------------------------------------------------

def shake_combine(branches: Sequence[Tensor], forward_coeffs: Sequence[float],
                  backward_coeffs: Sequence[float]) -> Tensor:
    """sum(alpha_i * b_i) forward; gradients scaled by beta_i instead of alpha_i"""
    branches = list(branches)
    if len(branches) != len(forward_coeffs) or len(branches) != len(backward_coeffs):
        raise ShapeError("shake_combine needs one coefficient per branch", dimension="branches")
    dtype = branches[0].dtype
    out = np.zeros(branches[0].shape, dtype=dtype)
    for b, alpha in zip(branches, forward_coeffs):
        out = out + np.asarray(alpha, dtype=dtype) * b.data

    def _backward(g):
        return tuple(np.asarray(beta, dtype=dtype) * g for beta in backward_coeffs)

    return record("shake_combine", out, branches, _backward)
