"""
Dense tensors and the gradient tape.

A ``Tensor`` wraps a numpy array. Operations in ``engine.functional`` record a
``TapeEntry`` on the active ``Tape`` whenever one of their inputs requires a
gradient; ``backward`` walks the tape in reverse and accumulates gradients into
the leaf tensors.
"""
import logging
from contextvars import ContextVar
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from yoloformer.utils.exceptions import NumericalError, ShapeError, TapeError

logger = logging.getLogger(__name__)

DTYPE = np.float32

_active_tape: ContextVar[Optional["Tape"]] = ContextVar("active_tape", default=None)
_check_finite: ContextVar[bool] = ContextVar("check_finite", default=True)


def set_check_finite(enabled: bool):
    """Toggle the post-op NaN/Inf check for the current context"""
    _check_finite.set(bool(enabled))


class Tensor:
    """N-dimensional float array with optional gradient tape participation"""

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DTYPE
        self.data: np.ndarray = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    # convenience
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{req}{nm})"

    # operators delegate to engine.functional
    def __add__(self, other):
        from yoloformer.engine import functional as F
        return F.add(self, other)

    def __radd__(self, other):
        from yoloformer.engine import functional as F
        return F.add(other, self)

    def __sub__(self, other):
        from yoloformer.engine import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from yoloformer.engine import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from yoloformer.engine import functional as F
        return F.mul(self, other)

    def __rmul__(self, other):
        from yoloformer.engine import functional as F
        return F.mul(other, self)

    def __truediv__(self, other):
        from yoloformer.engine import functional as F
        return F.div(self, other)

    def __rtruediv__(self, other):
        from yoloformer.engine import functional as F
        return F.div(other, self)

    def __neg__(self):
        from yoloformer.engine import functional as F
        return F.neg(self)

    def __pow__(self, exponent: float):
        from yoloformer.engine import functional as F
        return F.pow_scalar(self, exponent)

    def __getitem__(self, key):
        from yoloformer.engine import functional as F
        return F.getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        from yoloformer.engine import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from yoloformer.engine import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from yoloformer.engine import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes):
        from yoloformer.engine import functional as F
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return F.transpose(self, axes)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class TapeEntry:
    """One recorded operation: inputs, output and its backward rule"""
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward: BackwardFn):
        self.op = op
        self.inputs = tuple(inputs)
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of operations; entries are appended in topological order"""

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self._produced: Dict[int, int] = {}
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, entry: TapeEntry):
        self._produced[id(entry.output)] = len(self.entries)
        self.entries.append(entry)

    def contains(self, tensor: Tensor) -> bool:
        return id(tensor) in self._produced


def active_tape() -> Optional[Tape]:
    return _active_tape.get()


def as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    """Wrap constants; numbers adopt the dtype of ``like``"""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    if dtype is None:
        dtype = value.dtype if isinstance(value, np.ndarray) and value.dtype.kind == "f" else DTYPE
    return Tensor(np.asarray(value, dtype=dtype), dtype=dtype)


def record(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Create an op output and record it when any input needs a gradient"""
    if _check_finite.get() and data.dtype.kind == "f" and not np.all(np.isfinite(data)):
        raise NumericalError(f"Non-finite values produced by {op}", operation=op)
    tape = _active_tape.get()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad, dtype=data.dtype)
    if needs_grad:
        tape.record(TapeEntry(op, inputs, out, backward))
    return out


def backward(loss: Tensor, tape: Tape, params: Optional[Sequence] = None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    ``params`` (objects exposing ``.value``) that the loss does not reach get a
    zero gradient.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}", dimension="loss")
    if not tape.contains(loss):
        raise TapeError("backward called on a tensor that is not recorded on the tape")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: Dict[int, Tensor] = {}
    last = tape._produced[id(loss)]

    for entry in reversed(tape.entries[:last + 1]):
        grad_out = grads.pop(id(entry.output), None)
        if grad_out is None:
            continue
        input_grads = entry.backward(grad_out)
        for inp, g in zip(entry.inputs, input_grads):
            if g is None or not inp.requires_grad:
                continue
            if g.shape != inp.shape:
                raise ShapeError(
                    f"{entry.op} backward produced gradient {g.shape} for input {inp.shape}",
                    dimension=entry.op
                )
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
            if not tape.contains(inp):
                leaves[key] = inp

    for key, leaf in leaves.items():
        g = grads[key].astype(leaf.dtype, copy=False)
        leaf.grad = g if leaf.grad is None else leaf.grad + g

    if params is not None:
        for p in params:
            if p.value.grad is None:
                p.value.grad = np.zeros_like(p.value.data)
    logger.debug("backward visited %d tape entries, %d leaves", last + 1, len(leaves))
