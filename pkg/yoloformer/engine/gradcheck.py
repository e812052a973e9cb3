"""
Finite-difference gradient checking in double precision.
"""
import logging
from typing import Callable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from yoloformer.engine.tensor import Tape, Tensor, backward

logger = logging.getLogger(__name__)


class GradcheckResult(BaseModel):
    name: str
    max_rel_error: float
    checked_coordinates: int
    tolerance: float
    passed: bool


def _evaluate(build: Callable[[List[Tensor]], Tensor], arrays: Sequence[np.ndarray]) -> float:
    tensors = [Tensor(a, dtype=np.float64) for a in arrays]
    return float(build(tensors).data.reshape(-1)[0])


def analytic_gradients(build: Callable[[List[Tensor]], Tensor], arrays: Sequence[np.ndarray]) -> List[np.ndarray]:
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True, dtype=np.float64) for a in arrays]
    with Tape() as tape:
        loss = build(tensors)
    backward(loss, tape)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def numerical_gradient(build: Callable[[List[Tensor]], Tensor], arrays: Sequence[np.ndarray], index: int,
                       coordinates: Optional[np.ndarray] = None, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``build`` w.r.t. ``arrays[index]``"""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    target = arrays[index]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    coords = range(flat.size) if coordinates is None else coordinates
    for c in coords:
        original = flat[c]
        flat[c] = original + h
        plus = _evaluate(build, arrays)
        flat[c] = original - h
        minus = _evaluate(build, arrays)
        flat[c] = original
        grad.reshape(-1)[c] = (plus - minus) / (2 * h)
    return grad


def check_gradients(name: str, build: Callable[[List[Tensor]], Tensor], arrays: Sequence[np.ndarray],
                    tolerance: float = 1e-4, h: float = 1e-5, max_coordinates: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None) -> GradcheckResult:
    """Compare tape gradients with central differences for every input array.

    The error per array is ``max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-8)``
    over the checked coordinates; ``max_coordinates`` samples a subset of large arrays.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    analytic = analytic_gradients(build, arrays)
    worst = 0.0
    checked = 0
    for i, arr in enumerate(arrays):
        coords = None
        if max_coordinates is not None and arr.size > max_coordinates:
            gen = rng if rng is not None else np.random.default_rng(i)
            coords = np.sort(gen.choice(arr.size, size=max_coordinates, replace=False))
        numeric = numerical_gradient(build, arrays, i, coords, h)
        a = analytic[i].reshape(-1)
        n = numeric.reshape(-1)
        if coords is not None:
            a, n = a[coords], n[coords]
        scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0), 1e-8)
        err = float(np.max(np.abs(a - n), initial=0.0) / scale)
        worst = max(worst, err)
        checked += a.size
    result = GradcheckResult(name=name, max_rel_error=worst, checked_coordinates=checked,
                             tolerance=tolerance, passed=worst < tolerance)
    logger.info("gradcheck %s: max rel error %.3e over %d coordinates (%s)",
                name, worst, checked, "ok" if result.passed else "FAILED")
    return result
