"""
Finite-difference suites over every differentiable building block.

Module suites cast the module to float64, feed its parameters back in as
checked inputs and reduce the output with a fixed random projection.
"""
import logging
import time
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from yoloformer.engine import functional as F
from yoloformer.engine.functional import BatchNormState
from yoloformer.engine.gradcheck import GradcheckResult, check_gradients
from yoloformer.engine.tensor import Tensor
from yoloformer.models.config_models import CsamConfig, CsamVariant, Mode, TransformerConfig
from yoloformer.nn.attention import CSAM, TransformerModule
from yoloformer.nn.layers import Module, RunContext
from yoloformer.nn.regularizers import ShakeCoefficients
from yoloformer.training.losses import classification_loss, focal_loss, giou_loss
from yoloformer.utils.exceptions import ValidationError
from yoloformer.utils.rng import SeededRng

logger = logging.getLogger(__name__)

MAX_COORDINATES = 48


def projected_sum(out: Tensor, seed: int = 7) -> Tensor:
    """sum(out * P) with P ~ N(0, 1) fixed by ``seed`` and the output shape"""
    proj = np.random.default_rng(seed).normal(size=out.shape).astype(out.dtype)
    return F.sum(out * proj)


def random_boxes(rng: SeededRng, k: int, size: float = 20.0) -> np.ndarray:
    xy = rng.uniform(0.0, size, size=(k, 2))
    wh = rng.uniform(2.0, size / 2, size=(k, 2))
    return np.concatenate([xy, xy + wh], axis=1)


def module_build(module: Module, forward: Callable[[Tensor], Tensor]):
    """Scalar build function over [input, *module parameters]"""
    params = module.parameters()

    def build(tensors: List[Tensor]) -> Tensor:
        for p, value in zip(params, tensors[1:]):
            p.value = value
        return projected_sum(forward(tensors[0]))

    return build, [p.value.data.copy() for p in params]


class GradcheckService:
    def __init__(self, seed: int = 0, tolerance: float = 1e-4, max_coordinates: int = MAX_COORDINATES):
        self.seed = seed
        self.tolerance = tolerance
        self.max_coordinates = max_coordinates
        self.suites: Dict[str, Callable[[], GradcheckResult]] = {
            "conv2d": self.check_conv2d,
            "conv2d_stride2": self.check_conv2d_stride2,
            "mish": self.check_mish,
            "sigmoid": self.check_sigmoid,
            "batch_norm": self.check_batch_norm,
            "upsample_bilinear2x": self.check_upsample,
            "csam_sh": lambda: self.check_csam(CsamVariant.SINGLE_HEAD),
            "csam_mb": lambda: self.check_csam(CsamVariant.MULTI_BRANCH),
            "csam_mh": lambda: self.check_csam(CsamVariant.MULTI_HEAD),
            "csam_mhmb": lambda: self.check_csam(CsamVariant.MULTI_HEAD_MULTI_BRANCH),
            "csam_mb_shake": lambda: self.check_csam(CsamVariant.MULTI_BRANCH, shake=True),
            "csam_mhmb_shake": lambda: self.check_csam(CsamVariant.MULTI_HEAD_MULTI_BRANCH, shake=True),
            "transformer": self.check_transformer,
            "giou_loss": self.check_giou,
            "focal_loss": self.check_focal,
            "bce_smoothing": self.check_bce,
        }

    def _rng(self, name: str) -> SeededRng:
        return SeededRng(self.seed, f"gradcheck-{name}")

    def _check(self, name: str, build, arrays: Sequence[np.ndarray]) -> GradcheckResult:
        return check_gradients(name, build, arrays, tolerance=self.tolerance,
                               max_coordinates=self.max_coordinates,
                               rng=np.random.default_rng(self.seed))

    # -- primitives ---------------------------------------------------------

    def check_conv2d(self) -> GradcheckResult:
        rng = self._rng("conv2d")
        arrays = [rng.normal(size=(2, 4, 6, 6)), rng.normal(size=(6, 4, 3, 3)), rng.normal(size=6)]
        return self._check("conv2d", lambda t: projected_sum(F.conv2d(t[0], t[1], t[2], stride=1, pad=1)), arrays)

    def check_conv2d_stride2(self) -> GradcheckResult:
        rng = self._rng("conv2d_stride2")
        arrays = [rng.normal(size=(2, 3, 6, 6)), rng.normal(size=(5, 3, 3, 3)), rng.normal(size=5)]
        return self._check("conv2d_stride2",
                           lambda t: projected_sum(F.conv2d(t[0], t[1], t[2], stride=2, pad=1)), arrays)

    def check_mish(self) -> GradcheckResult:
        x = self._rng("mish").normal(0.0, 2.0, size=(2, 8, 6, 6))
        return self._check("mish", lambda t: projected_sum(F.mish(t[0])), [x])

    def check_sigmoid(self) -> GradcheckResult:
        x = self._rng("sigmoid").normal(0.0, 2.0, size=(2, 8, 6, 6))
        return self._check("sigmoid", lambda t: projected_sum(F.sigmoid(t[0])), [x])

    def check_batch_norm(self) -> GradcheckResult:
        rng = self._rng("batch_norm")
        arrays = [rng.normal(1.0, 2.0, size=(2, 8, 6, 6)), rng.uniform(0.5, 1.5, size=8), rng.normal(size=8)]

        def build(t):
            state = BatchNormState(8, dtype=np.float64)
            return projected_sum(F.batch_norm(t[0], t[1], t[2], state, mode="train"))

        return self._check("batch_norm", build, arrays)

    def check_upsample(self) -> GradcheckResult:
        x = self._rng("upsample").normal(size=(2, 4, 3, 3))
        return self._check("upsample_bilinear2x", lambda t: projected_sum(F.upsample_bilinear2x(t[0])), [x])

    # -- modules ------------------------------------------------------------

    def check_csam(self, variant: CsamVariant, shake: bool = False) -> GradcheckResult:
        name = f"csam_{variant.value}" + ("_shake" if shake else "")
        rng = self._rng(name)
        config = CsamConfig(variant=variant, channels=8, shake_shake_enabled=shake)
        csam = CSAM(config, rng).bind_names("csam").astype(np.float64)
        override = None
        if shake:
            # finite differences only see the forward pair
            pair = tuple(float(v) for v in rng.uniform(0.0, 1.0, size=2))
            override = ShakeCoefficients(forward_pair=pair, backward_pair=pair, mode=Mode.TRAIN)
        ctx = RunContext.train(rng.derive("step"), shake_override=override)
        build, params = module_build(csam, lambda x: csam(x, ctx))
        x = rng.normal(size=(2, 8, 6, 6))
        return self._check(name, build, [x] + params)

    def check_transformer(self) -> GradcheckResult:
        rng = self._rng("transformer")
        config = TransformerConfig(in_channels=4, out_channels=8, csam=CsamConfig(channels=8))
        module = TransformerModule(config, rng).bind_names("tf").astype(np.float64)
        ctx = RunContext.train(rng.derive("step"))
        build, params = module_build(module, lambda x: module(x, ctx))
        x = rng.normal(size=(2, 4, 6, 6))
        return self._check("transformer", build, [x] + params)

    # -- losses -------------------------------------------------------------

    def check_giou(self) -> GradcheckResult:
        rng = self._rng("giou")
        pred = random_boxes(rng, 6)
        target = random_boxes(rng, 6)
        return self._check("giou_loss", lambda t: giou_loss(t[0], target), [pred])

    def check_focal(self) -> GradcheckResult:
        rng = self._rng("focal")
        logits = rng.normal(0.0, 2.0, size=64)
        targets = (rng.uniform(size=64) < 0.3).astype(np.float64)
        return self._check("focal_loss", lambda t: focal_loss(t[0], targets, 2.0, 0.25), [logits])

    def check_bce(self) -> GradcheckResult:
        rng = self._rng("bce")
        logits = rng.normal(0.0, 2.0, size=(10, 3))
        classes = rng.integers(0, 3, size=10)
        return self._check("bce_smoothing", lambda t: classification_loss(t[0], classes, 0.01), [logits])

    # -- runner -------------------------------------------------------------

    def run(self, names: Optional[Sequence[str]] = None) -> List[GradcheckResult]:
        names = list(names) if names else list(self.suites)
        unknown = [n for n in names if n not in self.suites]
        if unknown:
            raise ValidationError(f"unknown gradcheck suites {unknown}", field="suites")
        start = time.perf_counter()
        results = [self.suites[name]() for name in names]
        failed = [r.name for r in results if not r.passed]
        logger.info("gradcheck: %d suites in %.1fs, %d failed %s", len(results), time.perf_counter() - start,
                    len(failed), failed or "")
        return results


def render_results(results: Sequence[GradcheckResult]) -> str:
    width = max([len(r.name) for r in results] + [5])
    lines = [f"{'suite':<{width}}  {'max rel err':>12}  {'coords':>6}  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.max_rel_error:>12.3e}  {r.checked_coordinates:>6}  "
                     f"{'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
