"""
Resolution x variant throughput sweep with the SH >= MHMB ordering check.
"""
import json
import logging
from typing import Dict, List, Optional, Sequence

from yoloformer.evaluation.benchmark import fps_bench, hardware_descriptor
from yoloformer.models.config_models import CsamVariant, DetectorConfig
from yoloformer.models.detection_models import BenchReport
from yoloformer.nn.detector import Detector
from yoloformer.utils.config import validated
from yoloformer.utils.rng import SeededRng

logger = logging.getLogger(__name__)

PRESET_SIZES = (320, 416, 512)
RESIDUAL = "residual"


class BenchmarkService:
    def __init__(self, base: DetectorConfig, seed: int = 0, n_images: int = 20, warmup: int = 2):
        self.base = base
        self.seed = seed
        self.n_images = n_images
        self.warmup = warmup

    def build(self, variant: str, size: int) -> Detector:
        if variant == RESIDUAL:
            overrides = {"block_type": "residual", "csam_variant": CsamVariant.SINGLE_HEAD, "shake_shake": False}
        else:
            overrides = {"block_type": "transformer", "csam_variant": CsamVariant(variant)}
            if not overrides["csam_variant"].has_branches:
                overrides["shake_shake"] = False
        values = {**self.base.model_dump(), "input_size": size, **overrides}
        return Detector(validated(DetectorConfig, "bench", **values), seed=self.seed)

    def run(self, sizes: Sequence[int] = PRESET_SIZES,
            variants: Sequence[str] = ("sh", "mhmb")) -> List[BenchReport]:
        reports = []
        for size in sizes:
            for variant in variants:
                model = self.build(variant, size)
                rng = SeededRng(self.seed, "bench", counter=size)
                reports.append(fps_bench(model, size, self.n_images, self.warmup, rng))
        return reports

    @staticmethod
    def ordering(reports: Sequence[BenchReport]) -> Dict[int, Optional[bool]]:
        """Per size: SH throughput >= MHMB throughput, None when either is missing"""
        result: Dict[int, Optional[bool]] = {}
        for size in sorted({r.input_size for r in reports}):
            fps = {r.variant: r.fps for r in reports if r.input_size == size}
            if "sh" in fps and "mhmb" in fps:
                result[size] = fps["sh"] >= fps["mhmb"]
            else:
                result[size] = None
        return result


def bench_to_json(reports: Sequence[BenchReport]) -> str:
    payload = {
        "hardware": hardware_descriptor(),
        "results": [r.model_dump() for r in reports],
        "sh_ge_mhmb": {str(k): v for k, v in BenchmarkService.ordering(reports).items()},
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def render_bench(reports: Sequence[BenchReport]) -> str:
    """Aligned size x variant table of FPS and latency quantiles"""
    lines = [f"{'size':>5}  {'variant':<9}  {'FPS':>8}  {'p50 ms':>8}  {'p95 ms':>8}"]
    for r in reports:
        lines.append(f"{r.input_size:>5}  {r.variant:<9}  {r.fps:8.2f}  {r.latency_p50_ms:8.1f}  "
                     f"{r.latency_p95_ms:8.1f}")
    for size, ok in BenchmarkService.ordering(reports).items():
        if ok is not None:
            lines.append(f"{size}: SH >= MHMB {'yes' if ok else 'NO'}")
    if reports:
        lines.append(f"hardware: {reports[0].hardware}")
    return "\n".join(lines)
