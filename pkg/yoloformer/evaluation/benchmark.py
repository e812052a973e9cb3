"""
Throughput harness: eval-mode forward + decode + NMS on random images, one at
a time, single-threaded.
"""
import logging
import os
import platform
import time
from typing import Optional

import numpy as np

from yoloformer.models.detection_models import BenchReport
from yoloformer.nn.detector import Detector
from yoloformer.utils.exceptions import ValidationError
from yoloformer.utils.rng import SeededRng

logger = logging.getLogger(__name__)


def hardware_descriptor() -> str:
    return (f"{platform.system()} {platform.machine()} | {platform.processor() or 'unknown cpu'} | "
            f"{os.cpu_count()} cpus | python {platform.python_version()} | numpy {np.__version__}")


def fps_bench(model: Detector, input_size: Optional[int] = None, n_images: int = 20, warmup: int = 2,
              rng: Optional[SeededRng] = None, conf_threshold: float = 0.25, nms_iou: float = 0.5) -> BenchReport:
    """Frames per second = timed images / timed seconds; warmup runs are discarded"""
    size = input_size or model.config.input_size
    if size != model.config.input_size:
        raise ValidationError(f"model was built for {model.config.input_size}px, not {size}px",
                              field="input_size")
    if n_images <= warmup:
        raise ValidationError(f"n_images ({n_images}) must exceed warmup ({warmup})", field="n_images")
    rng = rng or SeededRng(0, "bench")

    latencies = []
    for k in range(n_images):
        image = rng.integers(0, 256, size=(size, size, 3)).astype(np.uint8)
        start = time.perf_counter()
        model.predict(image, conf_threshold=conf_threshold, nms_iou=nms_iou)
        elapsed = time.perf_counter() - start
        if k >= warmup:
            latencies.append(elapsed)

    timed = np.array(latencies, dtype=np.float64)
    total = float(timed.sum())
    report = BenchReport(
        variant=model.config.csam_variant.value if model.config.block_type == "transformer" else "residual",
        input_size=size,
        n_images=len(timed),
        warmup=warmup,
        fps=len(timed) / total if total > 0 else float("inf"),
        latency_p50_ms=float(np.percentile(timed, 50) * 1000.0),
        latency_p95_ms=float(np.percentile(timed, 95) * 1000.0),
        hardware=hardware_descriptor(),
    )
    logger.info("bench %s@%d: %.2f FPS (p50 %.1f ms, p95 %.1f ms)", report.variant, size, report.fps,
                report.latency_p50_ms, report.latency_p95_ms)
    return report
