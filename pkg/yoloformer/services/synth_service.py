"""
Synthetic shapes corpus with exact ground truth.

    circle    center (cx, cy), radius r      -> (cx - r, cy - r, cx + r, cy + r)
    square    top-left (x, y), side s        -> (x, y, x + s, y + s)
    triangle  apex (x + s/2, y), base y + s  -> (x, y, x + s, y + s)
"""
import logging
import os
from typing import List, Tuple

import cv2
import numpy as np

from yoloformer.models.config_models import SyntheticSpec
from yoloformer.models.detection_models import Sample
from yoloformer.storage.manifest import save_manifest
from yoloformer.utils.rng import SeededRng

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"


def _color(rng: SeededRng, low: int, high: int) -> Tuple[int, int, int]:
    return tuple(int(c) for c in rng.integers(low, high, size=3))


def draw_circle(image: np.ndarray, center: Tuple[int, int], radius: int, color) -> Tuple[float, ...]:
    cv2.circle(image, center, radius, color, thickness=-1, lineType=cv2.LINE_8)
    cx, cy = center
    return (cx - radius, cy - radius, cx + radius, cy + radius)


def draw_square(image: np.ndarray, corner: Tuple[int, int], side: int, color) -> Tuple[float, ...]:
    x, y = corner
    cv2.rectangle(image, (x, y), (x + side - 1, y + side - 1), color, thickness=-1)
    return (x, y, x + side, y + side)


def draw_triangle(image: np.ndarray, corner: Tuple[int, int], side: int, color) -> Tuple[float, ...]:
    x, y = corner
    points = np.array([[x + side // 2, y], [x + side - 1, y + side - 1], [x, y + side - 1]], dtype=np.int32)
    cv2.fillPoly(image, [points], color)
    return (x, y, x + side, y + side)


class SynthService:
    def __init__(self, spec: SyntheticSpec):
        self.spec = spec

    def render(self, index: int) -> Sample:
        spec = self.spec
        rng = SeededRng(spec.seed, "synth", counter=index)
        size = spec.image_size
        image = np.empty((size, size, 3), dtype=np.uint8)
        image[:] = _color(rng, 0, 80)

        lo, hi = spec.objects_per_image
        count = int(rng.integers(lo, hi + 1))
        boxes, labels = [], []
        for _ in range(count):
            class_id = int(rng.integers(0, len(spec.classes)))
            extent = int(rng.integers(spec.size_range[0], spec.size_range[1] + 1))
            color = _color(rng, 120, 256)
            shape = spec.classes[class_id]
            if shape == "circle":
                radius = max(extent // 2, 2)
                center = (int(rng.integers(radius, size - radius + 1)), int(rng.integers(radius, size - radius + 1)))
                box = draw_circle(image, center, radius, color)
            else:
                corner = (int(rng.integers(0, size - extent + 1)), int(rng.integers(0, size - extent + 1)))
                draw = draw_square if shape == "square" else draw_triangle
                box = draw(image, corner, extent, color)
            boxes.append(box)
            labels.append(class_id)
        return Sample(image=image, boxes=np.array(boxes, dtype=np.float64).reshape(-1, 4),
                      labels=np.array(labels, dtype=np.int64), source=f"synth-{index}")

    def generate(self) -> List[Sample]:
        return [self.render(i) for i in range(self.spec.n_images)]

    def write(self, out_dir: str) -> str:
        """Render the corpus to ``out_dir`` and return the manifest path"""
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, MANIFEST_NAME)
        save_manifest(path, self.generate(), self.spec.classes, prefix="synth")
        logger.info("Synthesized %d images (%s) into %s", self.spec.n_images, ",".join(self.spec.classes), out_dir)
        return path
