"""
Anchor estimation: k-means over box (w, h) with 1 - IoU as the distance.
"""
import logging
from typing import List, Tuple

import numpy as np

from yoloformer.storage.manifest import Dataset
from yoloformer.utils.exceptions import ValidationError
from yoloformer.utils.rng import SeededRng

logger = logging.getLogger(__name__)


def wh_iou(wh: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """[M, K] IoU of (w, h) pairs with co-centered boxes"""
    inter = np.minimum(wh[:, None, 0], centroids[None, :, 0]) * np.minimum(wh[:, None, 1], centroids[None, :, 1])
    union = (wh[:, 0] * wh[:, 1])[:, None] + (centroids[:, 0] * centroids[:, 1])[None, :] - inter
    return inter / union


def kmeans_anchors(wh: np.ndarray, k: int = 9, rng: SeededRng = None,
                   max_iter: int = 300) -> Tuple[np.ndarray, float]:
    """Centroids sorted by area and the mean best IoU of every box"""
    wh = np.asarray(wh, dtype=np.float64).reshape(-1, 2)
    wh = wh[(wh > 0).all(axis=1)]
    if len(wh) < k:
        raise ValidationError(f"need at least {k} boxes for {k} anchors, got {len(wh)}", field="boxes")
    rng = rng or SeededRng(0, "anchors")

    centroids = wh[rng.choice(len(wh), size=k, replace=False)]
    assignment = np.full(len(wh), -1)
    for it in range(max_iter):
        nearest = np.argmax(wh_iou(wh, centroids), axis=1)
        if (nearest == assignment).all():
            break
        assignment = nearest
        for c in range(k):
            members = wh[assignment == c]
            # an empty cluster keeps its centroid
            if len(members):
                centroids[c] = np.median(members, axis=0)
    logger.debug("k-means stopped after %d iterations", it + 1)

    centroids = centroids[np.argsort(centroids[:, 0] * centroids[:, 1], kind="stable")]
    fitness = float(wh_iou(wh, centroids).max(axis=1).mean())
    return centroids, fitness


class AnchorService:
    def __init__(self, seed: int = 0):
        self.seed = seed

    def estimate(self, dataset: Dataset, k: int = 9) -> dict:
        """Anchors grouped 3 per scale, smallest to the finest stride"""
        if k <= 0 or k % 3:
            raise ValidationError(f"k must be a positive multiple of 3, got {k}", field="k")
        boxes = dataset.all_boxes()
        wh = np.stack([boxes[:, 2] - boxes[:, 0], boxes[:, 3] - boxes[:, 1]], axis=1) if len(boxes) else np.zeros((0, 2))
        centroids, fitness = kmeans_anchors(wh, k, SeededRng(self.seed, "anchors"))
        per_scale: List[List[Tuple[float, float]]] = [
            [(round(float(w), 2), round(float(h), 2)) for w, h in centroids[i:i + 3]] for i in range(0, k, 3)
        ]
        logger.info("Estimated %d anchors from %d boxes, mean best IoU %.3f", k, len(wh), fitness)
        return {"anchors": per_scale, "mean_iou": fitness, "num_boxes": int(len(wh))}
