"""
Ground-truth to (scale, cell, anchor) assignment.

Each box goes to the anchor with the highest shape IoU (box and anchor
centered on each other) over all 9 anchors; ties prefer the finer scale, then
the lower anchor index. If that slot is already taken by an earlier box, the
next-best free anchor is used. Boxes narrower or shorter than 2 px are skipped.
"""
import logging
import math
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from yoloformer.utils.exceptions import ValidationError

logger = logging.getLogger(__name__)

MIN_BOX_SIDE = 2.0
FRAC_EPS = 1e-6


class ScaleTargets(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    stride: int
    obj_mask: np.ndarray        # [N, A, H, W] bool
    box_targets: np.ndarray     # [N, A, H, W, 4] tx, ty (pre-sigmoid), tw, th
    gt_boxes: np.ndarray        # [N, A, H, W, 4] xyxy pixels
    class_ids: np.ndarray       # [N, A, H, W] int, -1 where empty


class TargetAssignment(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    scales: List[ScaleTargets]
    positives: List[Tuple[int, int, int, int, int]] = Field(default_factory=list)  # (n, scale, anchor, i, j)
    skipped: int = 0

    @property
    def num_positives(self) -> int:
        return len(self.positives)


def shape_iou(w: float, h: float, aw: float, ah: float) -> float:
    inter = min(w, aw) * min(h, ah)
    return inter / (w * h + aw * ah - inter)


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def encode_box(box: Sequence[float], anchor: Tuple[float, float], stride: int,
               grid: int = None) -> Tuple[Tuple[int, int], np.ndarray]:
    """Cell (i, j) and raw targets (tx, ty, tw, th) such that decode recovers ``box``"""
    xmin, ymin, xmax, ymax = box
    cx, cy = (xmin + xmax) / 2.0, (ymin + ymax) / 2.0
    j, i = int(math.floor(cx / stride)), int(math.floor(cy / stride))
    if grid is not None:
        # a center on the far image edge belongs to the last cell
        i, j = min(i, grid - 1), min(j, grid - 1)
    fx = min(max(cx / stride - j, FRAC_EPS), 1.0 - FRAC_EPS)
    fy = min(max(cy / stride - i, FRAC_EPS), 1.0 - FRAC_EPS)
    raw = np.array([logit(fx), logit(fy), math.log((xmax - xmin) / anchor[0]),
                    math.log((ymax - ymin) / anchor[1])], dtype=np.float64)
    return (i, j), raw


def rank_anchors(w: float, h: float, anchors: Sequence[Sequence[Tuple[float, float]]]) -> List[Tuple[int, int]]:
    """(scale, anchor) pairs ordered by shape IoU desc, then scale, then anchor"""
    scored = [(-shape_iou(w, h, aw, ah), s, a)
              for s, scale in enumerate(anchors) for a, (aw, ah) in enumerate(scale)]
    return [(s, a) for _, s, a in sorted(scored)]


def assign_targets(gt_boxes: Sequence[np.ndarray], gt_labels: Sequence[np.ndarray],
                   anchors: Sequence[Sequence[Tuple[float, float]]], strides: Sequence[int],
                   num_classes: int, input_size: int) -> TargetAssignment:
    """Assign every ground-truth box of a batch to exactly one (scale, cell, anchor)"""
    n = len(gt_boxes)
    num_anchors = len(anchors[0])
    scales = []
    for stride in strides:
        g = input_size // stride
        scales.append(ScaleTargets(
            stride=stride,
            obj_mask=np.zeros((n, num_anchors, g, g), dtype=bool),
            box_targets=np.zeros((n, num_anchors, g, g, 4), dtype=np.float64),
            gt_boxes=np.zeros((n, num_anchors, g, g, 4), dtype=np.float64),
            class_ids=np.full((n, num_anchors, g, g), -1, dtype=np.int64),
        ))

    positives, skipped = [], 0
    for b in range(n):
        boxes = np.asarray(gt_boxes[b], dtype=np.float64).reshape(-1, 4)
        labels = np.asarray(gt_labels[b], dtype=np.int64).reshape(-1)
        for box, label in zip(boxes, labels):
            if not 0 <= label < num_classes:
                raise ValidationError(f"class id {label} outside [0, {num_classes})", field="class_id")
            w, h = box[2] - box[0], box[3] - box[1]
            if w < MIN_BOX_SIDE or h < MIN_BOX_SIDE:
                logger.warning("Skipping %.2fx%.2f box in image %d: smaller than %g px", w, h, b, MIN_BOX_SIDE)
                skipped += 1
                continue
            for s, a in rank_anchors(w, h, anchors):
                target = scales[s]
                grid = target.obj_mask.shape[-1]
                (i, j), raw = encode_box(box, anchors[s][a], strides[s], grid)
                if target.obj_mask[b, a, i, j]:
                    continue
                target.obj_mask[b, a, i, j] = True
                target.box_targets[b, a, i, j] = raw
                target.gt_boxes[b, a, i, j] = box
                target.class_ids[b, a, i, j] = label
                positives.append((b, s, a, i, j))
                break
            else:
                logger.warning("No free anchor slot for box %s in image %d", box.tolist(), b)
                skipped += 1
    return TargetAssignment(scales=scales, positives=positives, skipped=skipped)
