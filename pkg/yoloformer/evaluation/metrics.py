"""
Detection metrics: IoU, greedy per-class NMS, per-class average precision and
mAP.

Detections are ranked by score descending, ties broken by box coordinates
(lexicographic) so every result is independent of input order. Precision and
recall are sampled only after the last detection of each score level, which
makes AP equal to the curve obtained by sweeping every distinct threshold.
"""
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from yoloformer.models.config_models import ApInterpolation, EvalConfig
from yoloformer.models.detection_models import (
    ClassReport, Detection, GroundTruth, MapReport, PrCurve,
)

logger = logging.getLogger(__name__)


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    ax0, ay0, ax1, ay1 = map(float, a)
    bx0, by0, bx1, by1 = map(float, b)
    inter = max(0.0, min(ax1, bx1) - max(ax0, bx0)) * max(0.0, min(ay1, by1) - max(ay0, by0))
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union if union > 0 else 0.0


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of [M, 4] and [K, 4] xyxy arrays"""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def rank_detections(dets: Sequence[Detection]) -> List[Detection]:
    """Score descending, then box lexicographic"""
    return sorted(dets, key=lambda d: (-d.score, d.box, d.class_id))


def nms(dets: Sequence[Detection], nms_iou: float = 0.5) -> List[Detection]:
    """Greedy per-class suppression of boxes overlapping a kept box by more than ``nms_iou``"""
    by_class: Dict[int, List[Detection]] = {}
    for d in rank_detections(dets):
        by_class.setdefault(d.class_id, []).append(d)

    kept: List[Detection] = []
    for class_dets in by_class.values():
        boxes = np.array([d.box for d in class_dets], dtype=np.float64)
        overlaps = iou_matrix(boxes, boxes)
        suppressed = np.zeros(len(class_dets), dtype=bool)
        for i, d in enumerate(class_dets):
            if suppressed[i]:
                continue
            kept.append(d)
            suppressed[i + 1:] |= overlaps[i, i + 1:] > nms_iou
    return rank_detections(kept)


def voc_ap(recall: np.ndarray, precision: np.ndarray,
           interpolation: ApInterpolation = ApInterpolation.ALL_POINTS) -> float:
    """Area under the interpolated precision-recall curve"""
    recall = np.asarray(recall, dtype=np.float64)
    precision = np.asarray(precision, dtype=np.float64)
    if interpolation == ApInterpolation.ELEVEN_POINT:
        ap = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            above = recall >= t
            ap += (precision[above].max() if above.any() else 0.0) / 11.0
        return float(ap)

    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    # precision envelope
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def average_precision(detections: Sequence[Sequence[Detection]], ground_truths: Sequence[Sequence[GroundTruth]],
                      class_id: int, config: Optional[EvalConfig] = None) -> PrCurve:
    """PR curve and AP of one class over a set of images.

    ``detections[i]`` and ``ground_truths[i]`` belong to image i. A class with
    no ground truth yields ``ap=None``.
    """
    config = config or EvalConfig()
    if len(detections) != len(ground_truths):
        raise ValueError(f"{len(detections)} detection lists for {len(ground_truths)} images")

    gts = [[g for g in image if g.class_id == class_id] for image in ground_truths]
    num_gt = sum(len(g) for g in gts)

    # matching is global by rank: a higher score claims a GT first
    events = []
    for idx, image in enumerate(detections):
        for d in image:
            if d.class_id == class_id:
                events.append((-d.score, d.box, idx, d))
    events.sort(key=lambda e: (e[0], e[1], e[2]))

    matched = [np.zeros(len(g), dtype=bool) for g in gts]
    gt_boxes = [np.array([g.box for g in image], dtype=np.float64).reshape(-1, 4) for image in gts]
    scores, flags = [], []
    for _, _, idx, d in events:
        tp = False
        if len(gt_boxes[idx]):
            overlaps = iou_matrix(np.array([d.box]), gt_boxes[idx])[0]
            overlaps[matched[idx]] = -1.0
            best = int(np.argmax(overlaps))
            if overlaps[best] >= config.iou_threshold:
                matched[idx][best] = True
                tp = True
        scores.append(d.score)
        flags.append(tp)

    curve = PrCurve(class_id=class_id, scores=scores, true_positive=flags, num_gt=num_gt)
    if num_gt == 0:
        return curve

    tp = np.cumsum(np.array(flags, dtype=np.float64))
    fp = np.cumsum(~np.array(flags, dtype=bool)).astype(np.float64)
    # one PR point per distinct score level
    last_of_level = [i for i in range(len(scores)) if i == len(scores) - 1 or scores[i + 1] != scores[i]]
    recall = tp[last_of_level] / num_gt if scores else np.zeros(0)
    precision = tp[last_of_level] / np.maximum(tp[last_of_level] + fp[last_of_level], np.finfo(np.float64).eps) \
        if scores else np.zeros(0)
    curve.recall = [float(r) for r in recall]
    curve.precision = [float(p) for p in precision]
    curve.ap = voc_ap(recall, precision, config.ap_interpolation)
    return curve


def mean_ap(detections: Sequence[Sequence[Detection]], ground_truths: Sequence[Sequence[GroundTruth]],
            num_classes: int, config: Optional[EvalConfig] = None,
            class_names: Optional[Sequence[str]] = None) -> MapReport:
    """Unweighted mean of the defined per-class APs"""
    config = config or EvalConfig()
    names = list(class_names) if class_names else [str(c) for c in range(num_classes)]
    per_class, notes = [], []
    for c in range(num_classes):
        curve = average_precision(detections, ground_truths, c, config)
        if not curve.defined:
            notes.append(f"class {names[c]} has no ground truth; AP undefined and excluded")
        per_class.append(ClassReport(class_id=c, name=names[c], ap=curve.ap, num_gt=curve.num_gt,
                                     num_detections=len(curve.scores)))

    defined = [r.ap for r in per_class if r.ap is not None]
    if not defined:
        notes.append("no class has ground truth; mAP reported as 0")
    value = float(np.mean(defined)) if defined else 0.0
    logger.debug("mAP %.4f over %d defined classes", value, len(defined))
    return MapReport(mean_ap=value, per_class=per_class, num_images=len(ground_truths),
                     interpolation=config.ap_interpolation.value, iou_threshold=config.iou_threshold,
                     notes=notes)
