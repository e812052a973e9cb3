"""
Detection loss: GIoU for boxes, focal loss for objectness, smoothed BCE for
classes. Everything is composed from engine primitives so gradients come
from the tape.

Normalization: GIoU and class terms average over positive cells (the class
term sums over classes first); the focal term averages over every anchor
cell of every scale.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from yoloformer.engine import functional as F
from yoloformer.engine.tensor import Tensor, as_tensor
from yoloformer.models.config_models import TrainConfig
from yoloformer.training.targets import TargetAssignment
from yoloformer.utils.exceptions import ValidationError

logger = logging.getLogger(__name__)

EPS = 1e-9
MAX_LOG_SCALE = 10.0


# ---------------------------------------------------------------------------
# GIoU
# ---------------------------------------------------------------------------

def _check_boxes(boxes: np.ndarray, name: str):
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if ((boxes[:, 2] - boxes[:, 0]) <= 0).any() or ((boxes[:, 3] - boxes[:, 1]) <= 0).any():
        raise ValidationError(f"degenerate (zero-area) box in {name}", field=name)


def giou(a: Sequence[float], b: Sequence[float]) -> float:
    """IoU - (enclosing - union) / enclosing, in (-1, 1]"""
    _check_boxes(a, "a")
    _check_boxes(b, "b")
    ax0, ay0, ax1, ay1 = map(float, a)
    bx0, by0, bx1, by1 = map(float, b)
    inter = max(0.0, min(ax1, bx1) - max(ax0, bx0)) * max(0.0, min(ay1, by1) - max(ay0, by0))
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    enclosing = (max(ax1, bx1) - min(ax0, bx0)) * (max(ay1, by1) - min(ay0, by0))
    return inter / union - (enclosing - union) / enclosing


def giou_tensor(pred: Tensor, target: Tensor) -> Tensor:
    """Per-row GIoU of [K, 4] xyxy boxes"""
    px0, py0, px1, py1 = (pred[:, k] for k in range(4))
    tx0, ty0, tx1, ty1 = (target[:, k] for k in range(4))
    area_p = (px1 - px0) * (py1 - py0)
    area_t = (tx1 - tx0) * (ty1 - ty0)
    iw = F.maximum(F.minimum(px1, tx1) - F.maximum(px0, tx0), 0.0)
    ih = F.maximum(F.minimum(py1, ty1) - F.maximum(py0, ty0), 0.0)
    inter = iw * ih
    union = F.maximum(area_p + area_t - inter, EPS)
    ew = F.maximum(px1, tx1) - F.minimum(px0, tx0)
    eh = F.maximum(py1, ty1) - F.minimum(py0, ty0)
    enclosing = F.maximum(ew * eh, EPS)
    return inter / union - (enclosing - union) / enclosing


def giou_loss(pred: Tensor, target) -> Tensor:
    """mean(1 - GIoU) over rows"""
    target = as_tensor(np.asarray(target.data if isinstance(target, Tensor) else target), like=pred)
    _check_boxes(target.data, "target")
    return F.mean(1.0 - giou_tensor(pred, target))


# ---------------------------------------------------------------------------
# focal / BCE
# ---------------------------------------------------------------------------

def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Element-wise softplus(z) - y z (soft targets allowed)"""
    y = as_tensor(np.asarray(targets), like=logits)
    return F.softplus(logits) - y * logits


def focal_loss(logits: Tensor, targets, gamma: float = 2.0, alpha: Optional[float] = 0.25) -> Tensor:
    """mean of -alpha_t (1 - p_t)^gamma log(p_t); ``alpha=None`` means alpha_t = 1"""
    y = np.asarray(targets, dtype=logits.dtype)
    if np.any((y != 0) & (y != 1)):
        raise ValidationError("focal targets must be 0 or 1", field="targets")
    sign = as_tensor(2.0 * y - 1.0, like=logits)
    signed = sign * logits
    # -log(p_t) = softplus(-s z)
    loss = F.softplus(-signed)
    if gamma != 0:
        loss = F.pow_scalar(F.sigmoid(-signed), gamma) * loss
    if alpha is not None:
        loss = as_tensor(np.where(y == 1, alpha, 1.0 - alpha).astype(logits.dtype), like=logits) * loss
    return F.mean(loss)


def smooth_targets(class_ids: np.ndarray, num_classes: int, smoothing: float) -> np.ndarray:
    """One-hot y smoothed to y (1 - s) + s / 2"""
    onehot = np.zeros((len(class_ids), num_classes), dtype=np.float64)
    onehot[np.arange(len(class_ids)), np.asarray(class_ids, dtype=np.int64)] = 1.0
    return onehot * (1.0 - smoothing) + smoothing / 2.0


def classification_loss(logits: Tensor, class_ids: np.ndarray, smoothing: float = 0.01) -> Tensor:
    """Per-class BCE against smoothed targets, summed over classes, mean over cells"""
    targets = smooth_targets(class_ids, logits.shape[1], smoothing)
    return F.mean(F.sum(bce_with_logits(logits, targets), axis=1))


# ---------------------------------------------------------------------------
# composite
# ---------------------------------------------------------------------------

def flatten_scale(raw: Tensor, num_anchors: int) -> Tensor:
    """[N, A*(5+C), H, W] -> [N*A*H*W, 5+C] in (n, a, i, j) row-major order"""
    n, channels, h, w = raw.shape
    per_anchor = channels // num_anchors
    x = F.reshape(raw, (n, num_anchors, per_anchor, h, w))
    x = F.transpose(x, (0, 1, 3, 4, 2))
    return F.reshape(x, (n * num_anchors * h * w, per_anchor))


def decode_positive_boxes(pred: Tensor, cells: np.ndarray, anchors: np.ndarray, stride: int) -> Tensor:
    """Differentiable xyxy boxes for positive rows; ``cells`` holds (i, j)"""
    cx = (F.sigmoid(pred[:, 0]) + cells[:, 1].astype(pred.dtype)) * float(stride)
    cy = (F.sigmoid(pred[:, 1]) + cells[:, 0].astype(pred.dtype)) * float(stride)
    bw = F.exp(F.minimum(pred[:, 2], MAX_LOG_SCALE)) * anchors[:, 0].astype(pred.dtype)
    bh = F.exp(F.minimum(pred[:, 3], MAX_LOG_SCALE)) * anchors[:, 1].astype(pred.dtype)
    half_w, half_h = bw * 0.5, bh * 0.5
    x0, y0, x1, y1 = cx - half_w, cy - half_h, cx + half_w, cy + half_h
    cols = [F.reshape(c, (-1, 1)) for c in (x0, y0, x1, y1)]
    return F.concat(cols, axis=1)


def detection_loss(raw: Sequence[Tensor], assignment: TargetAssignment,
                   anchors: Sequence[Sequence[Tuple[float, float]]], config: TrainConfig,
                   num_classes: int) -> Tuple[Tensor, Dict[str, float]]:
    """Weighted GIoU + focal + BCE over all three scales"""
    w_giou, w_obj, w_cls = config.loss_weights
    obj_logits: List[Tensor] = []
    obj_targets: List[np.ndarray] = []
    pos_preds: List[Tensor] = []
    pos_boxes: List[Tensor] = []
    gt_boxes: List[np.ndarray] = []
    gt_classes: List[np.ndarray] = []

    for s, (tensor, targets) in enumerate(zip(raw, assignment.scales)):
        num_anchors = len(anchors[s])
        flat = flatten_scale(tensor, num_anchors)
        if flat.shape[1] != 5 + num_classes:
            raise ValidationError(f"scale {s} predicts {flat.shape[1] - 5} classes, expected {num_classes}",
                                  field="num_classes")
        obj_logits.append(flat[:, 4])
        obj_targets.append(targets.obj_mask.reshape(-1).astype(np.float64))

        idx = np.argwhere(targets.obj_mask)
        if not len(idx):
            continue
        flat_idx = np.ravel_multi_index(idx.T, targets.obj_mask.shape)
        pred = flat[flat_idx]
        scale_anchors = np.asarray(anchors[s], dtype=np.float64)[idx[:, 1]]
        pos_preds.append(pred)
        pos_boxes.append(decode_positive_boxes(pred, idx[:, 2:4], scale_anchors, targets.stride))
        gt_boxes.append(targets.gt_boxes[tuple(idx.T)])
        gt_classes.append(targets.class_ids[tuple(idx.T)])

    obj = focal_loss(F.concat(obj_logits, axis=0), np.concatenate(obj_targets),
                     config.focal_gamma, config.focal_alpha)
    if pos_preds:
        box = giou_loss(F.concat(pos_boxes, axis=0), np.concatenate(gt_boxes))
        preds = F.concat(pos_preds, axis=0)
        cls = classification_loss(preds[:, 5:], np.concatenate(gt_classes), config.label_smoothing)
    else:
        box = as_tensor(0.0, like=obj)
        cls = as_tensor(0.0, like=obj)

    total = box * w_giou + obj * w_obj + cls * w_cls
    parts = {"giou": box.item(), "obj": obj.item(), "cls": cls.item(), "total": total.item(),
             "positives": float(sum(len(p.data) for p in pos_preds))}
    return total, parts
