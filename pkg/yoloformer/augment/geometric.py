"""
Box-aware geometric ops. Every op keeps boxes valid: boxes are clipped to the
output raster and those under 1 px^2 after clipping are dropped and counted
in ``Sample.dropped``.
"""
import logging
import math
from typing import Optional, Sequence, Tuple

import cv2
import numpy as np

from yoloformer.models.detection_models import Sample
from yoloformer.utils.config import settings
from yoloformer.utils.exceptions import ValidationError
from yoloformer.utils.rng import SeededRng

logger = logging.getLogger(__name__)

MIN_BOX_AREA = 1.0


def finalize_boxes(boxes: np.ndarray, labels: np.ndarray, width: float, height: float,
                   bounds: Optional[Tuple[float, float, float, float]] = None):
    """Clip to ``bounds`` (default the raster) and drop boxes under 1 px^2"""
    x0, y0, x1, y1 = bounds if bounds is not None else (0.0, 0.0, float(width), float(height))
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4).copy()
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    boxes[:, [0, 2]] = boxes[:, [0, 2]].clip(x0, x1)
    boxes[:, [1, 3]] = boxes[:, [1, 3]].clip(y0, y1)
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    keep = (w > 0) & (h > 0) & (w * h >= MIN_BOX_AREA)
    return boxes[keep], labels[keep], int((~keep).sum())


def _fill(fill: Optional[int]) -> int:
    return settings.fill_value if fill is None else int(fill)


def transform_boxes(boxes: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Axis-aligned hull of the 4 corners of each box under a 2x3 affine"""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if not len(boxes):
        return boxes
    corners = boxes[:, [0, 1, 2, 1, 0, 3, 2, 3]].reshape(-1, 4, 2)
    ones = np.ones(corners.shape[:2] + (1,))
    moved = np.concatenate([corners, ones], axis=2) @ np.asarray(matrix, dtype=np.float64).T
    return np.concatenate([moved.min(axis=1), moved.max(axis=1)], axis=1)


# ---------------------------------------------------------------------------
# constrained rotation
# ---------------------------------------------------------------------------

def rotation_canvas(width: int, height: int, angle: float) -> Tuple[int, int, np.ndarray]:
    """Padded canvas size and the 2x3 matrix rotating the image onto it.

    W' = W|cos| + H|sin|, H' = W|sin| + H|cos|, rounded to whole pixels;
    the image center maps to the canvas center.
    """
    theta = math.radians(angle)
    c, s = abs(math.cos(theta)), abs(math.sin(theta))
    canvas_w = max(1, int(round(width * c + height * s)))
    canvas_h = max(1, int(round(width * s + height * c)))
    matrix = cv2.getRotationMatrix2D((width / 2.0, height / 2.0), angle, 1.0)
    matrix[0, 2] += canvas_w / 2.0 - width / 2.0
    matrix[1, 2] += canvas_h / 2.0 - height / 2.0
    return canvas_w, canvas_h, matrix


def canvas_corners(width: int, height: int, angle: float) -> np.ndarray:
    """The four image corners in padded-canvas coordinates"""
    _, _, matrix = rotation_canvas(width, height, angle)
    corners = np.array([[0, 0, 1], [width, 0, 1], [0, height, 1], [width, height, 1]], dtype=np.float64)
    return corners @ matrix.T


def constrained_rotate(s: Sample, angle: float, rng: Optional[SeededRng] = None,
                       max_angle: Optional[float] = None, fill: Optional[int] = None) -> Sample:
    """Rotate onto a canvas that just contains the rotated image, then resize back"""
    limit = settings.max_rotation if max_angle is None else max_angle
    if abs(angle) > limit:
        raise ValidationError(f"rotation {angle} exceeds the {limit} degree cap", field="angle")
    if angle == 0:
        return s.replace(image=s.image.copy(), boxes=s.boxes.copy())

    height, width = s.image.shape[:2]
    canvas_w, canvas_h, matrix = rotation_canvas(width, height, angle)
    value = _fill(fill)
    rotated = cv2.warpAffine(s.image, matrix, (canvas_w, canvas_h), flags=cv2.INTER_LINEAR,
                             borderMode=cv2.BORDER_CONSTANT, borderValue=(value, value, value))
    image = cv2.resize(rotated, (width, height), interpolation=cv2.INTER_LINEAR)

    boxes = transform_boxes(s.boxes, matrix)
    boxes[:, [0, 2]] *= width / canvas_w
    boxes[:, [1, 3]] *= height / canvas_h
    boxes, labels, dropped = finalize_boxes(boxes, s.labels, width, height)
    if dropped:
        logger.debug("constrained_rotate(%.2f) dropped %d boxes", angle, dropped)
    return s.replace(image=image, boxes=boxes, labels=labels, dropped=s.dropped + dropped,
                     audit=s.audit + [f"rotate:{angle:.3f}"])


# ---------------------------------------------------------------------------
# zoom-out, mosaic, cutout
# ---------------------------------------------------------------------------

def zoom_out(s: Sample, factor: float, rng: Optional[SeededRng] = None,
             offset: Optional[Tuple[int, int]] = None, fill: Optional[int] = None) -> Sample:
    """Shrink by ``factor`` and pad back to the original size at an offset"""
    if not 0.0 < factor <= 1.0:
        raise ValidationError(f"zoom-out factor {factor} outside (0, 1]", field="factor")
    height, width = s.image.shape[:2]
    new_w = max(1, int(round(width * factor)))
    new_h = max(1, int(round(height * factor)))
    if offset is None:
        if rng is None:
            raise ValidationError("zoom_out needs an rng or an explicit offset", field="offset")
        offset = (int(rng.integers(0, width - new_w + 1)), int(rng.integers(0, height - new_h + 1)))
    ox, oy = offset
    if not (0 <= ox <= width - new_w and 0 <= oy <= height - new_h):
        raise ValidationError(f"offset {offset} does not fit a {new_w}x{new_h} image", field="offset")

    small = s.image if (new_w, new_h) == (width, height) else cv2.resize(
        s.image, (new_w, new_h), interpolation=cv2.INTER_AREA)
    canvas = np.full_like(s.image, _fill(fill))
    canvas[oy:oy + new_h, ox:ox + new_w] = small

    boxes = s.boxes.copy()
    boxes[:, [0, 2]] = boxes[:, [0, 2]] * (new_w / width) + ox
    boxes[:, [1, 3]] = boxes[:, [1, 3]] * (new_h / height) + oy
    boxes, labels, dropped = finalize_boxes(boxes, s.labels, width, height)
    return s.replace(image=canvas, boxes=boxes, labels=labels, dropped=s.dropped + dropped,
                     audit=s.audit + [f"zoom_out:{factor:.3f}"])


def mosaic_junction(out_size: int, rng: SeededRng) -> Tuple[int, int]:
    """Junction uniform in the central 50% of the canvas"""
    lo, hi = 0.25 * out_size, 0.75 * out_size
    return int(round(rng.uniform(lo, hi))), int(round(rng.uniform(lo, hi)))


def mosaic_quadrants(out_size: int, junction: Tuple[int, int]):
    xc, yc = junction
    return [(0, 0, xc, yc), (xc, 0, out_size, yc), (0, yc, xc, out_size), (xc, yc, out_size, out_size)]


def mosaic(samples: Sequence[Sample], out_size: int, rng: Optional[SeededRng] = None,
           junction: Optional[Tuple[int, int]] = None) -> Sample:
    """Scale four samples into the quadrants around a random junction"""
    if len(samples) != 4:
        raise ValidationError(f"mosaic needs 4 samples, got {len(samples)}", field="samples")
    if junction is None:
        if rng is None:
            raise ValidationError("mosaic needs an rng or an explicit junction", field="junction")
        junction = mosaic_junction(out_size, rng)
    xc, yc = junction
    if not (0 < xc < out_size and 0 < yc < out_size):
        raise ValidationError(f"junction {junction} outside the {out_size} canvas", field="junction")

    canvas = np.zeros((out_size, out_size, 3), dtype=np.uint8)
    all_boxes, all_labels, dropped = [], [], 0
    for src, (qx0, qy0, qx1, qy1) in zip(samples, mosaic_quadrants(out_size, junction)):
        qw, qh = qx1 - qx0, qy1 - qy0
        height, width = src.image.shape[:2]
        canvas[qy0:qy1, qx0:qx1] = cv2.resize(src.image, (qw, qh), interpolation=cv2.INTER_LINEAR)
        boxes = src.boxes.copy()
        boxes[:, [0, 2]] = boxes[:, [0, 2]] * (qw / width) + qx0
        boxes[:, [1, 3]] = boxes[:, [1, 3]] * (qh / height) + qy0
        boxes, labels, lost = finalize_boxes(boxes, src.labels, out_size, out_size, (qx0, qy0, qx1, qy1))
        all_boxes.append(boxes)
        all_labels.append(labels)
        dropped += lost + src.dropped

    return Sample(image=canvas, boxes=np.concatenate(all_boxes), labels=np.concatenate(all_labels),
                  dropped=dropped, audit=[f"mosaic:{xc},{yc}"], source=samples[0].source)


def cutout(s: Sample, rng: SeededRng, fraction_range: Tuple[float, float] = (0.1, 0.3),
           fill: Optional[int] = None) -> Sample:
    """Fill one square (side 10-30% of min(W, H)) with gray; boxes unchanged"""
    height, width = s.image.shape[:2]
    lo, hi = fraction_range
    side = int(round(rng.uniform(lo, hi) * min(width, height))) if hi > 0 else 0
    if side <= 0:
        return s
    x0 = int(rng.integers(0, width - side + 1))
    y0 = int(rng.integers(0, height - side + 1))
    image = s.image.copy()
    image[y0:y0 + side, x0:x0 + side] = _fill(fill)
    return s.replace(image=image, audit=s.audit + [f"cutout:{x0},{y0},{side}"])


# ---------------------------------------------------------------------------
# translate, crop, flip
# ---------------------------------------------------------------------------

def translate(s: Sample, rng: Optional[SeededRng] = None, max_fraction: float = 0.1,
              shift: Optional[Tuple[int, int]] = None, fill: Optional[int] = None) -> Sample:
    height, width = s.image.shape[:2]
    if shift is None:
        dx = int(round(rng.uniform(-max_fraction, max_fraction) * width))
        dy = int(round(rng.uniform(-max_fraction, max_fraction) * height))
    else:
        dx, dy = shift
    image = np.full_like(s.image, _fill(fill))
    src_x0, dst_x0 = max(0, -dx), max(0, dx)
    src_y0, dst_y0 = max(0, -dy), max(0, dy)
    w = width - abs(dx)
    h = height - abs(dy)
    if w > 0 and h > 0:
        image[dst_y0:dst_y0 + h, dst_x0:dst_x0 + w] = s.image[src_y0:src_y0 + h, src_x0:src_x0 + w]
    boxes = s.boxes + np.array([dx, dy, dx, dy], dtype=np.float64)
    boxes, labels, dropped = finalize_boxes(boxes, s.labels, width, height)
    return s.replace(image=image, boxes=boxes, labels=labels, dropped=s.dropped + dropped,
                     audit=s.audit + [f"translate:{dx},{dy}"])


def crop(s: Sample, rng: Optional[SeededRng] = None, min_fraction: float = 0.6,
         rect: Optional[Tuple[int, int, int, int]] = None) -> Sample:
    """Crop a sub-rectangle and resize it back to the original resolution"""
    height, width = s.image.shape[:2]
    if rect is None:
        cw = max(1, int(round(rng.uniform(min_fraction, 1.0) * width)))
        ch = max(1, int(round(rng.uniform(min_fraction, 1.0) * height)))
        x0 = int(rng.integers(0, width - cw + 1))
        y0 = int(rng.integers(0, height - ch + 1))
        rect = (x0, y0, x0 + cw, y0 + ch)
    x0, y0, x1, y1 = rect
    if not (0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height):
        raise ValidationError(f"crop rectangle {rect} outside {width}x{height}", field="rect")
    image = cv2.resize(s.image[y0:y1, x0:x1], (width, height), interpolation=cv2.INTER_LINEAR)

    boxes, labels, lost = finalize_boxes(s.boxes, s.labels, width, height, (x0, y0, x1, y1))
    boxes = boxes - np.array([x0, y0, x0, y0], dtype=np.float64)
    boxes[:, [0, 2]] *= width / (x1 - x0)
    boxes[:, [1, 3]] *= height / (y1 - y0)
    boxes, labels, dropped = finalize_boxes(boxes, labels, width, height)
    return s.replace(image=image, boxes=boxes, labels=labels, dropped=s.dropped + lost + dropped,
                     audit=s.audit + [f"crop:{x0},{y0},{x1},{y1}"])


def hflip(s: Sample, rng: Optional[SeededRng] = None) -> Sample:
    width = s.image.shape[1]
    boxes = s.boxes.copy()
    boxes[:, 0] = width - s.boxes[:, 2]
    boxes[:, 2] = width - s.boxes[:, 0]
    return s.replace(image=np.ascontiguousarray(s.image[:, ::-1]), boxes=boxes,
                     audit=s.audit + ["hflip"])


def resize(s: Sample, size: int) -> Sample:
    """Stretch to ``size`` x ``size`` with boxes scaled alike; no-op at that size"""
    height, width = s.image.shape[:2]
    if (width, height) == (size, size):
        return s
    image = cv2.resize(s.image, (size, size), interpolation=cv2.INTER_AREA if size < width else cv2.INTER_LINEAR)
    boxes = s.boxes.copy()
    boxes[:, [0, 2]] *= size / width
    boxes[:, [1, 3]] *= size / height
    boxes, labels, dropped = finalize_boxes(boxes, s.labels, size, size)
    return s.replace(image=image, boxes=boxes, labels=labels, dropped=s.dropped + dropped)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def _random_rotate(s: Sample, rng: SeededRng) -> Sample:
    limit = settings.max_rotation
    return constrained_rotate(s, float(rng.uniform(-limit, limit)), rng, max_angle=limit)


def _random_zoom(s: Sample, rng: SeededRng) -> Sample:
    return zoom_out(s, float(rng.uniform(0.5, 1.0)), rng)


GEOMETRIC_OPS = {
    "translate": translate,
    "crop": crop,
    "zoom_out": _random_zoom,
    "hflip": hflip,
    "constrained_rotate": _random_rotate,
}

# never allowed inside photometric chains
GEOMETRIC_NAMES = frozenset(GEOMETRIC_OPS) | {"mosaic", "cutout", "rotate", "flip", "zoom"}


def geometric_pipeline(s: Sample, rng: SeededRng, prob: float = 0.5) -> Sample:
    """Shuffle the geometric ops; each fires independently with ``prob``"""
    names = list(GEOMETRIC_OPS)
    for idx in rng.permutation(len(names)):
        if rng.uniform() < prob:
            s = GEOMETRIC_OPS[names[int(idx)]](s, rng)
    return s
