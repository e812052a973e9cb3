"""
Raster I/O. PPM (P6) is always available; other formats go through OpenCV
when ``OTHER_FORMATS`` is true.
"""
import logging
import os

import cv2
import numpy as np

from yoloformer.utils.exceptions import ValidationError

logger = logging.getLogger(__name__)

PPM_EXTENSIONS = (".ppm", ".pnm")
OTHER_FORMATS = True


def _check_extension(path: str):
    ext = os.path.splitext(path)[1].lower()
    if ext not in PPM_EXTENSIONS and not OTHER_FORMATS:
        raise ValidationError(f"unsupported image format '{ext}'", field="image")


def decode_image(data: bytes) -> np.ndarray:
    """Encoded bytes -> H x W x 3 uint8 RGB"""
    buf = np.frombuffer(data, dtype=np.uint8)
    bgr = cv2.imdecode(buf, cv2.IMREAD_COLOR)
    if bgr is None:
        raise ValidationError("could not decode image bytes", field="image")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def encode_ppm(image: np.ndarray) -> bytes:
    ok, buf = cv2.imencode(".ppm", cv2.cvtColor(image, cv2.COLOR_RGB2BGR), [cv2.IMWRITE_PXM_BINARY, 1])
    if not ok:
        raise ValidationError("could not encode image as PPM", field="image")
    return buf.tobytes()


def read_image(path: str) -> np.ndarray:
    _check_extension(path)
    if not os.path.exists(path):
        raise ValidationError(f"image not found: {path}", field="image")
    with open(path, "rb") as f:
        return decode_image(f.read())


def write_image(path: str, image: np.ndarray):
    _check_extension(path)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    if os.path.splitext(path)[1].lower() in PPM_EXTENSIONS:
        with open(path, "wb") as f:
            f.write(encode_ppm(image))
        return
    if not cv2.imwrite(path, cv2.cvtColor(image, cv2.COLOR_RGB2BGR)):
        raise ValidationError(f"could not write image {path}", field="image")


def draw_boxes(image: np.ndarray, boxes, labels, names=None) -> np.ndarray:
    """Copy of ``image`` with box outlines and class names for previews"""
    out = np.ascontiguousarray(image.copy())
    palette = [(230, 25, 75), (60, 180, 75), (0, 130, 200), (245, 130, 48), (145, 30, 180)]
    for box, label in zip(np.asarray(boxes).reshape(-1, 4), np.asarray(labels).reshape(-1)):
        color = palette[int(label) % len(palette)]
        x1, y1, x2, y2 = [int(round(v)) for v in box]
        cv2.rectangle(out, (x1, y1), (max(x1, x2 - 1), max(y1, y2 - 1)), color, 1)
        text = names[int(label)] if names and int(label) < len(names) else str(int(label))
        cv2.putText(out, text, (x1, max(y1 - 2, 8)), cv2.FONT_HERSHEY_SIMPLEX, 0.3, color, 1)
    return out
