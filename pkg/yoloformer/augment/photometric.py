"""
Pixel-level ops. None of them touch boxes.

Magnitude M is on a 0-30 scale. Per-pixel rules (p in 0..255, results rounded
half-to-even and clipped to 0..255):

    brightness   p * f,                        f = 1 +/- 0.03 M
    contrast     m + f (p - m),                m = mean gray level of the image
    saturation   g + f (p - g),                g = per-pixel gray level
    hue          (h + d) mod 180 in OpenCV HSV, d = +/- round(M / 30 * 18)
    posterize    p & (0xFF << (8 - bits)),     bits = 8 - round(M / 30 * 4)
    solarize     255 - p if p >= t else p,     t = 256 - round(M / 30 * 256)
    invert       255 - p
    sharpen      b + f (p - b),                b = 3x3 smooth [[1,1,1],[1,5,1],[1,1,1]] / 13
    equalize     per-channel histogram equalization

The sign of +/- comes from the rng (positive without one).
"""
import logging
from typing import Callable, Dict, Optional

import cv2
import numpy as np

from yoloformer.models.detection_models import Sample
from yoloformer.utils.rng import SeededRng

logger = logging.getLogger(__name__)

MAX_MAGNITUDE = 30
SMOOTH_KERNEL = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float32) / 13.0


def _to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def _signed(magnitude: float, rng: Optional[SeededRng]) -> float:
    return magnitude * (rng.sign() if rng is not None else 1)


def _factor(magnitude: float, rng: Optional[SeededRng]) -> float:
    return max(0.0, 1.0 + 0.03 * _signed(magnitude, rng))


# ---------------------------------------------------------------------------
# raster rules
# ---------------------------------------------------------------------------

def brightness_image(image: np.ndarray, factor: float) -> np.ndarray:
    return _to_uint8(image.astype(np.float64) * factor)


def contrast_image(image: np.ndarray, factor: float) -> np.ndarray:
    mean = cv2.cvtColor(image, cv2.COLOR_RGB2GRAY).mean()
    return _to_uint8(mean + factor * (image.astype(np.float64) - mean))


def saturation_image(image: np.ndarray, factor: float) -> np.ndarray:
    gray = cv2.cvtColor(image, cv2.COLOR_RGB2GRAY).astype(np.float64)[..., None]
    return _to_uint8(gray + factor * (image.astype(np.float64) - gray))


def hue_image(image: np.ndarray, shift: int) -> np.ndarray:
    hsv = cv2.cvtColor(image, cv2.COLOR_RGB2HSV)
    lut = ((np.arange(256, dtype=np.int32) + shift) % 180).astype(np.uint8)
    hsv[..., 0] = lut[hsv[..., 0]]
    return cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)


def posterize_image(image: np.ndarray, bits: int) -> np.ndarray:
    bits = int(min(max(bits, 1), 8))
    mask = (0xFF << (8 - bits)) & 0xFF
    return np.bitwise_and(image, np.uint8(mask))


def solarize_image(image: np.ndarray, threshold: int) -> np.ndarray:
    return np.where(image >= threshold, 255 - image, image).astype(np.uint8)


def invert_image(image: np.ndarray) -> np.ndarray:
    return (255 - image).astype(np.uint8)


def sharpen_image(image: np.ndarray, factor: float) -> np.ndarray:
    blurred = cv2.filter2D(image.astype(np.float32), -1, SMOOTH_KERNEL, borderType=cv2.BORDER_REFLECT_101)
    return _to_uint8(blurred + factor * (image.astype(np.float32) - blurred))


def equalize_image(image: np.ndarray) -> np.ndarray:
    return np.stack([cv2.equalizeHist(np.ascontiguousarray(image[..., c])) for c in range(3)], axis=-1)


# ---------------------------------------------------------------------------
# sample ops: (sample, magnitude, rng) -> sample
# ---------------------------------------------------------------------------

def _apply(s: Sample, name: str, magnitude: float, image: np.ndarray) -> Sample:
    return s.replace(image=image, audit=s.audit + [f"{name}:{magnitude:g}"])


def brightness(s: Sample, magnitude: float, rng: Optional[SeededRng] = None) -> Sample:
    return _apply(s, "brightness", magnitude, brightness_image(s.image, _factor(magnitude, rng)))


def contrast(s: Sample, magnitude: float, rng: Optional[SeededRng] = None) -> Sample:
    return _apply(s, "contrast", magnitude, contrast_image(s.image, _factor(magnitude, rng)))


def saturation(s: Sample, magnitude: float, rng: Optional[SeededRng] = None) -> Sample:
    return _apply(s, "saturation", magnitude, saturation_image(s.image, _factor(magnitude, rng)))


def hue(s: Sample, magnitude: float, rng: Optional[SeededRng] = None) -> Sample:
    shift = int(round(_signed(magnitude, rng) / MAX_MAGNITUDE * 18))
    return _apply(s, "hue", magnitude, hue_image(s.image, shift))


def color_jitter(s: Sample, kind: str, magnitude: float, rng: Optional[SeededRng] = None) -> Sample:
    ops = {"hue": hue, "contrast": contrast, "brightness": brightness, "saturation": saturation}
    if kind not in ops:
        raise ValueError(f"unknown color jitter '{kind}'")
    return ops[kind](s, magnitude, rng)


def posterize(s: Sample, magnitude: float, rng: Optional[SeededRng] = None) -> Sample:
    bits = 8 - int(round(magnitude / MAX_MAGNITUDE * 4))
    return _apply(s, "posterize", magnitude, posterize_image(s.image, bits))


def solarize(s: Sample, magnitude: float, rng: Optional[SeededRng] = None) -> Sample:
    threshold = 256 - int(round(magnitude / MAX_MAGNITUDE * 256))
    return _apply(s, "solarize", magnitude, solarize_image(s.image, threshold))


def invert(s: Sample, magnitude: float = 0, rng: Optional[SeededRng] = None) -> Sample:
    return _apply(s, "invert", magnitude, invert_image(s.image))


def sharpen(s: Sample, magnitude: float, rng: Optional[SeededRng] = None) -> Sample:
    return _apply(s, "sharpen", magnitude, sharpen_image(s.image, 1.0 + 0.03 * magnitude))


def equalize(s: Sample, magnitude: float = 0, rng: Optional[SeededRng] = None) -> Sample:
    return _apply(s, "equalize", magnitude, equalize_image(s.image))


PhotometricOp = Callable[[Sample, float, Optional[SeededRng]], Sample]

PHOTOMETRIC_OPS: Dict[str, PhotometricOp] = {
    "brightness": brightness,
    "contrast": contrast,
    "saturation": saturation,
    "hue": hue,
    "posterize": posterize,
    "solarize": solarize,
    "invert": invert,
    "sharpen": sharpen,
    "equalize": equalize,
}
