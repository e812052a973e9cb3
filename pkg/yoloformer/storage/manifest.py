"""
JSON-Lines dataset manifests.

Each line is ``{"image": "<path relative to the manifest>", "boxes": [[xmin, ymin, xmax, ymax, class_id], ...]}``;
the sidecar ``classes.txt`` lists one class name per line (index = line number).
"""
import json
import logging
import os
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, field_validator

from yoloformer.models.detection_models import Sample
from yoloformer.storage.images import read_image, write_image
from yoloformer.utils.exceptions import ManifestError

logger = logging.getLogger(__name__)

CLASSES_FILE = "classes.txt"


class ManifestRecord(BaseModel):
    image: str
    boxes: List[List[float]] = Field(default_factory=list)

    @field_validator("boxes")
    @classmethod
    def check_boxes(cls, v):
        for box in v:
            if len(box) != 5:
                raise ValueError(f"box {box} must have 5 entries (xmin, ymin, xmax, ymax, class_id)")
            xmin, ymin, xmax, ymax, class_id = box
            if not (0 <= xmin < xmax and 0 <= ymin < ymax):
                raise ValueError(f"invalid box {box[:4]}")
            if class_id < 0 or class_id != int(class_id):
                raise ValueError(f"invalid class id {class_id}")
        return v


class Dataset:
    """Manifest records with lazily loaded, cached images"""

    def __init__(self, records: Sequence[ManifestRecord], class_names: Sequence[str], root: str = "."):
        self.records = list(records)
        self.class_names = list(class_names)
        self.root = root
        self._cache: Dict[int, Sample] = {}

    def __len__(self) -> int:
        return len(self.records)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def image_path(self, index: int) -> str:
        return os.path.join(self.root, self.records[index].image)

    def sample(self, index: int) -> Sample:
        if index not in self._cache:
            record = self.records[index]
            boxes = np.array([b[:4] for b in record.boxes], dtype=np.float64).reshape(-1, 4)
            labels = np.array([int(b[4]) for b in record.boxes], dtype=np.int64)
            try:
                self._cache[index] = Sample(image=read_image(self.image_path(index)), boxes=boxes,
                                            labels=labels, source=record.image)
            except ValueError as e:
                raise ManifestError(f"record {index + 1}: {e}", line=index + 1)
        return self._cache[index]

    def samples(self) -> List[Sample]:
        return [self.sample(i) for i in range(len(self))]

    def all_boxes(self) -> np.ndarray:
        """Every box as [K, 4] without touching the images"""
        boxes = [b[:4] for r in self.records for b in r.boxes]
        return np.array(boxes, dtype=np.float64).reshape(-1, 4)


def load_class_names(directory: str) -> List[str]:
    path = os.path.join(directory, CLASSES_FILE)
    if not os.path.exists(path):
        return []
    with open(path, "r", encoding="utf-8") as f:
        return [line.strip() for line in f if line.strip()]


def load_manifest(path: str, num_classes: Optional[int] = None, check_images: bool = False) -> Dataset:
    """Parse and validate every line; all errors are reported together"""
    if not os.path.exists(path):
        raise ManifestError(f"manifest not found: {path}", path=path)
    root = os.path.dirname(os.path.abspath(path))
    class_names = load_class_names(root)
    limit = num_classes if num_classes is not None else (len(class_names) or None)

    records: List[ManifestRecord] = []
    errors: List[Dict] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = ManifestRecord(**json.loads(line))
            except (json.JSONDecodeError, TypeError, ValueError) as e:
                errors.append({"line": line_no, "error": str(e).splitlines()[0]})
                continue
            bad = [b for b in record.boxes if limit is not None and int(b[4]) >= limit]
            if bad:
                errors.append({"line": line_no, "error": f"class id {int(bad[0][4])} >= {limit} classes"})
                continue
            records.append(record)

    if errors:
        first = errors[0]
        exc = ManifestError(f"{path}: line {first['line']}: {first['error']}"
                            + (f" (+{len(errors) - 1} more)" if len(errors) > 1 else ""),
                            line=first["line"], path=path)
        exc.details["errors"] = errors
        raise exc

    dataset = Dataset(records, class_names, root)
    if check_images:
        for i in range(len(dataset)):
            dataset.sample(i)
    logger.info("Loaded manifest %s: %d records, %d classes", path, len(records), len(class_names))
    return dataset


def save_manifest(path: str, samples: Sequence[Sample], class_names: Sequence[str],
                  image_dir: str = "images", prefix: str = "img") -> List[str]:
    """Write images as PPM plus the manifest and classes sidecar; returns image paths"""
    root = os.path.dirname(os.path.abspath(path))
    os.makedirs(os.path.join(root, image_dir), exist_ok=True)
    written = []
    with open(path, "w", encoding="utf-8") as f:
        for i, sample in enumerate(samples):
            rel = f"{image_dir}/{prefix}_{i:05d}.ppm"
            write_image(os.path.join(root, rel), sample.image)
            boxes = [[float(v) for v in box] + [int(label)] for box, label in zip(sample.boxes, sample.labels)]
            f.write(json.dumps({"image": rel, "boxes": boxes}) + "\n")
            written.append(rel)
    with open(os.path.join(root, CLASSES_FILE), "w", encoding="utf-8") as f:
        f.write("".join(f"{name}\n" for name in class_names))
    logger.info("Wrote manifest %s with %d images", path, len(written))
    return written
