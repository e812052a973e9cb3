from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Box = Tuple[float, float, float, float]


class Detection(BaseModel):
    box: Box
    class_id: int = Field(ge=0)
    score: float = Field(ge=0, le=1)

    @field_validator("box")
    @classmethod
    def check_box(cls, v):
        xmin, ymin, xmax, ymax = v
        if not (xmin < xmax and ymin < ymax):
            raise ValueError(f"degenerate box {v}")
        return tuple(float(c) for c in v)


class GroundTruth(BaseModel):
    box: Box
    class_id: int = Field(ge=0)

    @field_validator("box")
    @classmethod
    def check_box(cls, v):
        xmin, ymin, xmax, ymax = v
        if not (xmin < xmax and ymin < ymax):
            raise ValueError(f"degenerate box {v}")
        return tuple(float(c) for c in v)


class Sample(BaseModel):
    """Image raster (H, W, 3, uint8, RGB) with its class-labelled boxes"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    image: np.ndarray
    boxes: np.ndarray = Field(default_factory=lambda: np.zeros((0, 4)))
    labels: np.ndarray = Field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    dropped: int = 0
    audit: List[str] = Field(default_factory=list)
    source: Optional[str] = None

    @field_validator("image", mode="before")
    @classmethod
    def check_image(cls, v):
        v = np.asarray(v)
        if v.ndim != 3 or v.shape[2] != 3 or v.dtype != np.uint8:
            raise ValueError(f"image must be HxWx3 uint8, got {v.shape} {v.dtype}")
        return v

    @field_validator("boxes", mode="before")
    @classmethod
    def coerce_boxes(cls, v):
        return np.asarray(v, dtype=np.float64).reshape(-1, 4)

    @field_validator("labels", mode="before")
    @classmethod
    def coerce_labels(cls, v):
        return np.asarray(v, dtype=np.int64).reshape(-1)

    @model_validator(mode="after")
    def check_boxes(self):
        h, w = self.image.shape[:2]
        b = self.boxes
        if len(b) != len(self.labels):
            raise ValueError(f"{len(b)} boxes but {len(self.labels)} labels")
        if len(b):
            ok = ((b[:, 0] >= 0) & (b[:, 0] < b[:, 2]) & (b[:, 2] <= w)
                  & (b[:, 1] >= 0) & (b[:, 1] < b[:, 3]) & (b[:, 3] <= h))
            if not ok.all():
                raise ValueError(f"invalid box {b[~ok][0].tolist()} for {w}x{h} image")
            if (self.labels < 0).any():
                raise ValueError("negative class id")
        return self

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    def replace(self, **changes) -> "Sample":
        """Validated copy with some fields changed"""
        data = {"image": self.image, "boxes": self.boxes, "labels": self.labels,
                "dropped": self.dropped, "audit": list(self.audit), "source": self.source}
        data.update(changes)
        return Sample(**data)

    def ground_truth(self) -> List[GroundTruth]:
        return [GroundTruth(box=tuple(b), class_id=int(c)) for b, c in zip(self.boxes, self.labels)]


class PrCurve(BaseModel):
    class_id: int
    scores: List[float] = Field(default_factory=list)
    true_positive: List[bool] = Field(default_factory=list)
    precision: List[float] = Field(default_factory=list)
    recall: List[float] = Field(default_factory=list)
    num_gt: int = 0
    ap: Optional[float] = None

    @property
    def defined(self) -> bool:
        return self.num_gt > 0


class ClassReport(BaseModel):
    class_id: int
    name: str
    ap: Optional[float]
    num_gt: int
    num_detections: int


class MapReport(BaseModel):
    mean_ap: float
    per_class: List[ClassReport]
    num_images: int
    interpolation: str
    iou_threshold: float
    notes: List[str] = Field(default_factory=list)


class BenchReport(BaseModel):
    variant: str
    input_size: int
    n_images: int
    warmup: int
    fps: float
    latency_p50_ms: float
    latency_p95_ms: float
    hardware: str
