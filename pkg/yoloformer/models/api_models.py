from pydantic import BaseModel, Field, model_validator
from typing import Dict, List, Optional

from yoloformer.models.config_models import EvalConfig
from yoloformer.models.detection_models import Detection, GroundTruth


class DetectResponse(BaseModel):
    detections: List[Detection]
    image_width: int
    image_height: int
    input_size: int     # boxes are in input_size x input_size pixels
    count: int


class EvaluateRequest(BaseModel):
    detections: List[List[Detection]]       # one list per image
    ground_truths: List[List[GroundTruth]]  # same image order
    num_classes: int = Field(gt=0)
    class_names: Optional[List[str]] = None
    config: EvalConfig = Field(default_factory=EvalConfig)

    @model_validator(mode="after")
    def check_lengths(self):
        if len(self.detections) != len(self.ground_truths):
            raise ValueError("detections and ground_truths must list the same images")
        if self.class_names is not None and len(self.class_names) != self.num_classes:
            raise ValueError("class_names must have num_classes entries")
        return self


class ModelInfoResponse(BaseModel):
    checkpoint: str
    config: Dict
    num_parameters: int
    meta: Dict[str, float] = Field(default_factory=dict)
