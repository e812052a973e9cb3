from fastapi import APIRouter, File, Query, UploadFile
from typing import Optional

from yoloformer.models.api_models import DetectResponse, ModelInfoResponse
from yoloformer.services.inference_service import InferenceService
from yoloformer.utils.exceptions import ValidationError

router = APIRouter()
inference_service = InferenceService()

@router.post("/detect", response_model=DetectResponse)
def detect(
    image: UploadFile = File(..., description="PPM (P6) or any OpenCV-readable image"),
    conf_threshold: Optional[float] = Query(None, gt=0, le=1, description="Score cut, defaults to config"),
    nms_iou: Optional[float] = Query(None, gt=0, le=1, description="NMS IoU, defaults to config")
):
    """Run the served detector on one uploaded image; FastAPI runs it in the threadpool"""
    data = image.file.read()
    if not data:
        raise ValidationError("empty upload", field="image")
    detections, (width, height) = inference_service.detect(data, conf_threshold, nms_iou)
    detector, _ = inference_service.detector()
    return DetectResponse(
        detections=detections,
        image_width=width,
        image_height=height,
        input_size=detector.config.input_size,
        count=len(detections)
    )

@router.get("/model", response_model=ModelInfoResponse)
def model_info():
    detector, meta = inference_service.detector()
    return ModelInfoResponse(
        checkpoint=inference_service.checkpoint_path,
        config=detector.config.model_dump(mode="json"),
        num_parameters=detector.num_parameters(),
        meta=meta
    )
