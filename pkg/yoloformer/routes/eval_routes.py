from fastapi import APIRouter

from yoloformer.models.api_models import EvaluateRequest
from yoloformer.models.detection_models import MapReport
from yoloformer.services.evaluation_service import EvaluationService

router = APIRouter()

@router.post("/evaluate", response_model=MapReport)
def evaluate(request: EvaluateRequest):
    """mAP report for posted detections against posted ground truth"""
    service = EvaluationService(request.config)
    return service.evaluate_predictions(
        request.detections, request.ground_truths, request.num_classes, request.class_names
    )
