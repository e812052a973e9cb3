import logging
import threading
from typing import Dict, List, Optional, Tuple

from yoloformer.augment.geometric import resize
from yoloformer.models.detection_models import Detection, Sample
from yoloformer.nn.detector import Detector
from yoloformer.services.model_service import ModelService
from yoloformer.storage.images import decode_image
from yoloformer.utils.config import settings
from yoloformer.utils.exceptions import CheckpointError

logger = logging.getLogger(__name__)


class InferenceService:
    """Serves one detector, loaded on first use from the configured checkpoint"""

    def __init__(self, checkpoint_path: Optional[str] = None):
        self._path = checkpoint_path
        self._detector: Optional[Detector] = None
        self._meta: Dict[str, float] = {}
        self._lock = threading.Lock()

    @property
    def checkpoint_path(self) -> str:
        path = self._path or settings.checkpoint_path
        if not path:
            raise CheckpointError("no checkpoint configured (set YOLOFORMER_CHECKPOINT)")
        return path

    def detector(self) -> Tuple[Detector, Dict[str, float]]:
        with self._lock:
            if self._detector is None:
                self._detector, self._meta = ModelService.load(self.checkpoint_path)
            return self._detector, self._meta

    def detect(self, data: bytes, conf_threshold: Optional[float] = None,
               nms_iou: Optional[float] = None) -> Tuple[List[Detection], Tuple[int, int]]:
        """Decode, stretch to the input size, predict; returns detections and the original (w, h)"""
        detector, _ = self.detector()
        image = decode_image(data)
        h, w = image.shape[:2]
        sample = resize(Sample(image=image), detector.config.input_size)
        detections = detector.predict(sample.image[None], conf_threshold, nms_iou)[0]
        logger.info("detect: %dx%d image -> %d detections", w, h, len(detections))
        return detections, (w, h)

    def reset(self):
        with self._lock:
            self._detector = None
            self._meta = {}
