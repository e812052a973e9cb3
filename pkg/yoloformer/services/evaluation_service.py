import json
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from yoloformer.augment.geometric import resize
from yoloformer.evaluation.metrics import mean_ap
from yoloformer.models.config_models import EvalConfig
from yoloformer.models.detection_models import Detection, GroundTruth, MapReport
from yoloformer.nn.detector import Detector
from yoloformer.storage.manifest import Dataset

logger = logging.getLogger(__name__)


class EvaluationService:
    def __init__(self, config: Optional[EvalConfig] = None, batch_size: int = 8):
        self.config = config or EvalConfig()
        self.batch_size = batch_size

    def predict_dataset(self, detector: Detector,
                        dataset: Dataset) -> Tuple[List[List[Detection]], List[List[GroundTruth]]]:
        """Detections and ground truth per image, both at the detector's input size"""
        size = detector.config.input_size
        detections: List[List[Detection]] = []
        ground_truths: List[List[GroundTruth]] = []
        for start in range(0, len(dataset), self.batch_size):
            stop = min(start + self.batch_size, len(dataset))
            samples = [resize(dataset.sample(i), size) for i in range(start, stop)]
            images = np.stack([s.image for s in samples])
            detections.extend(detector.predict(images, self.config.conf_threshold, self.config.nms_iou))
            ground_truths.extend(s.ground_truth() for s in samples)
        return detections, ground_truths

    def evaluate(self, detector: Detector, dataset: Dataset) -> MapReport:
        detections, ground_truths = self.predict_dataset(detector, dataset)
        names = dataset.class_names if len(dataset.class_names) == detector.config.num_classes else None
        report = self.evaluate_predictions(detections, ground_truths, detector.config.num_classes, names)
        logger.info("Evaluated %d images: mAP@%.2f = %.4f", len(dataset), self.config.iou_threshold, report.mean_ap)
        return report

    def evaluate_predictions(self, detections: Sequence[Sequence[Detection]],
                             ground_truths: Sequence[Sequence[GroundTruth]], num_classes: int,
                             class_names: Optional[Sequence[str]] = None) -> MapReport:
        return mean_ap(detections, ground_truths, num_classes, self.config, class_names)


def report_to_json(report: MapReport, extra: Optional[dict] = None) -> str:
    payload = report.model_dump()
    if extra:
        payload["config"] = extra
    return json.dumps(payload, indent=2, sort_keys=True)


def render_report(report: MapReport) -> str:
    """Aligned per-class AP table"""
    width = max([len(c.name) for c in report.per_class] + [5])
    lines = [f"{'class':<{width}}  {'AP':>7}  {'GT':>5}  {'dets':>6}"]
    for c in report.per_class:
        ap = f"{c.ap * 100:6.2f}%" if c.ap is not None else "    n/a"
        lines.append(f"{c.name:<{width}}  {ap:>7}  {c.num_gt:>5}  {c.num_detections:>6}")
    lines.append(f"{'mAP':<{width}}  {report.mean_ap * 100:6.2f}%  "
                 f"(IoU {report.iou_threshold:g}, {report.interpolation}, {report.num_images} images)")
    lines.extend(f"note: {n}" for n in report.notes)
    return "\n".join(lines)
