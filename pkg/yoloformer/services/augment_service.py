"""
Offline augmentation of a manifest: augmented images + manifest, optional
box-overlay previews, optional materialized mosaics.
"""
import logging
import os
from typing import Dict, List, Optional

from yoloformer.augment.policies import apply_policy
from yoloformer.models.config_models import AugmentPolicy
from yoloformer.models.detection_models import Sample
from yoloformer.storage.images import draw_boxes, write_image
from yoloformer.storage.manifest import Dataset, save_manifest
from yoloformer.training.data import mosaic_sample
from yoloformer.utils.rng import sample_seed

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
PREVIEW_DIR = "preview"


class AugmentService:
    def __init__(self, policy: AugmentPolicy, seed: int = 0, epoch: int = 0):
        self.policy = policy
        self.seed = seed
        self.epoch = epoch

    def augment_sample(self, dataset: Dataset, index: int, mosaic_size: Optional[int] = None) -> Sample:
        """The sample the training loader would see for (seed, epoch, index)"""
        if mosaic_size is not None:
            s = mosaic_sample(dataset, index, self.epoch, self.seed, mosaic_size)
        else:
            s = dataset.sample(index)
        return apply_policy(s, self.policy, sample_seed(self.seed, self.epoch, index).derive("policy"))

    def augment(self, dataset: Dataset, mosaic_size: Optional[int] = None) -> List[Sample]:
        return [self.augment_sample(dataset, i, mosaic_size) for i in range(len(dataset))]

    def write(self, dataset: Dataset, out_dir: str, preview: int = 0,
              mosaic_size: Optional[int] = None) -> Dict:
        samples = self.augment(dataset, mosaic_size)
        manifest_path = os.path.join(out_dir, MANIFEST_NAME)
        os.makedirs(out_dir, exist_ok=True)
        save_manifest(manifest_path, samples, dataset.class_names, prefix="aug")

        previews = []
        for i, s in enumerate(samples[:max(preview, 0)]):
            path = os.path.join(out_dir, PREVIEW_DIR, f"preview_{i:05d}.ppm")
            write_image(path, draw_boxes(s.image, s.boxes, s.labels, dataset.class_names))
            previews.append(path)

        dropped = sum(s.dropped for s in samples)
        if dropped:
            logger.warning("%d degenerate boxes were dropped during augmentation", dropped)
        logger.info("Augmented %d images (policy %s%s) into %s", len(samples), self.policy.policy.value,
                    ", offline mosaic" if mosaic_size else "", out_dir)
        return {
            "manifest": manifest_path,
            "images": len(samples),
            "boxes": int(sum(len(s.boxes) for s in samples)),
            "dropped_boxes": int(dropped),
            "previews": previews,
            "audit": [s.audit for s in samples],
        }
