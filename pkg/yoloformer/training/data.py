"""
Seed-deterministic batching: every sample's augmentation stream is derived
from (seed, epoch, sample index), and the batch order from (seed, epoch).
"""
import logging
import math
from typing import Iterator, List, NamedTuple, Optional

import numpy as np

from yoloformer.augment.geometric import mosaic, resize
from yoloformer.augment.policies import apply_policy
from yoloformer.models.config_models import AugmentPolicy
from yoloformer.models.detection_models import Sample
from yoloformer.storage.manifest import Dataset
from yoloformer.utils.rng import SeededRng, sample_seed

logger = logging.getLogger(__name__)


class Batch(NamedTuple):
    images: np.ndarray          # [B, S, S, 3] uint8
    boxes: List[np.ndarray]
    labels: List[np.ndarray]
    indices: List[int]


def mosaic_sample(dataset: Dataset, index: int, epoch: int, seed: int, size: int) -> Sample:
    """Sample ``index`` plus three rng-chosen partners composed into one canvas"""
    rng = sample_seed(seed, epoch, index).derive("mosaic")
    partners = [int(p) for p in rng.choice(len(dataset), size=3)]
    sources = [resize(dataset.sample(i), size) for i in [index] + partners]
    return mosaic(sources, size, rng)


class BatchLoader:
    def __init__(self, dataset: Dataset, input_size: int, batch_size: int, seed: int = 0,
                 policy: Optional[AugmentPolicy] = None, use_mosaic: bool = False, shuffle: bool = True):
        self.dataset = dataset
        self.input_size = input_size
        self.batch_size = batch_size
        self.seed = seed
        self.policy = policy or AugmentPolicy()
        self.use_mosaic = use_mosaic
        self.shuffle = shuffle

    def __len__(self) -> int:
        return math.ceil(len(self.dataset) / self.batch_size)

    def order(self, epoch: int) -> np.ndarray:
        if not self.shuffle:
            return np.arange(len(self.dataset))
        return SeededRng(self.seed, "order", counter=epoch).permutation(len(self.dataset))

    def sample_at(self, epoch: int, index: int) -> Sample:
        if self.use_mosaic:
            s = mosaic_sample(self.dataset, index, epoch, self.seed, self.input_size)
        else:
            s = resize(self.dataset.sample(index), self.input_size)
        return apply_policy(s, self.policy, sample_seed(self.seed, epoch, index).derive("policy"))

    def batches(self, epoch: int) -> Iterator[Batch]:
        order = [int(i) for i in self.order(epoch)]
        for start in range(0, len(order), self.batch_size):
            indices = order[start:start + self.batch_size]
            samples = [self.sample_at(epoch, i) for i in indices]
            yield Batch(images=np.stack([s.image for s in samples]), boxes=[s.boxes for s in samples],
                        labels=[s.labels for s in samples], indices=indices)
