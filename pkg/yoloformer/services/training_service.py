"""
Epoch loop: forward in train mode, composite loss, backward, SGD with the
warmup + cosine schedule, per-epoch mAP and best-mAP checkpointing.
"""
import json
import logging
import math
import os
import time
from collections import defaultdict
from typing import Dict, List, Optional, Tuple

import numpy as np

from yoloformer.engine.optim import sgd_step
from yoloformer.engine.tensor import Tape, Tensor, backward
from yoloformer.models.config_models import AugmentPolicy, EvalConfig, TrainConfig
from yoloformer.nn.detector import Detector, images_to_input
from yoloformer.nn.layers import RunContext
from yoloformer.services.evaluation_service import EvaluationService
from yoloformer.services.model_service import ModelService
from yoloformer.storage.manifest import Dataset
from yoloformer.training.data import Batch, BatchLoader
from yoloformer.training.losses import detection_loss
from yoloformer.training.schedule import keep_prob_at, lr_at
from yoloformer.training.targets import assign_targets
from yoloformer.utils.config import settings
from yoloformer.utils.exceptions import NumericalError
from yoloformer.utils.rng import step_rng

logger = logging.getLogger(__name__)


class TrainingService:
    def __init__(self, detector: Detector, config: TrainConfig, dataset: Dataset, out_dir: str,
                 seed: int = 0, policy: Optional[AugmentPolicy] = None, eval_dataset: Optional[Dataset] = None,
                 eval_config: Optional[EvalConfig] = None):
        self.detector = detector
        self.config = config
        self.seed = seed
        self.out_dir = out_dir
        self.loader = BatchLoader(dataset, detector.config.input_size, config.batch_size, seed,
                                  policy, config.mosaic)
        self.eval_dataset = eval_dataset if eval_dataset is not None else dataset
        self.evaluator = EvaluationService(eval_config)
        self.steps_per_epoch = max(1, math.ceil(len(self.loader) / config.accumulate_steps))
        self.checkpoint_path = os.path.join(out_dir, settings.checkpoint_name)
        self.metrics_path = os.path.join(out_dir, settings.metrics_log)
        self.lr_trace: List[float] = []
        self.best_map: Optional[float] = None
        self.best_epoch: Optional[int] = None

    # -- one batch ----------------------------------------------------------

    def compute_loss(self, batch: Batch, ctx: RunContext) -> Tuple[Tensor, Dict[str, float]]:
        cfg = self.detector.config
        raw = self.detector(Tensor(images_to_input(batch.images)), ctx)
        assignment = assign_targets(batch.boxes, batch.labels, cfg.anchors, cfg.strides, cfg.num_classes,
                                    cfg.input_size)
        return detection_loss(raw, assignment, cfg.anchors, self.config, cfg.num_classes)

    # -- one epoch ----------------------------------------------------------

    def train_epoch(self, epoch: int) -> Dict[str, float]:
        """Run every batch of ``epoch``; returns mean loss terms and the last lr"""
        config = self.config
        params = self.detector.parameters()
        self.detector.zero_grad()
        keep = keep_prob_at(epoch, config)
        num_batches = len(self.loader)
        totals: Dict[str, float] = defaultdict(float)
        pending = 0
        optimizer_step = 0
        lr = 0.0

        for index, batch in enumerate(self.loader.batches(epoch)):
            ctx = RunContext.train(step_rng(self.seed, epoch, index), dropblock_keep=keep,
                                   dropblock_block=config.dropblock_block_size)
            try:
                with Tape() as tape:
                    loss, parts = self.compute_loss(batch, ctx)
                    if config.accumulate_steps > 1:
                        loss = loss * (1.0 / config.accumulate_steps)
            except NumericalError as e:
                raise NumericalError(f"epoch {epoch} batch {index}: {e.message}",
                                     operation=e.details.get("operation"), batch_index=index) from e
            if not np.isfinite(parts["total"]):
                raise NumericalError(f"epoch {epoch} batch {index}: non-finite loss {parts['total']}",
                                     operation="loss", batch_index=index)

            backward(loss, tape, params)
            pending += 1
            for key, value in parts.items():
                totals[key] += value

            if pending == config.accumulate_steps or index == num_batches - 1:
                lr = lr_at(epoch * self.steps_per_epoch + optimizer_step, config, self.steps_per_epoch)
                sgd_step(params, lr, config.momentum, config.weight_decay)
                self.lr_trace.append(lr)
                optimizer_step += 1
                pending = 0
            logger.debug("epoch %d batch %d: %s", epoch, index, {k: round(v, 5) for k, v in parts.items()})

        metrics = {key: value / max(num_batches, 1) for key, value in totals.items()}
        metrics["lr"] = lr
        metrics["keep_prob"] = keep
        return metrics

    # -- full run -----------------------------------------------------------

    def _should_evaluate(self, epoch: int) -> bool:
        every = self.config.eval_every
        return every > 0 and ((epoch + 1) % every == 0 or epoch == self.config.epochs - 1)

    def _log_metrics(self, record: Dict):
        with open(self.metrics_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def save(self, epoch: int):
        extras = {"epoch": epoch}
        if self.best_map is not None:
            extras["best_map"] = self.best_map
        ModelService.save(self.detector, self.checkpoint_path, extras)

    def fit(self) -> Dict:
        os.makedirs(self.out_dir, exist_ok=True)
        if os.path.exists(self.metrics_path):
            os.remove(self.metrics_path)
        if self.config.epochs == 0:
            logger.info("epochs = 0: writing the initial checkpoint only")
            self.save(-1)
            return self.summary()

        logger.info("Training %d epochs x %d steps (batch %d, accumulate %d) into %s", self.config.epochs,
                    self.steps_per_epoch, self.config.batch_size, self.config.accumulate_steps, self.out_dir)
        for epoch in range(self.config.epochs):
            start = time.perf_counter()
            metrics = self.train_epoch(epoch)
            record = {"epoch": epoch, **metrics}
            if self._should_evaluate(epoch):
                report = self.evaluator.evaluate(self.detector, self.eval_dataset)
                record["map"] = report.mean_ap
                if self.best_map is None or report.mean_ap > self.best_map:
                    self.best_map, self.best_epoch = report.mean_ap, epoch
                    self.save(epoch)
            else:
                # without a fresh mAP the latest weights are kept
                if self.config.eval_every == 0:
                    self.save(epoch)
            record["wall_time"] = time.perf_counter() - start
            self._log_metrics(record)
            logger.info("epoch %d: loss %.4f (giou %.4f obj %.4f cls %.4f) lr %.6f%s", epoch,
                        metrics.get("total", float("nan")), metrics.get("giou", float("nan")),
                        metrics.get("obj", float("nan")), metrics.get("cls", float("nan")), metrics["lr"],
                        f" mAP {record['map']:.4f}" if "map" in record else "")
        return self.summary()

    def summary(self) -> Dict:
        return {
            "epochs": self.config.epochs,
            "steps": len(self.lr_trace),
            "best_map": self.best_map,
            "best_epoch": self.best_epoch,
            "checkpoint": self.checkpoint_path,
            "metrics_log": self.metrics_path,
        }
