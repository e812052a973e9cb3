"""
Detector checkpoints: model tensors plus the architecture as ``meta.*`` scalars,
so a checkpoint file alone rebuilds the detector.
"""
import logging
from typing import Dict, Optional, Tuple

from yoloformer.models.config_models import CsamVariant, DetectorConfig
from yoloformer.nn.detector import Detector
from yoloformer.storage.checkpoint import load_checkpoint, save_checkpoint, split_meta
from yoloformer.utils.exceptions import CheckpointError

logger = logging.getLogger(__name__)

VARIANT_CODES = {v: i for i, v in enumerate(CsamVariant)}
BLOCK_CODES = {"transformer": 0, "residual": 1}


def config_to_meta(config: DetectorConfig) -> Dict[str, float]:
    meta = {
        "arch.input_size": config.input_size,
        "arch.num_classes": config.num_classes,
        "arch.stem_channels": config.stem_channels,
        "arch.variant": VARIANT_CODES[config.csam_variant],
        "arch.heads": config.heads,
        "arch.shake_shake": float(config.shake_shake),
        "arch.block_type": BLOCK_CODES[config.block_type],
    }
    for i, (depth, channels) in enumerate(zip(config.stage_depths, config.stage_channels)):
        meta[f"arch.depth{i}"] = depth
        meta[f"arch.channels{i}"] = channels
    for s, scale in enumerate(config.anchors):
        for a, (w, h) in enumerate(scale):
            meta[f"arch.anchor{s}{a}.w"] = w
            meta[f"arch.anchor{s}{a}.h"] = h
    return meta


def config_from_meta(meta: Dict[str, float], path: Optional[str] = None) -> DetectorConfig:
    try:
        variants = list(CsamVariant)
        blocks = {v: k for k, v in BLOCK_CODES.items()}
        return DetectorConfig(
            input_size=int(meta["arch.input_size"]),
            num_classes=int(meta["arch.num_classes"]),
            stem_channels=int(meta["arch.stem_channels"]),
            csam_variant=variants[int(meta["arch.variant"])],
            heads=int(meta["arch.heads"]),
            shake_shake=bool(meta["arch.shake_shake"]),
            block_type=blocks[int(meta["arch.block_type"])],
            stage_depths=[int(meta[f"arch.depth{i}"]) for i in range(5)],
            stage_channels=[int(meta[f"arch.channels{i}"]) for i in range(5)],
            anchors=[[(meta[f"arch.anchor{s}{a}.w"], meta[f"arch.anchor{s}{a}.h"]) for a in range(3)]
                     for s in range(3)],
        )
    except KeyError as e:
        raise CheckpointError(f"checkpoint lacks architecture entry {e}", path=path) from e


class ModelService:
    """Save and restore detectors"""

    @staticmethod
    def save(detector: Detector, path: str, extras: Optional[Dict[str, float]] = None):
        meta = config_to_meta(detector.config)
        meta.update(extras or {})
        save_checkpoint(path, detector.state_dict(), meta)

    @staticmethod
    def load(path: str) -> Tuple[Detector, Dict[str, float]]:
        state, meta = split_meta(load_checkpoint(path))
        detector = Detector(config_from_meta(meta, path))
        detector.load_state_dict(state)
        logger.info("Restored %s detector (%d params) from %s", detector.config.csam_variant.value,
                    detector.num_parameters(), path)
        return detector, {k: v for k, v in meta.items() if not k.startswith("arch.")}
