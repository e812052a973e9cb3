"""
Three-scale detector: transformer-block backbone, top-down neck, YOLO head.
"""
import logging
import math
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from yoloformer.engine import functional as F
from yoloformer.engine.tensor import DTYPE, Tensor
from yoloformer.models.config_models import DEPTH_PRESETS, DetectorConfig, Mode
from yoloformer.models.detection_models import Detection
from yoloformer.nn.attention import build_block
from yoloformer.nn.layers import Conv2d, ConvBnMish, Module, RunContext
from yoloformer.nn.regularizers import dropblock
from yoloformer.utils.config import settings, validated
from yoloformer.utils.exceptions import ConfigurationError, ShapeError
from yoloformer.utils.rng import SeededRng

logger = logging.getLogger(__name__)

# initial sigmoid(obj) on every cell
OBJECTNESS_PRIOR = 0.01


class FeaturePyramid(NamedTuple):
    p3: Tensor
    p4: Tensor
    p5: Tensor


class Stage(Module):
    """stride-2 ConvBnMish followed by ``depth`` blocks named tf0, tf1, ..."""

    def __init__(self, in_channels: int, out_channels: int, depth: int, config: DetectorConfig,
                 rng: Optional[SeededRng] = None):
        self.down = ConvBnMish(in_channels, out_channels, 3, stride=2, rng=rng)
        self.depth = depth
        for j in range(depth):
            setattr(self, f"tf{j}", build_block(config.block_type, out_channels, config.csam_variant,
                                                config.heads, config.shake_shake, rng))

    def forward(self, x: Tensor, ctx: Optional[RunContext] = None) -> Tensor:
        x = self.down(x, ctx)
        for j in range(self.depth):
            x = getattr(self, f"tf{j}")(x, ctx)
        return x


class Backbone(Module):
    def __init__(self, config: DetectorConfig, rng: Optional[SeededRng] = None):
        self.config = config
        self.stem = ConvBnMish(3, config.stem_channels, 3, rng=rng)
        prev = config.stem_channels
        for i, (depth, channels) in enumerate(zip(config.stage_depths, config.stage_channels), start=1):
            setattr(self, f"stage{i}", Stage(prev, channels, depth, config, rng))
            prev = channels

    def forward(self, image: Tensor, ctx: Optional[RunContext] = None) -> FeaturePyramid:
        return backbone_forward(image, self, ctx)


def backbone_forward(image: Tensor, backbone: Backbone, ctx: Optional[RunContext] = None) -> FeaturePyramid:
    size = backbone.config.input_size
    if image.ndim != 4 or image.shape[1] != 3 or image.shape[2:] != (size, size):
        raise ShapeError(f"backbone expects [N,3,{size},{size}], got {image.shape}", dimension="input")
    x = backbone.stem(image, ctx)
    outputs = []
    for i in range(1, 6):
        x = getattr(backbone, f"stage{i}")(x, ctx)
        outputs.append(x)
    return FeaturePyramid(p3=outputs[2], p4=outputs[3], p5=outputs[4])


class Neck(Module):
    def __init__(self, config: DetectorConfig, rng: Optional[SeededRng] = None):
        c3, c4, c5 = config.stage_channels[2:]
        self.fuse5 = ConvBnMish(c5, c5, 1, rng=rng)
        self.fuse4 = ConvBnMish(c5 + c4, c4, 1, rng=rng)
        self.fuse3 = ConvBnMish(c4 + c3, c3, 1, rng=rng)

    def forward(self, pyramid: FeaturePyramid, ctx: Optional[RunContext] = None) -> FeaturePyramid:
        return neck_forward(pyramid, self, ctx)


def neck_forward(pyramid: FeaturePyramid, neck: Neck, ctx: Optional[RunContext] = None) -> FeaturePyramid:
    p3, p4, p5 = pyramid
    for fine, coarse, name in ((p4, p5, "p4/p5"), (p3, p4, "p3/p4")):
        if fine.shape[2] != 2 * coarse.shape[2] or fine.shape[3] != 2 * coarse.shape[3]:
            raise ShapeError(f"pyramid extents {fine.shape} and {coarse.shape} are not a factor-2 chain",
                             dimension=name)
    n5 = neck.fuse5(p5, ctx)
    n4 = neck.fuse4(F.channel_concat([F.upsample_bilinear2x(n5), p4]), ctx)
    n3 = neck.fuse3(F.channel_concat([F.upsample_bilinear2x(n4), p3]), ctx)
    return FeaturePyramid(p3=n3, p4=n4, p5=n5)


def init_objectness_bias(pred: Conv2d, num_anchors: int, prior: float = OBJECTNESS_PRIOR):
    """Objectness logits start at logit(prior) for every anchor"""
    bias = pred.bias.value.data.copy()
    bias[4::pred.out_channels // num_anchors] = math.log(prior / (1.0 - prior))
    pred.bias.assign(bias)


class HeadBranch(Module):
    """3x3 ConvBnMish -> DropBlock -> 1x1 conv to 3*(5+C) logits"""

    def __init__(self, channels: int, prediction_channels: int, rng: Optional[SeededRng] = None,
                 num_anchors: int = 3):
        self.conv = ConvBnMish(channels, channels, 3, rng=rng)
        self.pred = Conv2d(channels, prediction_channels, 1, rng=rng)
        init_objectness_bias(self.pred, num_anchors)

    def forward(self, x: Tensor, ctx: Optional[RunContext] = None) -> Tensor:
        ctx = ctx or RunContext.eval()
        y = self.conv(x, ctx)
        if ctx.training and ctx.dropblock_keep < 1.0:
            y = dropblock(y, ctx.dropblock_keep, ctx.dropblock_block, Mode.TRAIN,
                          ctx.module_rng(f"{self.path}.dropblock"))
        return self.pred(y)


class Head(Module):
    def __init__(self, config: DetectorConfig, rng: Optional[SeededRng] = None):
        c3, c4, c5 = config.stage_channels[2:]
        out = config.prediction_channels
        self.p3 = HeadBranch(c3, out, rng, config.num_anchors)
        self.p4 = HeadBranch(c4, out, rng, config.num_anchors)
        self.p5 = HeadBranch(c5, out, rng, config.num_anchors)

    def forward(self, neck: FeaturePyramid, ctx: Optional[RunContext] = None) -> List[Tensor]:
        return head_forward(neck, self, ctx)


def head_forward(neck: FeaturePyramid, head: Head, ctx: Optional[RunContext] = None) -> List[Tensor]:
    """Raw logits per scale, finest first; no output activation"""
    return [head.p3(neck.p3, ctx), head.p4(neck.p4, ctx), head.p5(neck.p5, ctx)]


def head_parameter_count(channels: int, num_classes: int) -> int:
    """3x3 conv (no bias) + BN affine + 1x1 conv with bias"""
    out = 3 * (5 + num_classes)
    return channels * channels * 9 + 2 * channels + channels * out + out


class Detector(Module):
    def __init__(self, config: DetectorConfig, seed: int = 0):
        self.config = config
        rng = SeededRng(seed, "init")
        self.backbone = Backbone(config, rng)
        self.neck = Neck(config, rng)
        self.head = Head(config, rng)
        self.bind_names()
        logger.info("Detector built: variant=%s blocks=%s depths=%s size=%d params=%d",
                    config.csam_variant.value, config.block_type, config.stage_depths,
                    config.input_size, self.num_parameters())

    def forward(self, images: Tensor, ctx: Optional[RunContext] = None) -> List[Tensor]:
        ctx = ctx or RunContext.eval()
        return self.head(self.neck(self.backbone(images, ctx), ctx), ctx)

    def predict(self, images: np.ndarray, conf_threshold: Optional[float] = None,
                nms_iou: Optional[float] = None) -> List[List[Detection]]:
        """Eval-mode forward + decode + NMS on a uint8 NHWC batch"""
        from yoloformer.evaluation.metrics import nms
        conf = settings.conf_threshold if conf_threshold is None else conf_threshold
        nms_iou = settings.nms_iou if nms_iou is None else nms_iou
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        raw = self.forward(Tensor(images_to_input(images)), RunContext.eval())
        per_image: List[List[Detection]] = [[] for _ in range(len(images))]
        for scale, tensor in enumerate(raw):
            decoded = decode(tensor.data, self.config.anchors[scale], self.config.strides[scale],
                             conf, self.config.input_size)
            for i, dets in enumerate(decoded):
                per_image[i].extend(dets)
        return [nms(dets, nms_iou) for dets in per_image]


def images_to_input(images: np.ndarray) -> np.ndarray:
    """uint8 [N,H,W,3] RGB -> float [N,3,H,W] in [0, 1]"""
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    return np.ascontiguousarray(images.transpose(0, 3, 1, 2), dtype=DTYPE) / DTYPE(255.0)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def decode(raw: np.ndarray, anchors: Sequence[Tuple[float, float]], stride: int, conf_threshold: float,
           image_size: Optional[int] = None) -> List[List[Detection]]:
    """Decode one scale's raw logits [N, 3*(5+C), H, W] into detections per image.

    cx = (j + sigmoid(tx)) * stride, cy = (i + sigmoid(ty)) * stride,
    w = anchor_w * exp(tw), h = anchor_h * exp(th),
    score = sigmoid(obj) * sigmoid(best class logit); boxes clipped to the image.
    """
    raw = np.asarray(raw, dtype=np.float64)
    n, channels, h, w = raw.shape
    num_anchors = len(anchors)
    if channels % num_anchors or channels // num_anchors < 6:
        raise ShapeError(f"{channels} channels do not fit {num_anchors} anchors", dimension="channels")
    limit_x = image_size if image_size is not None else w * stride
    limit_y = image_size if image_size is not None else h * stride
    pred = raw.reshape(n, num_anchors, channels // num_anchors, h, w)
    anchors = np.asarray(anchors, dtype=np.float64)
    cols = np.arange(w)[None, None, :]
    rows = np.arange(h)[None, :, None]

    cx = (cols + _sigmoid(pred[:, :, 0])) * stride
    cy = (rows + _sigmoid(pred[:, :, 1])) * stride
    bw = anchors[None, :, 0, None, None] * np.exp(np.minimum(pred[:, :, 2], 20.0))
    bh = anchors[None, :, 1, None, None] * np.exp(np.minimum(pred[:, :, 3], 20.0))
    class_logits = pred[:, :, 5:]
    best = class_logits.argmax(axis=2)
    score = _sigmoid(pred[:, :, 4]) * _sigmoid(class_logits.max(axis=2))

    xmin = np.clip(cx - bw / 2, 0, limit_x)
    ymin = np.clip(cy - bh / 2, 0, limit_y)
    xmax = np.clip(cx + bw / 2, 0, limit_x)
    ymax = np.clip(cy + bh / 2, 0, limit_y)
    keep = (score >= conf_threshold) & (xmax > xmin) & (ymax > ymin)

    results: List[List[Detection]] = []
    for i in range(n):
        idx = np.argwhere(keep[i])
        results.append([
            Detection(box=(xmin[i][tuple(k)], ymin[i][tuple(k)], xmax[i][tuple(k)], ymax[i][tuple(k)]),
                      class_id=int(best[i][tuple(k)]), score=float(score[i][tuple(k)]))
            for k in idx
        ])
    return results


def detector_config_from_settings(**overrides) -> DetectorConfig:
    """DetectorConfig from config.json's detector section plus overrides"""
    if settings.depth_preset not in DEPTH_PRESETS:
        raise ConfigurationError(f"unknown depth preset '{settings.depth_preset}'",
                                 config_key="detector.depth_preset")
    values = {
        "input_size": settings.input_size,
        "num_classes": settings.num_classes,
        "csam_variant": settings.variant,
        "stage_depths": list(DEPTH_PRESETS[settings.depth_preset]),
        "block_type": settings.block_type,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    return validated(DetectorConfig, "detector", **values)
