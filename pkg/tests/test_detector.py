import math

import numpy as np
import pytest

from yoloformer.engine import functional as F
from yoloformer.engine.tensor import Tape, Tensor, backward
from yoloformer.models.config_models import CsamVariant, DetectorConfig
from yoloformer.nn.detector import (
    Detector,
    FeaturePyramid,
    decode,
    detector_config_from_settings,
    head_parameter_count,
    images_to_input,
)
from yoloformer.nn.layers import RunContext
from yoloformer.utils.exceptions import ConfigurationError, ShapeError
from yoloformer.utils.rng import SeededRng


@pytest.fixture(scope="module")
def detector():
    return Detector(DetectorConfig(input_size=64), seed=0)


@pytest.mark.unit
class TestDecode:

    def test_zero_logits(self):
        """Test zero logits put each box at its cell center with the anchor size"""
        raw = np.zeros((1, 6, 2, 2))
        [dets] = decode(raw, [(8.0, 8.0)], stride=8, conf_threshold=0.2)
        assert len(dets) == 4
        centers = sorted(((d.box[0] + d.box[2]) / 2, (d.box[1] + d.box[3]) / 2) for d in dets)
        assert centers == [(4.0, 4.0), (4.0, 12.0), (12.0, 4.0), (12.0, 12.0)]
        for d in dets:
            assert d.box[2] - d.box[0] == pytest.approx(8.0)
            assert d.score == pytest.approx(0.25)
            assert d.class_id == 0

    def test_boxes_clipped_to_image(self):
        """Test boxes larger than the image are clipped to its bounds"""
        raw = np.zeros((1, 6, 1, 1))
        [dets] = decode(raw, [(64.0, 64.0)], stride=32, conf_threshold=0.2, image_size=32)
        assert dets[0].box == (0.0, 0.0, 32.0, 32.0)

    def test_confidence_filter(self):
        """Test cells whose score falls below the threshold are dropped"""
        raw = np.zeros((1, 6, 2, 2))
        raw[0, 4, 0, 0] = -20.0
        [dets] = decode(raw, [(8.0, 8.0)], stride=8, conf_threshold=0.2)
        assert len(dets) == 3

    def test_best_class_is_reported(self):
        """Test the arg-max class logit picks the class id"""
        raw = np.zeros((1, 7, 1, 1))
        raw[0, 6] = 5.0
        [dets] = decode(raw, [(8.0, 8.0)], stride=8, conf_threshold=0.1)
        assert dets[0].class_id == 1
        assert dets[0].score == pytest.approx(0.5 / (1.0 + np.exp(-5.0)))

    def test_channel_layout_mismatch(self):
        """Test channels that do not split over the anchors are rejected"""
        with pytest.raises(ShapeError):
            decode(np.zeros((1, 7, 2, 2)), [(8.0, 8.0), (16.0, 16.0)], stride=8, conf_threshold=0.1)


@pytest.mark.unit
class TestDetectorConfig:

    def test_input_size_multiple_of_32(self):
        """Test input sizes that are not multiples of 32 are rejected"""
        with pytest.raises(ValueError):
            DetectorConfig(input_size=100)

    def test_multi_head_needs_divisible_channels(self):
        """Test multi-head variants need every stage width divisible by heads"""
        with pytest.raises(ValueError):
            DetectorConfig(csam_variant=CsamVariant.MULTI_HEAD, heads=3)

    def test_prediction_channels(self):
        """Test each scale predicts 3 * (5 + C) channels"""
        assert DetectorConfig(num_classes=2).prediction_channels == 21
        assert DetectorConfig(num_classes=80).prediction_channels == 255

    def test_config_from_settings(self):
        """Test overrides apply on top of the configured detector section"""
        config = detector_config_from_settings(input_size=64, num_classes=3)
        assert config.input_size == 64
        assert config.num_classes == 3
        assert config.stage_depths == [1, 1, 2, 2, 1]

    def test_config_from_settings_invalid(self):
        """Test an invalid override becomes a ConfigurationError"""
        with pytest.raises(ConfigurationError):
            detector_config_from_settings(input_size=70)


@pytest.mark.integration
class TestDetector:

    def test_output_shapes(self, detector):
        """Test the three scales come out at strides 8, 16 and 32"""
        x = Tensor(np.zeros((2, 3, 64, 64), dtype=np.float32))
        outputs = detector(x)
        assert [o.shape for o in outputs] == [(2, 21, 8, 8), (2, 21, 4, 4), (2, 21, 2, 2)]

    def test_wrong_input_extent(self, detector):
        """Test an input that does not match input_size is rejected"""
        with pytest.raises(ShapeError):
            detector(Tensor(np.zeros((1, 3, 96, 96), dtype=np.float32)))

    def test_head_parameter_count(self, detector):
        """Test the head branch owns exactly its conv, BN and prediction parameters"""
        assert detector.head.p3.num_parameters() == head_parameter_count(64, 2)
        assert detector.head.p5.num_parameters() == head_parameter_count(256, 2)

    def test_parameter_names_are_paths(self, detector):
        """Test parameter names follow the attribute tree"""
        names = [name for name, _ in detector.named_parameters()]
        assert "backbone.stem.conv.weight" in names
        assert "backbone.stage3.tf0.csam.q.conv1.weight" in names
        assert "head.p3.pred.bias" in names

    def test_eval_forward_is_deterministic(self, detector):
        """Test two eval forwards give identical logits"""
        x = Tensor(np.random.default_rng(0).random((1, 3, 64, 64)).astype(np.float32))
        first = [o.data.copy() for o in detector(x)]
        second = [o.data for o in detector(x)]
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)

    def test_same_seed_same_weights(self):
        """Test construction is a pure function of the seed"""
        a = Detector(DetectorConfig(input_size=64), seed=5).state_dict()
        b = Detector(DetectorConfig(input_size=64), seed=5).state_dict()
        assert list(a) == list(b)
        for key in a:
            np.testing.assert_array_equal(a[key], b[key])

    def test_train_forward_with_dropblock(self):
        """Test a train-mode forward with DropBlock keeps the output shapes"""
        model = Detector(DetectorConfig(input_size=64), seed=1)
        x = Tensor(np.random.default_rng(1).random((2, 3, 64, 64)).astype(np.float32))
        ctx = RunContext.train(SeededRng(0, "step"), dropblock_keep=0.9, dropblock_block=3)
        outputs = model(x, ctx)
        assert [o.shape[2] for o in outputs] == [8, 4, 2]

    def test_predict_on_uint8_image(self, detector):
        """Test predict accepts one HWC uint8 image and keeps boxes inside it"""
        image = np.random.default_rng(2).integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        [dets] = detector.predict(image, conf_threshold=0.001, nms_iou=0.5)
        for d in dets:
            assert 0.0 <= d.box[0] < d.box[2] <= 64.0
            assert 0.0 <= d.box[1] < d.box[3] <= 64.0
            assert 0.001 <= d.score <= 1.0

    def test_residual_baseline(self):
        """Test the residual-block baseline builds and runs"""
        model = Detector(DetectorConfig(input_size=64, block_type="residual"), seed=0)
        outputs = model(Tensor(np.zeros((1, 3, 64, 64), dtype=np.float32)))
        assert outputs[0].shape == (1, 21, 8, 8)

    def test_objectness_bias_starts_at_prior(self, detector):
        """Test every head starts objectness logits at logit(0.01) and leaves the other biases alone"""
        per_anchor = 5 + detector.config.num_classes
        for branch in (detector.head.p3, detector.head.p4, detector.head.p5):
            bias = branch.pred.bias.value.data
            np.testing.assert_allclose(bias[4::per_anchor], math.log(0.01 / 0.99), rtol=1e-6)
            others = np.delete(bias, np.arange(4, bias.size, per_anchor))
            assert np.all(np.abs(others) < 1.0)

    def test_doubling_input_doubles_output_extents(self):
        """Test every scale's extent doubles when the input size doubles"""
        small = Detector(DetectorConfig(input_size=64), seed=0)
        large = Detector(DetectorConfig(input_size=128), seed=0)
        a = small(Tensor(np.zeros((1, 3, 64, 64), dtype=np.float32)))
        b = large(Tensor(np.zeros((1, 3, 128, 128), dtype=np.float32)))
        for x, y in zip(a, b):
            assert y.shape[1] == x.shape[1]
            assert y.shape[2:] == (2 * x.shape[2], 2 * x.shape[3])

    def test_gradient_reaches_stem(self):
        """Test a loss over all three heads back-propagates into the stem weights"""
        model = Detector(DetectorConfig(input_size=64), seed=2)
        x = Tensor(np.random.default_rng(3).random((2, 3, 64, 64)).astype(np.float32))
        rng = np.random.default_rng(4)
        with Tape() as tape:
            outputs = model(x, RunContext.train(SeededRng(0, "step")))
            loss = F.sum(outputs[0] * rng.normal(size=outputs[0].shape).astype(np.float32))
            for out in outputs[1:]:
                loss = loss + F.sum(out * rng.normal(size=out.shape).astype(np.float32))
        backward(loss, tape, model.parameters())
        grad = model.backbone.stem.conv.weight.value.grad
        assert grad is not None
        assert np.all(np.isfinite(grad))
        assert np.abs(grad).max() > 0.0

    def test_top_down_dataflow(self, detector):
        """Test stage 5 feeds every head while stage 3 only feeds the stride-8 head"""
        x = Tensor(np.random.default_rng(5).random((1, 3, 64, 64)).astype(np.float32))
        pyramid = detector.backbone(x)

        def heads(p):
            return [o.data for o in detector.head(detector.neck(p))]

        base = heads(pyramid)
        bump = lambda t: Tensor(t.data + 1.0)
        from_p5 = heads(FeaturePyramid(pyramid.p3, pyramid.p4, bump(pyramid.p5)))
        from_p3 = heads(FeaturePyramid(bump(pyramid.p3), pyramid.p4, pyramid.p5))

        assert all(not np.allclose(a, b) for a, b in zip(base, from_p5))
        assert not np.allclose(base[0], from_p3[0])
        np.testing.assert_array_equal(base[1], from_p3[1])
        np.testing.assert_array_equal(base[2], from_p3[2])


@pytest.mark.unit
class TestImagesToInput:

    def test_layout_and_scale(self):
        """Test uint8 NHWC becomes float NCHW in [0, 1]"""
        images = np.full((2, 4, 5, 3), 255, dtype=np.uint8)
        x = images_to_input(images)
        assert x.shape == (2, 3, 4, 5)
        np.testing.assert_allclose(x, 1.0)

    def test_single_image(self):
        """Test an HWC image gains a batch axis"""
        assert images_to_input(np.zeros((4, 4, 3), dtype=np.uint8)).shape == (1, 3, 4, 4)
