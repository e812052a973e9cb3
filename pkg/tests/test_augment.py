import os

import numpy as np
import pytest

from yoloformer.augment.geometric import (
    canvas_corners,
    constrained_rotate,
    crop,
    cutout,
    finalize_boxes,
    geometric_pipeline,
    hflip,
    mosaic,
    rotation_canvas,
    translate,
    zoom_out,
)
from yoloformer.augment.photometric import (
    PHOTOMETRIC_OPS,
    brightness,
    invert,
    posterize,
    solarize,
)
from yoloformer.augment.policies import apply_policy, augmix_blend, augmix_mixing, policy_from_name, rand_augment
from yoloformer.models.config_models import AugmentPolicy, AugmentPolicyName, SyntheticSpec
from yoloformer.models.detection_models import Sample
from yoloformer.services.augment_service import AugmentService
from yoloformer.services.synth_service import SynthService
from yoloformer.storage.manifest import load_manifest
from yoloformer.utils.exceptions import ValidationError
from yoloformer.utils.rng import SeededRng


def noise_sample(seed=0, width=80, height=60):
    image = np.random.default_rng(seed).integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    return Sample(image=image, boxes=[[10, 10, 30, 40], [40, 5, 75, 55]], labels=[0, 1])


def assert_valid(s: Sample):
    h, w = s.image.shape[:2]
    b = s.boxes
    assert len(b) == len(s.labels)
    if len(b):
        assert np.all((0 <= b[:, 0]) & (b[:, 0] < b[:, 2]) & (b[:, 2] <= w))
        assert np.all((0 <= b[:, 1]) & (b[:, 1] < b[:, 3]) & (b[:, 3] <= h))


@pytest.mark.unit
class TestConstrainedRotation:

    def test_zero_angle_is_identity(self):
        """Test angle 0 returns the same raster and boxes"""
        s = noise_sample()
        out = constrained_rotate(s, 0.0)
        np.testing.assert_array_equal(out.image, s.image)
        np.testing.assert_array_equal(out.boxes, s.boxes)

    def test_ninety_degree_canvas(self):
        """Test a 90 degree turn swaps the canvas extents"""
        canvas_w, canvas_h, _ = rotation_canvas(80, 60, 90.0)
        assert (canvas_w, canvas_h) == (60, 80)

    def test_ninety_degree_centered_box(self):
        """Test a centered square box maps to a centered box rescaled back to W x H"""
        s = Sample(image=np.zeros((60, 80, 3), dtype=np.uint8), boxes=[[30, 20, 50, 40]], labels=[0])
        out = constrained_rotate(s, 90.0, max_angle=90.0)
        assert out.image.shape == (60, 80, 3)
        np.testing.assert_allclose(out.boxes[0], [20 * 80 / 60, 30 * 60 / 80, 40 * 80 / 60, 50 * 60 / 80],
                                   atol=1e-6)

    def test_corners_on_canvas_boundary(self):
        """Test the image corners land on the padded canvas boundary for random angles"""
        rng = np.random.default_rng(0)
        for _ in range(1000):
            angle = float(rng.uniform(-45, 45))
            width, height = int(rng.integers(16, 200)), int(rng.integers(16, 200))
            canvas_w, canvas_h, _ = rotation_canvas(width, height, angle)
            for x, y in canvas_corners(width, height, angle):
                distance = min(abs(x), abs(x - canvas_w), abs(y), abs(y - canvas_h))
                assert distance < 0.5

    def test_angle_cap(self):
        """Test angles beyond the configured cap are rejected"""
        with pytest.raises(ValidationError):
            constrained_rotate(noise_sample(), 60.0, max_angle=45.0)

    def test_random_rotations_keep_boxes_valid(self):
        """Test rotated samples keep their size and only valid boxes"""
        rng = np.random.default_rng(1)
        s = noise_sample()
        for _ in range(200):
            out = constrained_rotate(s, float(rng.uniform(-45, 45)))
            assert out.image.shape == s.image.shape
            assert_valid(out)
            assert len(out.boxes) + out.dropped == len(s.boxes)


@pytest.mark.unit
class TestZoomMosaicCutout:

    def test_zoom_out_identity(self):
        """Test factor 1 at offset (0, 0) is the identity"""
        s = noise_sample()
        out = zoom_out(s, 1.0, offset=(0, 0))
        np.testing.assert_array_equal(out.image, s.image)
        np.testing.assert_array_equal(out.boxes, s.boxes)

    def test_zoom_out_box_arithmetic(self):
        """Test factor 0.5 at offset (10, 20) maps (0,0,40,40) to (10,20,30,40)"""
        s = Sample(image=np.zeros((80, 80, 3), dtype=np.uint8), boxes=[[0, 0, 40, 40]], labels=[0])
        out = zoom_out(s, 0.5, offset=(10, 20))
        np.testing.assert_allclose(out.boxes[0], [10, 20, 30, 40])
        assert out.image.shape == (80, 80, 3)
        assert out.image[0, 0, 0] == 114

    def test_zoom_out_bad_factor(self):
        """Test factors outside (0, 1] are rejected"""
        with pytest.raises(ValidationError):
            zoom_out(noise_sample(), 1.5, offset=(0, 0))

    def test_random_zoom_keeps_size(self):
        """Test rng-placed zoom-outs keep the raster size and valid boxes"""
        rng = SeededRng(0, "zoom")
        s = noise_sample()
        for _ in range(200):
            out = zoom_out(s, float(rng.uniform(0.2, 1.0)), rng)
            assert out.image.shape == s.image.shape
            assert_valid(out)

    def test_mosaic_solid_color(self):
        """Test four identical solid images give a solid canvas"""
        solid = Sample(image=np.full((40, 50, 3), 77, dtype=np.uint8))
        out = mosaic([solid] * 4, 64, SeededRng(3))
        assert out.image.shape == (64, 64, 3)
        assert np.all(out.image == 77)

    def test_mosaic_quadrant_fill(self):
        """Test a full-frame box in the first source fills the top-left quadrant"""
        full = Sample(image=np.zeros((30, 40, 3), dtype=np.uint8), boxes=[[0, 0, 40, 30]], labels=[1])
        empty = Sample(image=np.zeros((30, 40, 3), dtype=np.uint8))
        out = mosaic([full, empty, empty, empty], 128, junction=(64, 64))
        np.testing.assert_allclose(out.boxes, [[0, 0, 64, 64]])
        assert out.labels.tolist() == [1]

    def test_mosaic_boxes_stay_in_quadrants(self):
        """Test every mosaic box lies inside the canvas for random junctions"""
        sources = [noise_sample(i) for i in range(4)]
        rng = SeededRng(0, "mosaic")
        for _ in range(200):
            out = mosaic(sources, 96, rng)
            assert out.image.shape == (96, 96, 3)
            assert_valid(out)

    def test_mosaic_needs_four(self):
        """Test mosaic rejects anything but four samples"""
        with pytest.raises(ValidationError):
            mosaic([noise_sample()] * 3, 64, SeededRng(0))

    def test_cutout_region(self):
        """Test cutout changes at most side^2 pixels and leaves boxes alone"""
        s = noise_sample()
        out = cutout(s, SeededRng(5))
        side = int(out.audit[-1].split(",")[-1])
        changed = np.any(out.image != s.image, axis=2).sum()
        assert changed <= side * side
        np.testing.assert_array_equal(out.boxes, s.boxes)

    def test_cutout_zero_size(self):
        """Test a zero-size rectangle is the identity"""
        s = noise_sample()
        assert cutout(s, SeededRng(0), fraction_range=(0.0, 0.0)) is s


@pytest.mark.unit
class TestGeometricOps:

    def test_flip_twice_is_identity(self):
        """Test hflip composed with itself restores image and boxes"""
        s = noise_sample()
        out = hflip(hflip(s))
        np.testing.assert_array_equal(out.image, s.image)
        np.testing.assert_array_equal(out.boxes, s.boxes)

    def test_flip_box(self):
        """Test hflip mirrors x coordinates"""
        out = hflip(noise_sample())
        np.testing.assert_allclose(out.boxes[0], [50, 10, 70, 40])

    def test_translate_drops_boxes_off_canvas(self):
        """Test a box pushed off the raster is dropped and counted"""
        s = Sample(image=np.zeros((40, 40, 3), dtype=np.uint8), boxes=[[0, 0, 10, 10]], labels=[0])
        out = translate(s, shift=(-20, 0))
        assert len(out.boxes) == 0
        assert out.dropped == 1

    def test_crop_rescales(self):
        """Test crop maps the crop window back onto the full raster"""
        s = Sample(image=np.zeros((40, 40, 3), dtype=np.uint8), boxes=[[10, 10, 20, 20]], labels=[0])
        out = crop(s, rect=(10, 10, 30, 30))
        np.testing.assert_allclose(out.boxes[0], [0, 0, 20, 20])

    def test_finalize_drops_tiny_boxes(self):
        """Test boxes under one square pixel after clipping are dropped"""
        boxes, labels, dropped = finalize_boxes([[0, 0, 0.5, 0.5], [1, 1, 5, 5]], [0, 1], 10, 10)
        assert labels.tolist() == [1]
        assert dropped == 1

    def test_pipeline_never_fires_at_zero_probability(self):
        """Test the all-skipped path is the identity"""
        s = noise_sample()
        out = geometric_pipeline(s, SeededRng(0), prob=0.0)
        np.testing.assert_array_equal(out.image, s.image)
        np.testing.assert_array_equal(out.boxes, s.boxes)

    def test_pipeline_property_sweep(self):
        """Test random pipeline runs keep the raster size and emit only valid boxes"""
        s = noise_sample()
        for trial in range(300):
            out = geometric_pipeline(s, SeededRng(trial, "pipeline"))
            assert out.image.shape == s.image.shape
            assert_valid(out)


@pytest.mark.unit
class TestPhotometricOps:

    def test_invert_twice_is_identity(self):
        """Test invert composed with itself is exact"""
        s = noise_sample()
        np.testing.assert_array_equal(invert(invert(s)).image, s.image)

    def test_brightness_rule(self):
        """Test brightness scales pixels by 1 + 0.03 M"""
        s = Sample(image=np.full((4, 4, 3), 100, dtype=np.uint8))
        assert brightness(s, 10).image[0, 0, 0] == 130

    def test_posterize_rule(self):
        """Test full magnitude keeps the top four bits"""
        s = Sample(image=np.full((2, 2, 3), 0x37, dtype=np.uint8))
        assert posterize(s, 30).image[0, 0, 0] == 0x30

    def test_solarize_full_magnitude_inverts(self):
        """Test threshold 0 inverts every pixel"""
        s = noise_sample()
        np.testing.assert_array_equal(solarize(s, 30).image, 255 - s.image)

    @pytest.mark.parametrize("name", sorted(PHOTOMETRIC_OPS))
    def test_ops_never_touch_boxes(self, name):
        """Test photometric ops keep boxes and raster size"""
        s = noise_sample()
        out = PHOTOMETRIC_OPS[name](s, 15, SeededRng(0))
        np.testing.assert_array_equal(out.boxes, s.boxes)
        assert out.image.shape == s.image.shape
        assert out.image.dtype == np.uint8


@pytest.mark.unit
class TestPolicies:

    def test_none_policy_is_identity(self):
        """Test the NONE policy returns the input sample"""
        s = noise_sample()
        assert apply_policy(s, AugmentPolicy(), SeededRng(0)) is s

    def test_rand_augment_zero_ops(self):
        """Test N = 0 leaves the raster unchanged"""
        s = noise_sample()
        out = rand_augment(s, AugmentPolicy(policy=AugmentPolicyName.RANDAUGMENT, randaug_n=0), SeededRng(0))
        np.testing.assert_array_equal(out.image, s.image)

    def test_rand_augment_records_ops(self):
        """Test each RandAugment op is recorded in the audit trail"""
        policy = AugmentPolicy(policy=AugmentPolicyName.RANDAUGMENT, randaug_n=3)
        out = rand_augment(noise_sample(), policy, SeededRng(1))
        assert len(out.audit) == 3

    def test_augmix_blend_endpoints(self):
        """Test m = 0 keeps the original and m = 1 gives the weighted chains"""
        original = np.full((2, 2, 3), 10, dtype=np.uint8)
        chains = [np.full((2, 2, 3), 100, dtype=np.uint8), np.full((2, 2, 3), 200, dtype=np.uint8)]
        np.testing.assert_array_equal(augmix_blend(original, chains, [0.5, 0.5], 0.0), original)
        assert augmix_blend(original, chains, [0.5, 0.5], 1.0)[0, 0, 0] == 150

    def test_augmix_mixing_moments(self):
        """Test Dirichlet chain weights average 1/k and sum to 1, blend m averages alpha/(alpha+beta)"""
        policy = AugmentPolicy(policy=AugmentPolicyName.AUGMIX, augmix_chains=3, mix_alpha=1.0, mix_beta=3.0)
        rng = SeededRng(0, "augmix-moments")
        draws = [augmix_mixing(policy, rng) for _ in range(10_000)]
        weights = np.array([w for w, _ in draws])
        ms = np.array([m for _, m in draws])
        np.testing.assert_allclose(weights.sum(axis=1), 1.0)
        np.testing.assert_allclose(weights.mean(axis=0), [1 / 3] * 3, atol=0.02)
        assert ms.mean() == pytest.approx(0.25, abs=0.02)

    @pytest.mark.parametrize("op", ["mosaic", "cutout", "hflip", "constrained_rotate"])
    def test_augmix_rejects_geometric_ops(self, op):
        """Test geometric ops are refused inside AugMix chains"""
        with pytest.raises(ValueError):
            AugmentPolicy(policy=AugmentPolicyName.AUGMIX, augmix_ops=["brightness", op])

    @pytest.mark.parametrize("name", ["randaugment", "augmix"])
    def test_policy_is_seed_deterministic(self, name):
        """Test identical (sample, policy, seed) gives identical output"""
        policy = policy_from_name(name)
        s = noise_sample()
        a = apply_policy(s, policy, SeededRng(9, "policy"))
        b = apply_policy(s, policy, SeededRng(9, "policy"))
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.boxes, b.boxes)
        assert a.audit == b.audit

    def test_policy_from_name_overrides(self):
        """Test overrides are applied and None values ignored"""
        policy = policy_from_name("randaugment", randaug_n=1, randaug_m=None)
        assert policy.randaug_n == 1
        assert policy.randaug_m == 10


@pytest.mark.integration
class TestAugmentService:

    @pytest.fixture
    def dataset(self, tmp_path):
        path = SynthService(SyntheticSpec(n_images=4, image_size=64, size_range=(8, 20))).write(
            str(tmp_path / "synth"))
        return load_manifest(path)

    def test_write_outputs(self, dataset, tmp_path):
        """Test augmented images, manifest and previews are written"""
        service = AugmentService(policy_from_name("randaugment"), seed=3)
        summary = service.write(dataset, str(tmp_path / "aug"), preview=2)
        assert summary["images"] == 4
        assert len(summary["previews"]) == 2
        assert all(os.path.exists(p) for p in summary["previews"])
        reloaded = load_manifest(summary["manifest"])
        assert len(reloaded) == 4
        assert reloaded.class_names == ["circle", "square"]

    def test_offline_mosaic(self, dataset, tmp_path):
        """Test offline mosaics come out at the requested size"""
        service = AugmentService(policy_from_name("none"), seed=0)
        samples = service.augment(dataset, mosaic_size=64)
        assert all(s.image.shape == (64, 64, 3) for s in samples)

    def test_same_seed_same_output(self, dataset):
        """Test the service is deterministic per (seed, epoch, index)"""
        a = AugmentService(policy_from_name("augmix"), seed=1).augment_sample(dataset, 2)
        b = AugmentService(policy_from_name("augmix"), seed=1).augment_sample(dataset, 2)
        np.testing.assert_array_equal(a.image, b.image)
