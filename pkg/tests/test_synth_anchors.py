import numpy as np
import pytest

from yoloformer.models.config_models import SyntheticSpec
from yoloformer.services.anchor_service import AnchorService, kmeans_anchors, wh_iou
from yoloformer.services.synth_service import SynthService
from yoloformer.storage.manifest import load_manifest
from yoloformer.utils.exceptions import ValidationError
from yoloformer.utils.rng import SeededRng


@pytest.mark.unit
class TestSynthService:

    def test_render_is_seeded(self):
        """Test the same SyntheticSpec and index render the same sample"""
        spec = SyntheticSpec(n_images=2, image_size=64, size_range=(8, 20), seed=3)
        a = SynthService(spec).render(1)
        b = SynthService(spec).render(1)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.boxes, b.boxes)

    def test_square_box_is_exact(self):
        """Test a lone square's box equals the extent of its painted pixels"""
        spec = SyntheticSpec(n_images=10, image_size=64, classes=["square"], objects_per_image=(1, 1),
                             size_range=(8, 20))
        for sample in SynthService(spec).generate():
            bright = np.argwhere(sample.image.max(axis=2) >= 120)
            (ymin, xmin), (ymax, xmax) = bright.min(axis=0), bright.max(axis=0) + 1
            np.testing.assert_array_equal(sample.boxes[0], [xmin, ymin, xmax, ymax])

    def test_boxes_inside_image(self):
        """Test every synthesized box lies inside the raster"""
        spec = SyntheticSpec(n_images=20, image_size=64, classes=["circle", "square", "triangle"],
                             size_range=(8, 30))
        for sample in SynthService(spec).generate():
            assert np.all(sample.boxes[:, :2] >= 0)
            assert np.all(sample.boxes[:, 2:] <= 64)
            assert len(sample.boxes) == len(sample.labels) >= 1

    def test_spec_validation(self):
        """Test unknown shapes and oversize objects are rejected"""
        with pytest.raises(ValueError):
            SyntheticSpec(classes=["hexagon"])
        with pytest.raises(ValueError):
            SyntheticSpec(image_size=32, size_range=(8, 20))

    def test_write_round_trip(self, tmp_path):
        """Test the written manifest reloads with the same boxes"""
        spec = SyntheticSpec(n_images=3, image_size=64, size_range=(8, 20))
        service = SynthService(spec)
        dataset = load_manifest(service.write(str(tmp_path)))
        assert dataset.class_names == ["circle", "square"]
        for i, sample in enumerate(service.generate()):
            np.testing.assert_array_equal(dataset.sample(i).boxes, sample.boxes)
            np.testing.assert_array_equal(dataset.sample(i).image, sample.image)


@pytest.mark.unit
class TestAnchors:

    def test_wh_iou(self):
        """Test co-centered IoU of (w, h) pairs"""
        iou = wh_iou(np.array([[2.0, 2.0]]), np.array([[2.0, 2.0], [4.0, 4.0], [1.0, 4.0]]))
        np.testing.assert_allclose(iou, [[1.0, 0.25, 2 / 6]])

    def test_kmeans_sorted_by_area(self):
        """Test centroids come back sorted by area with a fitness in (0, 1]"""
        rng = np.random.default_rng(0)
        wh = np.concatenate([rng.normal(m, 0.5, size=(30, 2)) for m in (8, 16, 32, 48, 64, 96)])
        centroids, fitness = kmeans_anchors(wh, 6, SeededRng(0))
        areas = centroids[:, 0] * centroids[:, 1]
        assert np.all(np.diff(areas) >= 0)
        assert 0.0 < fitness <= 1.0

    def test_kmeans_is_seeded(self):
        """Test the same seed gives the same anchors"""
        wh = np.random.default_rng(1).uniform(4, 60, size=(50, 2))
        a, _ = kmeans_anchors(wh, 9, SeededRng(2))
        b, _ = kmeans_anchors(wh, 9, SeededRng(2))
        np.testing.assert_array_equal(a, b)

    def test_too_few_boxes(self):
        """Test k-means needs at least k boxes"""
        with pytest.raises(ValidationError):
            kmeans_anchors(np.ones((3, 2)), 9)

    def test_service_groups_per_scale(self, tmp_path):
        """Test anchors are grouped three per scale"""
        spec = SyntheticSpec(n_images=12, image_size=64, size_range=(8, 30))
        dataset = load_manifest(SynthService(spec).write(str(tmp_path)))
        result = AnchorService(seed=0).estimate(dataset, k=9)
        assert [len(scale) for scale in result["anchors"]] == [3, 3, 3]
        assert result["num_boxes"] == len(dataset.all_boxes())

    def test_service_rejects_bad_k(self, tmp_path):
        """Test k must be a multiple of three"""
        spec = SyntheticSpec(n_images=4, image_size=64, size_range=(8, 20))
        dataset = load_manifest(SynthService(spec).write(str(tmp_path)))
        with pytest.raises(ValidationError):
            AnchorService().estimate(dataset, k=4)
