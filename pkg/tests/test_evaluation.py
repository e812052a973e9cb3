import json

import numpy as np
import pytest

from yoloformer.evaluation.benchmark import fps_bench
from yoloformer.evaluation.metrics import average_precision, iou, iou_matrix, mean_ap, nms, voc_ap
from yoloformer.models.config_models import ApInterpolation, CsamVariant, DetectorConfig, EvalConfig
from yoloformer.models.detection_models import BenchReport, Detection, GroundTruth
from yoloformer.nn.detector import Detector
from yoloformer.services.benchmark_service import BenchmarkService, bench_to_json, render_bench
from yoloformer.services.evaluation_service import EvaluationService, render_report, report_to_json
from yoloformer.utils.exceptions import ValidationError
from yoloformer.utils.rng import SeededRng


def det(box, score, class_id=0):
    return Detection(box=box, class_id=class_id, score=score)


def gt(box, class_id=0):
    return GroundTruth(box=box, class_id=class_id)


def brute_force_ap(scores, flags, num_gt):
    """Sweep every distinct threshold and integrate the precision envelope"""
    scores = np.asarray(scores)
    flags = np.asarray(flags, dtype=bool)
    points = []
    for t in sorted(set(scores.tolist()), reverse=True):
        selected = scores >= t
        tp = flags[selected].sum()
        points.append((tp / num_gt, tp / selected.sum()))
    ap, previous = 0.0, 0.0
    for k, (recall, _) in enumerate(points):
        ap += (recall - previous) * max(p for _, p in points[k:])
        previous = recall
    return ap


@pytest.mark.unit
class TestIou:

    def test_identical(self):
        """Test identical boxes give IoU 1"""
        assert iou((1, 2, 5, 6), (1, 2, 5, 6)) == 1.0

    def test_disjoint(self):
        """Test disjoint boxes give IoU 0"""
        assert iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0

    def test_partial_overlap(self):
        """Test (0,0,2,2) vs (1,1,3,3) gives 1/7"""
        assert iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7)

    def test_pixel_grid_oracle(self):
        """Test IoU against counting covered pixels on integer boxes"""
        rng = np.random.default_rng(0)
        for _ in range(200):
            a = np.sort(rng.choice(21, size=2, replace=False))
            b = np.sort(rng.choice(21, size=2, replace=False))
            c = np.sort(rng.choice(21, size=2, replace=False))
            d = np.sort(rng.choice(21, size=2, replace=False))
            box_a = (a[0], c[0], a[1], c[1])
            box_b = (b[0], d[0], b[1], d[1])
            grid_a = np.zeros((20, 20), dtype=bool)
            grid_b = np.zeros((20, 20), dtype=bool)
            grid_a[box_a[1]:box_a[3], box_a[0]:box_a[2]] = True
            grid_b[box_b[1]:box_b[3], box_b[0]:box_b[2]] = True
            expected = (grid_a & grid_b).sum() / (grid_a | grid_b).sum()
            assert iou(box_a, box_b) == pytest.approx(expected, abs=1e-3)

    def test_matrix_matches_scalar(self):
        """Test the pairwise matrix agrees with the scalar IoU"""
        a = np.array([[0, 0, 2, 2], [1, 1, 4, 4]])
        b = np.array([[1, 1, 3, 3], [0, 0, 2, 2], [5, 5, 6, 6]])
        m = iou_matrix(a, b)
        for i in range(2):
            for j in range(3):
                assert m[i, j] == pytest.approx(iou(a[i], b[j]))


@pytest.mark.unit
class TestNms:

    def test_suppresses_overlap(self):
        """Test the lower-scored of two overlapping boxes is removed"""
        kept = nms([det((0, 0, 10, 10), 0.9), det((1, 1, 11, 11), 0.8)], 0.5)
        assert [d.score for d in kept] == [0.9]

    def test_keeps_other_classes(self):
        """Test suppression never crosses classes"""
        kept = nms([det((0, 0, 10, 10), 0.9, 0), det((1, 1, 11, 11), 0.8, 1)], 0.5)
        assert len(kept) == 2

    def test_keeps_low_overlap(self):
        """Test boxes overlapping at most the threshold survive"""
        kept = nms([det((0, 0, 2, 2), 0.9), det((1, 1, 3, 3), 0.8)], 0.5)
        assert len(kept) == 2

    def test_order_independent(self):
        """Test shuffling the input does not change the result"""
        rng = np.random.default_rng(1)
        for _ in range(50):
            dets = []
            for _ in range(int(rng.integers(1, 6))):
                x, y = (int(v) for v in rng.integers(0, 20, size=2))
                dets.append(det((x, y, x + int(rng.integers(3, 10)), y + int(rng.integers(3, 10))),
                                float(rng.integers(1, 5)) / 5))
            expected = nms(dets, 0.5)
            shuffled = [dets[i] for i in rng.permutation(len(dets))]
            assert nms(shuffled, 0.5) == expected


@pytest.mark.unit
class TestAveragePrecision:

    def test_single_perfect_detection(self):
        """Test one detection exactly on one GT gives AP 1"""
        curve = average_precision([[det((0, 0, 5, 5), 0.3)]], [[gt((0, 0, 5, 5))]], 0)
        assert curve.ap == 1.0

    def test_no_detections(self):
        """Test zero detections with ground truth gives AP 0"""
        assert average_precision([[]], [[gt((0, 0, 5, 5))]], 0).ap == 0.0

    def test_tp_then_fp(self):
        """Test a true positive ranked first gives AP 1"""
        dets = [[det((0, 0, 5, 5), 0.9), det((20, 20, 25, 25), 0.8)]]
        curve = average_precision(dets, [[gt((0, 0, 5, 5))]], 0)
        assert curve.precision == [1.0, 0.5]
        assert curve.recall == [1.0, 1.0]
        assert curve.ap == 1.0

    def test_fp_then_tp(self):
        """Test a false positive ranked first halves AP"""
        dets = [[det((0, 0, 5, 5), 0.8), det((20, 20, 25, 25), 0.9)]]
        assert average_precision(dets, [[gt((0, 0, 5, 5))]], 0).ap == pytest.approx(0.5)

    def test_gt_matched_once(self):
        """Test a duplicate detection of a matched GT is a false positive"""
        dets = [[det((0, 0, 5, 5), 0.9), det((0, 0, 5, 5), 0.8)]]
        curve = average_precision(dets, [[gt((0, 0, 5, 5))]], 0)
        assert curve.true_positive == [True, False]

    def test_undefined_without_gt(self):
        """Test a class without ground truth has no AP"""
        curve = average_precision([[det((0, 0, 5, 5), 0.9)]], [[]], 0)
        assert curve.ap is None
        assert not curve.defined

    def test_eleven_point(self):
        """Test the eleven-point variant on a perfect detector"""
        config = EvalConfig(ap_interpolation=ApInterpolation.ELEVEN_POINT)
        curve = average_precision([[det((0, 0, 5, 5), 0.5)]], [[gt((0, 0, 5, 5))]], 0, config)
        assert curve.ap == pytest.approx(1.0)

    def test_brute_force_oracle(self):
        """Test AP equals the all-threshold sweep on random instances with tied scores"""
        rng = np.random.default_rng(7)
        for _ in range(500):
            num_gt = int(rng.integers(1, 5))
            gts = [gt((20 * k, 0, 20 * k + 10, 10)) for k in range(num_gt)]
            dets, scores, flags = [], [], []
            for k in range(num_gt):
                if rng.uniform() < 0.7:
                    score = float(rng.integers(1, 6)) / 5
                    dets.append(det((20 * k, 0, 20 * k + 10, 10), score))
                    scores.append(score)
                    flags.append(True)
            for k in range(int(rng.integers(0, 4))):
                score = float(rng.integers(1, 6)) / 5
                dets.append(det((20 * k, 50, 20 * k + 10, 60), score))
                scores.append(score)
                flags.append(False)
            curve = average_precision([dets], [gts], 0)
            expected = brute_force_ap(scores, flags, num_gt) if dets else 0.0
            assert curve.ap == pytest.approx(expected, abs=1e-12)

    def test_voc_ap_envelope(self):
        """Test the precision envelope takes the maximum to the right"""
        assert voc_ap(np.array([0.5, 1.0]), np.array([0.5, 1.0])) == pytest.approx(1.0)


@pytest.mark.unit
class TestMeanAp:

    def test_two_classes(self):
        """Test APs of 1.0 and 0.5 average to 0.75"""
        dets = [[det((0, 0, 5, 5), 0.9, 0), det((0, 0, 5, 5), 0.8, 1), det((20, 20, 25, 25), 0.9, 1)]]
        gts = [[gt((0, 0, 5, 5), 0), gt((0, 0, 5, 5), 1)]]
        report = mean_ap(dets, gts, 2)
        assert [c.ap for c in report.per_class] == [1.0, pytest.approx(0.5)]
        assert report.mean_ap == pytest.approx(0.75)

    def test_undefined_class_excluded(self):
        """Test a class without ground truth is excluded with a note"""
        report = mean_ap([[det((0, 0, 5, 5), 0.9, 0)]], [[gt((0, 0, 5, 5), 0)]], 2, class_names=["a", "b"])
        assert report.mean_ap == 1.0
        assert report.per_class[1].ap is None
        assert any("b" in note for note in report.notes)

    def test_no_ground_truth_at_all(self):
        """Test mAP is 0 with a note when no class has ground truth"""
        report = mean_ap([[]], [[]], 2)
        assert report.mean_ap == 0.0
        assert report.notes

    def test_render_and_json(self):
        """Test the text table and JSON report carry the per-class values"""
        report = mean_ap([[det((0, 0, 5, 5), 0.9, 0)]], [[gt((0, 0, 5, 5), 0)]], 2, class_names=["cup", "pen"])
        text = render_report(report)
        assert "cup" in text and "n/a" in text and "mAP" in text
        payload = json.loads(report_to_json(report, {"iou_threshold": 0.5}))
        assert payload["mean_ap"] == 1.0
        assert payload["config"] == {"iou_threshold": 0.5}

    def test_perfect_predictions(self):
        """Test feeding the ground truth back as detections gives mAP 1"""
        gts = [[gt((0, 0, 5, 5), 0), gt((10, 10, 20, 20), 1)], [gt((3, 3, 9, 9), 1)]]
        dets = [[det(g.box, 1.0, g.class_id) for g in image] for image in gts]
        report = EvaluationService().evaluate_predictions(dets, gts, 2)
        assert report.mean_ap == 1.0


@pytest.mark.integration
class TestBenchmark:

    @pytest.fixture(scope="class")
    def detector(self):
        return Detector(DetectorConfig(input_size=64), seed=0)

    def test_fps_bench_report(self, detector):
        """Test warmup runs are discarded and throughput is positive"""
        report = fps_bench(detector, 64, n_images=3, warmup=1, rng=SeededRng(0))
        assert report.n_images == 2
        assert report.fps > 0
        assert report.latency_p95_ms >= report.latency_p50_ms
        assert report.variant == "sh"

    def test_fps_bench_needs_timed_images(self, detector):
        """Test n_images must exceed warmup"""
        with pytest.raises(ValidationError):
            fps_bench(detector, 64, n_images=2, warmup=2)

    def test_fps_bench_size_mismatch(self, detector):
        """Test the bench size must match the built detector"""
        with pytest.raises(ValidationError):
            fps_bench(detector, 96, n_images=3, warmup=1)

    def test_service_builds_variants(self):
        """Test the sweep builds the requested variant at the requested size"""
        service = BenchmarkService(DetectorConfig(), seed=0)
        model = service.build("mhmb", 64)
        assert model.config.csam_variant == CsamVariant.MULTI_HEAD_MULTI_BRANCH
        assert model.config.input_size == 64
        assert service.build("residual", 64).config.block_type == "residual"


@pytest.mark.unit
class TestBenchReports:

    def reports(self):
        common = {"n_images": 18, "warmup": 2, "latency_p50_ms": 10.0, "latency_p95_ms": 12.0, "hardware": "test"}
        return [BenchReport(variant="sh", input_size=416, fps=10.85, **common),
                BenchReport(variant="mhmb", input_size=416, fps=7.08, **common),
                BenchReport(variant="sh", input_size=320, fps=14.0, **common)]

    def test_ordering(self):
        """Test SH >= MHMB is checked per size and None when a variant is missing"""
        assert BenchmarkService.ordering(self.reports()) == {320: None, 416: True}

    def test_render(self):
        """Test the table lists every row and the ordering verdict"""
        text = render_bench(self.reports())
        assert "10.85" in text
        assert "416: SH >= MHMB yes" in text

    def test_json(self):
        """Test the JSON payload carries results and the ordering"""
        payload = json.loads(bench_to_json(self.reports()))
        assert len(payload["results"]) == 3
        assert payload["sh_ge_mhmb"] == {"320": None, "416": True}
        assert "hardware" in payload
