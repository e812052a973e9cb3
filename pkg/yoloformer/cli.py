"""
Command-line entry point: ``python -m yoloformer <command> [options]``.

Exit codes: 0 success, 1 usage, 2 validation, 3 numerical failure, 4 internal error.
"""
import argparse
import json
import logging
import os
import sys
from typing import Callable, Dict, List, Optional

from yoloformer.engine.tensor import set_check_finite
from yoloformer.models.config_models import CsamVariant, EvalConfig, SyntheticSpec
from yoloformer.services.anchor_service import AnchorService
from yoloformer.services.augment_service import AugmentService
from yoloformer.services.benchmark_service import PRESET_SIZES, BenchmarkService, bench_to_json, render_bench
from yoloformer.services.evaluation_service import EvaluationService, render_report, report_to_json
from yoloformer.services.gradcheck_service import GradcheckService, render_results
from yoloformer.services.model_service import ModelService
from yoloformer.services.synth_service import SynthService
from yoloformer.services.training_service import TrainingService
from yoloformer.storage.manifest import load_manifest
from yoloformer.utils.config import load_train_config, settings, validated
from yoloformer.utils.error_handler import ErrorHandler, configure_logging
from yoloformer.utils.exceptions import (
    EXIT_NUMERICAL,
    EXIT_SUCCESS,
    EXIT_USAGE,
    ValidationError,
    exit_code_for,
)

logger = logging.getLogger(__name__)

SIZE_CHOICES = [str(s) for s in PRESET_SIZES] + ["custom"]
VARIANT_CHOICES = [v.value for v in CsamVariant]


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that exits with the usage code instead of argparse's 2"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def resolve_size(args: argparse.Namespace) -> Optional[int]:
    """--size preset, or --input-size when the preset is 'custom'"""
    if args.size is None:
        return args.input_size
    if args.size == "custom":
        if args.input_size is None:
            raise ValidationError("--size custom needs --input-size", field="--input-size")
        return args.input_size
    return int(args.size)


def eval_config(args: argparse.Namespace) -> EvalConfig:
    return validated(
        EvalConfig, "evaluation",
        iou_threshold=settings.iou_threshold,
        conf_threshold=args.conf if getattr(args, "conf", None) is not None else settings.conf_threshold,
        nms_iou=settings.nms_iou,
        ap_interpolation=getattr(args, "interpolation", None) or settings.ap_interpolation,
    )


def write_text(path: str, text: str):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text + "\n")


# -- commands ---------------------------------------------------------------

def run_train(args: argparse.Namespace) -> int:
    from yoloformer.augment.policies import policy_from_name
    from yoloformer.nn.detector import Detector, detector_config_from_settings

    config = load_train_config(args.config)
    dataset = load_manifest(args.manifest)
    eval_dataset = load_manifest(args.eval_manifest) if args.eval_manifest else None
    detector_config = detector_config_from_settings(
        input_size=resolve_size(args),
        num_classes=dataset.num_classes or None,
        csam_variant=args.variant,
        shake_shake=config.shake_shake or None,
    )
    policy = policy_from_name(args.policy or config.augment_policy)
    detector = Detector(detector_config, seed=args.seed)
    service = TrainingService(detector, config, dataset, args.out, seed=args.seed, policy=policy,
                              eval_dataset=eval_dataset, eval_config=eval_config(args))
    print(json.dumps(service.fit(), indent=2, sort_keys=True))
    return EXIT_SUCCESS


def run_eval(args: argparse.Namespace) -> int:
    detector, meta = ModelService.load(args.checkpoint)
    dataset = load_manifest(args.manifest, num_classes=detector.config.num_classes)
    config = eval_config(args)
    report = EvaluationService(config).evaluate(detector, dataset)
    print(render_report(report))
    if args.out:
        write_text(os.path.join(args.out, "eval.json"),
                   report_to_json(report, {**config.model_dump(mode="json"), "checkpoint": args.checkpoint, **meta}))
    return EXIT_SUCCESS


def run_augment(args: argparse.Namespace) -> int:
    from yoloformer.augment.policies import policy_from_name

    dataset = load_manifest(args.manifest)
    policy = policy_from_name(args.policy)
    mosaic_size = (resolve_size(args) or settings.input_size) if args.offline_mosaic else None
    result = AugmentService(policy, seed=args.seed).write(dataset, args.out, args.preview, mosaic_size)
    result.pop("audit")
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_SUCCESS


def run_bench(args: argparse.Namespace) -> int:
    from yoloformer.nn.detector import detector_config_from_settings

    size = resolve_size(args)
    sizes = [size] if size else list(PRESET_SIZES)
    variants = args.variants or ([args.variant] if args.variant else ["sh", "mhmb"])
    base = detector_config_from_settings()
    reports = BenchmarkService(base, seed=args.seed, n_images=args.n_images, warmup=args.warmup).run(sizes, variants)
    print(render_bench(reports))
    if args.out:
        write_text(os.path.join(args.out, "bench.json"), bench_to_json(reports))
    return EXIT_SUCCESS


def run_gradcheck(args: argparse.Namespace) -> int:
    results = GradcheckService(seed=args.seed, tolerance=args.tolerance).run(args.suite)
    print(render_results(results))
    return EXIT_SUCCESS if all(r.passed for r in results) else EXIT_NUMERICAL


def run_anchors(args: argparse.Namespace) -> int:
    dataset = load_manifest(args.manifest)
    result = AnchorService(seed=args.seed).estimate(dataset, k=args.k)
    text = json.dumps(result, indent=2)
    print(text)
    if args.out:
        write_text(os.path.join(args.out, "anchors.json"), text)
    return EXIT_SUCCESS


def run_synth(args: argparse.Namespace) -> int:
    spec = validated(
        SyntheticSpec, "synth",
        n_images=args.n_images,
        image_size=resolve_size(args) or settings.input_size,
        classes=args.classes.split(","),
        seed=args.seed,
    )
    print(SynthService(spec).write(args.out))
    return EXIT_SUCCESS


def run_serve(args: argparse.Namespace) -> int:
    import uvicorn

    if args.checkpoint:
        os.environ["YOLOFORMER_CHECKPOINT"] = args.checkpoint
    uvicorn.run("yoloformer.main:app", host=args.host or settings.host, port=args.port or settings.port,
                reload=settings.debug)
    return EXIT_SUCCESS


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "train": run_train,
    "eval": run_eval,
    "augment": run_augment,
    "bench": run_bench,
    "gradcheck": run_gradcheck,
    "anchors": run_anchors,
    "synth": run_synth,
    "serve": run_serve,
}


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = CliParser(add_help=False)
    common.add_argument("--seed", type=int, default=settings.seed, help="Global seed (default from config)")
    common.add_argument("--out", default="runs", help="Output directory")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")

    sized = CliParser(add_help=False)
    sized.add_argument("--size", choices=SIZE_CHOICES, default=None, help="Input resolution preset")
    sized.add_argument("--input-size", type=int, default=None, help="Resolution for --size custom")

    parser = CliParser(
        prog="yoloformer",
        description="Train, evaluate and benchmark desk-scale YOLO-Former detectors.",
        epilog="Example:\n  python -m yoloformer synth --out data && "
               "python -m yoloformer train --manifest data/manifest.jsonl --out runs",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    train = sub.add_parser("train", parents=[common, sized], help="Train a detector on a manifest")
    train.add_argument("--config", default=None, help="Flat 'key = value' training config")
    train.add_argument("--manifest", required=True, help="Training manifest (JSON lines)")
    train.add_argument("--eval-manifest", default=None, help="Manifest scored each epoch (default: training set)")
    train.add_argument("--variant", choices=VARIANT_CHOICES, default=None, help="CSAM variant")
    train.add_argument("--policy", choices=["none", "randaugment", "augmix"], default=None,
                       help="Augmentation policy (overrides the config file)")
    train.add_argument("--conf", type=float, default=None, help="Score threshold for per-epoch mAP")

    evaluate = sub.add_parser("eval", parents=[common, sized], help="mAP of a checkpoint on a manifest")
    evaluate.add_argument("--checkpoint", required=True, help="Checkpoint written by train")
    evaluate.add_argument("--manifest", required=True, help="Evaluation manifest")
    evaluate.add_argument("--conf", type=float, default=None, help="Score threshold")
    evaluate.add_argument("--interpolation", choices=["ALL_POINTS", "ELEVEN_POINT"], default=None,
                          help="AP interpolation")

    augment = sub.add_parser("augment", parents=[common, sized], help="Write an augmented copy of a manifest")
    augment.add_argument("--manifest", required=True, help="Source manifest")
    augment.add_argument("--policy", choices=["none", "randaugment", "augmix"], default="randaugment",
                         help="Augmentation policy")
    augment.add_argument("--preview", type=int, default=0, help="Write box overlays for the first N images")
    augment.add_argument("--offline-mosaic", action="store_true", help="Materialize 4-image mosaics")

    bench = sub.add_parser("bench", parents=[common, sized], help="FPS sweep over sizes and variants")
    bench.add_argument("--variant", choices=VARIANT_CHOICES + ["residual"], default=None,
                       help="Single variant to time")
    bench.add_argument("--variants", nargs="+", choices=VARIANT_CHOICES + ["residual"], default=None,
                       help="Variants to time (default: sh mhmb)")
    bench.add_argument("--n-images", type=int, default=20, help="Images per measurement")
    bench.add_argument("--warmup", type=int, default=2, help="Discarded leading images")

    gradcheck = sub.add_parser("gradcheck", parents=[common], help="Finite-difference gradient suites")
    gradcheck.add_argument("--suite", nargs="+", default=None, help="Subset of suites (default: all)")
    gradcheck.add_argument("--tolerance", type=float, default=1e-4, help="Max relative error")

    anchors = sub.add_parser("anchors", parents=[common], help="k-means anchors over manifest boxes")
    anchors.add_argument("--manifest", required=True, help="Training manifest")
    anchors.add_argument("--k", type=int, default=9, help="Number of anchors (multiple of 3)")

    synth = sub.add_parser("synth", parents=[common, sized], help="Generate a synthetic shapes corpus")
    synth.add_argument("--n-images", type=int, default=16, help="Number of images")
    synth.add_argument("--classes", default="circle,square", help="Comma-separated shapes")

    serve = sub.add_parser("serve", parents=[common], help="Run the inference service")
    serve.add_argument("--checkpoint", default=None, help="Checkpoint to serve")
    serve.add_argument("--host", default=None, help="Bind address (default from config)")
    serve.add_argument("--port", type=int, default=None, help="Port (default from config)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    set_check_finite(settings.check_finite)
    try:
        return COMMANDS[args.command](args)
    except Exception as e:
        ErrorHandler.log_error(e, command=args.command)
        print(f"error: {e}", file=sys.stderr)
        return exit_code_for(e)
