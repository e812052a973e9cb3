import json
import os

from unittest.mock import Mock, PropertyMock, patch

import pytest

from yoloformer.cli import COMMANDS, build_parser, main
from yoloformer.utils.config import Config
from yoloformer.utils.exceptions import (
    EXIT_INTERNAL,
    EXIT_NUMERICAL,
    EXIT_SUCCESS,
    EXIT_USAGE,
    EXIT_VALIDATION,
    ManifestError,
    NumericalError,
    exit_code_for,
)


def synth(out, n_images=4):
    return main(["synth", "--out", str(out), "--n-images", str(n_images), "--size", "custom",
                 "--input-size", "64", "--seed", "0"])


@pytest.mark.unit
class TestParser:

    def test_missing_command(self):
        """Test a bare invocation is a usage error"""
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == EXIT_USAGE

    def test_unknown_option(self):
        """Test an unknown flag is a usage error"""
        with pytest.raises(SystemExit) as exc:
            main(["gradcheck", "--bogus"])
        assert exc.value.code == EXIT_USAGE

    def test_bad_choice(self):
        """Test a size outside the presets is a usage error"""
        with pytest.raises(SystemExit) as exc:
            main(["bench", "--size", "300"])
        assert exc.value.code == EXIT_USAGE

    def test_defaults(self):
        """Test common flags and their defaults"""
        args = build_parser().parse_args(["augment", "--manifest", "m.jsonl"])
        assert args.policy == "randaugment"
        assert args.preview == 0
        assert args.out == "runs"
        assert args.offline_mosaic is False


    def test_engine_check_finite_follows_config(self):
        """Test startup hands engine.check_finite to the tensor engine"""
        with patch("yoloformer.cli.set_check_finite") as mock_set, \
                patch.object(Config, "check_finite", new_callable=PropertyMock, return_value=False), \
                patch.dict(COMMANDS, {"gradcheck": Mock(return_value=EXIT_SUCCESS)}):
            assert main(["gradcheck"]) == EXIT_SUCCESS
        mock_set.assert_called_once_with(False)

    def test_unexpected_error_is_internal(self, capsys):
        """Test an exception outside the toolkit hierarchy exits with the internal code"""
        with patch.dict(COMMANDS, {"gradcheck": Mock(side_effect=RuntimeError("boom"))}):
            assert main(["gradcheck"]) == EXIT_INTERNAL
        assert "boom" in capsys.readouterr().err

    def test_exit_code_mapping(self):
        """Test toolkit exceptions keep their codes and anything else is internal"""
        assert exit_code_for(ManifestError("bad line")) == EXIT_VALIDATION
        assert exit_code_for(NumericalError("nan")) == EXIT_NUMERICAL
        assert exit_code_for(KeyError("x")) == EXIT_INTERNAL
        assert EXIT_INTERNAL not in (EXIT_SUCCESS, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL)


@pytest.mark.integration
class TestCommands:

    def test_gradcheck_subset(self, capsys):
        """Test a passing gradcheck suite exits 0 and prints its table"""
        assert main(["gradcheck", "--suite", "sigmoid", "mish"]) == EXIT_SUCCESS
        out = capsys.readouterr().out
        assert "sigmoid" in out and "mish" in out

    def test_gradcheck_unknown_suite(self, capsys):
        """Test an unknown suite is a validation failure"""
        assert main(["gradcheck", "--suite", "nope"]) == EXIT_VALIDATION
        assert "error:" in capsys.readouterr().err

    def test_gradcheck_impossible_tolerance(self):
        """Test a failing suite maps to the numerical exit code"""
        assert main(["gradcheck", "--suite", "mish", "--tolerance", "1e-30"]) == EXIT_NUMERICAL

    def test_synth_writes_manifest(self, tmp_path, capsys):
        """Test synth prints the manifest path it wrote"""
        assert synth(tmp_path / "data") == EXIT_SUCCESS
        path = capsys.readouterr().out.strip()
        assert os.path.exists(path)
        with open(path) as f:
            assert len(f.readlines()) == 4

    def test_custom_size_needs_value(self, tmp_path):
        """Test --size custom without --input-size is a validation failure"""
        assert main(["synth", "--out", str(tmp_path), "--size", "custom"]) == EXIT_VALIDATION

    def test_missing_manifest(self, tmp_path):
        """Test a missing manifest is a validation failure"""
        assert main(["train", "--manifest", str(tmp_path / "absent.jsonl"), "--out", str(tmp_path)]) \
            == EXIT_VALIDATION

    def test_bad_train_config(self, tmp_path):
        """Test an unknown training config key is a validation failure"""
        synth(tmp_path / "data")
        config = tmp_path / "train.cfg"
        config.write_text("learning_rate = 0.1\n")
        code = main(["train", "--manifest", str(tmp_path / "data" / "manifest.jsonl"), "--config", str(config),
                     "--out", str(tmp_path / "run")])
        assert code == EXIT_VALIDATION

    def test_missing_checkpoint(self, tmp_path):
        """Test eval on a missing checkpoint is a validation failure"""
        synth(tmp_path / "data")
        code = main(["eval", "--checkpoint", str(tmp_path / "none.yfck"),
                     "--manifest", str(tmp_path / "data" / "manifest.jsonl")])
        assert code == EXIT_VALIDATION

    def test_anchors(self, tmp_path, capsys):
        """Test anchors writes three per scale"""
        synth(tmp_path / "data", n_images=8)
        capsys.readouterr()
        code = main(["anchors", "--manifest", str(tmp_path / "data" / "manifest.jsonl"), "--k", "3",
                     "--out", str(tmp_path / "anchors")])
        assert code == EXIT_SUCCESS
        with open(tmp_path / "anchors" / "anchors.json") as f:
            result = json.load(f)
        assert len(result["anchors"]) == 1
        assert len(result["anchors"][0]) == 3

    def test_augment(self, tmp_path, capsys):
        """Test augment writes a manifest and previews"""
        synth(tmp_path / "data")
        capsys.readouterr()
        code = main(["augment", "--manifest", str(tmp_path / "data" / "manifest.jsonl"), "--preview", "1",
                     "--out", str(tmp_path / "aug")])
        assert code == EXIT_SUCCESS
        summary = json.loads(capsys.readouterr().out)
        assert summary["images"] == 4
        assert os.path.exists(summary["manifest"])


@pytest.mark.slow
class TestTrainEvalPipeline:

    def test_train_zero_epochs_then_eval(self, tmp_path, capsys):
        """Test synth -> train (epochs 0) -> eval writes a checkpoint and a report"""
        synth(tmp_path / "data")
        manifest = str(tmp_path / "data" / "manifest.jsonl")
        config = tmp_path / "train.cfg"
        config.write_text("epochs = 0\n")
        run = tmp_path / "run"

        assert main(["train", "--manifest", manifest, "--config", str(config), "--size", "custom",
                     "--input-size", "64", "--out", str(run)]) == EXIT_SUCCESS
        assert os.path.exists(run / "model.yfck")
        capsys.readouterr()

        assert main(["eval", "--checkpoint", str(run / "model.yfck"), "--manifest", manifest,
                     "--out", str(run)]) == EXIT_SUCCESS
        assert "mAP" in capsys.readouterr().out
        with open(run / "eval.json") as f:
            report = json.load(f)
        assert 0.0 <= report["mean_ap"] <= 1.0
        assert report["config"]["epoch"] == -1.0
