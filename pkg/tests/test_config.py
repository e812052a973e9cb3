import pytest
import os
from unittest.mock import patch, mock_open

from yoloformer.models.config_models import DetectorConfig, TrainConfig
from yoloformer.utils.config import Config, load_train_config, parse_train_config, validated
from yoloformer.utils.exceptions import ConfigurationError


@pytest.mark.unit
class TestConfig:

    @patch.dict(os.environ, {
        'YOLOFORMER_CHECKPOINT': '/models/desk.yfck',
        'YOLOFORMER_SEED': '7',
        'LOG_LEVEL': 'DEBUG'
    })
    @patch('builtins.open', mock_open(read_data='{"detector": {"input_size": 128, "variant": "mhmb"}}'))
    def test_config_with_env_vars(self):
        """Test configuration loading with environment variables"""
        config = Config()

        # Test environment variables
        assert config.checkpoint_path == '/models/desk.yfck'
        assert config.seed == 7
        assert config.log_level == 'DEBUG'

        # Test JSON config
        assert config.input_size == 128
        assert config.variant == 'mhmb'

    @patch.dict(os.environ, {}, clear=True)
    @patch('builtins.open', mock_open(read_data='{"service": {"port": 8080}}'))
    def test_config_with_defaults(self):
        """Test configuration with default values"""
        config = Config()

        assert config.checkpoint_path is None
        assert config.seed == 0
        assert config.input_size == 96
        assert config.depth_preset == 'desk'
        assert config.port == 8080

    @patch('builtins.open', side_effect=FileNotFoundError)
    def test_config_without_json_file(self, mock_file):
        """Test configuration when JSON file doesn't exist"""
        config = Config()

        # Should use default configuration
        assert config.num_classes == 2
        assert config.block_type == 'transformer'
        assert config.bn_momentum == 0.99
        assert config.iou_threshold == 0.5
        assert config.conf_threshold == 0.005
        assert config.fill_value == 114

    @patch('builtins.open', mock_open(read_data='{"evaluation": {"nms_iou": 0.6, "ap_interpolation": "ELEVEN_POINT"}}'))
    def test_config_json_override(self):
        """Test JSON configuration overriding defaults"""
        config = Config()

        assert config.nms_iou == 0.6
        assert config.ap_interpolation == 'ELEVEN_POINT'

    @patch.dict(os.environ, {'PORT': '9000'})
    @patch('builtins.open', mock_open(read_data='{"service": {"port": 8080}}'))
    def test_port_environment_override(self):
        """Test that PORT environment variable overrides JSON config"""
        config = Config()

        # Environment variable should take precedence
        assert config.port == 9000

    @patch.dict(os.environ, {'DEBUG': 'yes'})
    @patch('builtins.open', mock_open(read_data='{}'))
    def test_debug_environment_flag(self):
        """Test DEBUG accepts truthy strings"""
        assert Config().debug is True

    @patch('builtins.open', mock_open(read_data='{"engine": {"check_finite": false}}'))
    def test_get_dot_notation(self):
        """Test dotted lookups and their defaults"""
        config = Config()

        assert config.get('engine.check_finite') is False
        assert config.get('engine.missing', 'fallback') == 'fallback'
        assert config.check_finite is False


@pytest.mark.unit
class TestTrainConfigLoader:

    def test_parse_flat_file(self):
        """Test key = value lines with comments and loss weights"""
        config = parse_train_config(
            "# desk run\n"
            "epochs = 12\n"
            "warmup_epochs = 2   # short warmup\n"
            "loss_weights = 1.0, 2.0, 0.5\n"
            "\n"
            "dropblock_enabled = true\n"
        )
        assert config.epochs == 12
        assert config.warmup_epochs == 2
        assert config.loss_weights == (1.0, 2.0, 0.5)
        assert config.dropblock_enabled is True
        assert config.peak_lr == pytest.approx(0.0026)

    def test_unknown_key(self):
        """Test an unknown key names itself"""
        with pytest.raises(ConfigurationError) as exc:
            parse_train_config("learning_rate = 0.1")
        assert exc.value.details["config_key"] == "learning_rate"

    def test_duplicate_key(self):
        """Test a repeated key is rejected"""
        with pytest.raises(ConfigurationError):
            parse_train_config("epochs = 3\nepochs = 4")

    def test_missing_equals(self):
        """Test a line without '=' is rejected"""
        with pytest.raises(ConfigurationError):
            parse_train_config("epochs 3")

    def test_warmup_must_be_shorter(self):
        """Test warmup_epochs >= epochs is a configuration error"""
        with pytest.raises(ConfigurationError):
            parse_train_config("epochs = 5\nwarmup_epochs = 5")

    def test_defaults_without_path(self):
        """Test no --config path gives the default TrainConfig"""
        assert load_train_config(None) == TrainConfig()

    def test_missing_file(self, tmp_path):
        """Test an unreadable config path is a configuration error"""
        with pytest.raises(ConfigurationError):
            load_train_config(str(tmp_path / "absent.cfg"))

    def test_load_from_file(self, tmp_path):
        """Test a config file on disk is parsed"""
        path = tmp_path / "train.cfg"
        path.write_text("epochs = 3\nwarmup_epochs = 1\n")
        assert load_train_config(str(path)).epochs == 3


@pytest.mark.unit
class TestValidated:

    def test_invalid_value_becomes_configuration_error(self):
        """Test pydantic failures surface as ConfigurationError with the field key"""
        with pytest.raises(ConfigurationError) as exc:
            validated(DetectorConfig, "detector", input_size=100)
        assert exc.value.details["config_key"] == "input_size"

    def test_valid_values_pass_through(self):
        """Test a valid record is returned unchanged"""
        assert validated(DetectorConfig, "detector", input_size=64).input_size == 64
