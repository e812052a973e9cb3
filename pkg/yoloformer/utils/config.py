import copy
import json
import os
from typing import Optional
from dotenv import load_dotenv
from pydantic import ValidationError as PydanticValidationError

from yoloformer.utils.exceptions import ConfigurationError

DEFAULT_CONFIG = {
    "engine": {"check_finite": True, "bn_eps": 1e-5, "bn_momentum": 0.99},
    "detector": {
        "input_size": 96,
        "num_classes": 2,
        "variant": "sh",
        "depth_preset": "desk",
        "block_type": "transformer"
    },
    "training": {"seed": 0, "checkpoint_name": "model.yfck", "metrics_log": "metrics.jsonl"},
    "evaluation": {
        "iou_threshold": 0.5,
        "conf_threshold": 0.005,
        "nms_iou": 0.5,
        "ap_interpolation": "ALL_POINTS"
    },
    "augment": {"max_rotation": 45.0, "fill_value": 114},
    "service": {"port": 5001, "host": "0.0.0.0", "debug": False},
    "logging": {"level": "INFO"}
}


class Config:
    def __init__(self, config_path: str = "config.json"):
        # Load environment variables
        load_dotenv()

        # Load JSON configuration
        try:
            with open(config_path, 'r') as f:
                self._config = json.load(f)
        except FileNotFoundError:
            self._config = copy.deepcopy(DEFAULT_CONFIG)

    def get(self, key_path: str, default=None):
        """Get configuration value using dot notation"""
        keys = key_path.split('.')
        value = self._config

        for key in keys:
            if isinstance(value, dict) and key in value:
                value = value[key]
            else:
                return default
        return value

    # Engine settings
    @property
    def check_finite(self) -> bool:
        return bool(self.get('engine.check_finite', True))

    @property
    def bn_eps(self) -> float:
        return float(self.get('engine.bn_eps', 1e-5))

    @property
    def bn_momentum(self) -> float:
        return float(self.get('engine.bn_momentum', 0.99))

    # Detector settings
    @property
    def input_size(self) -> int:
        return int(self.get('detector.input_size', 96))

    @property
    def num_classes(self) -> int:
        return int(self.get('detector.num_classes', 2))

    @property
    def variant(self) -> str:
        return self.get('detector.variant', 'sh')

    @property
    def depth_preset(self) -> str:
        return self.get('detector.depth_preset', 'desk')

    @property
    def block_type(self) -> str:
        return self.get('detector.block_type', 'transformer')

    # Training settings
    @property
    def seed(self) -> int:
        return int(os.getenv('YOLOFORMER_SEED', self.get('training.seed', 0)))

    @property
    def checkpoint_name(self) -> str:
        return self.get('training.checkpoint_name', 'model.yfck')

    @property
    def metrics_log(self) -> str:
        return self.get('training.metrics_log', 'metrics.jsonl')

    @property
    def checkpoint_path(self) -> Optional[str]:
        return os.getenv('YOLOFORMER_CHECKPOINT')

    # Evaluation settings
    @property
    def iou_threshold(self) -> float:
        return float(self.get('evaluation.iou_threshold', 0.5))

    @property
    def conf_threshold(self) -> float:
        return float(self.get('evaluation.conf_threshold', 0.005))

    @property
    def nms_iou(self) -> float:
        return float(self.get('evaluation.nms_iou', 0.5))

    @property
    def ap_interpolation(self) -> str:
        return self.get('evaluation.ap_interpolation', 'ALL_POINTS')

    # Augmentation settings
    @property
    def max_rotation(self) -> float:
        return float(self.get('augment.max_rotation', 45.0))

    @property
    def fill_value(self) -> int:
        return int(self.get('augment.fill_value', 114))

    # Service settings
    @property
    def port(self) -> int:
        return int(os.getenv('PORT', self.get('service.port', 5001)))

    @property
    def host(self) -> str:
        return self.get('service.host', '0.0.0.0')

    @property
    def debug(self) -> bool:
        debug_env = os.getenv('DEBUG', '').lower()
        if debug_env in ['true', '1', 'yes']:
            return True
        return self.get('service.debug', False)

    # Logging
    @property
    def log_level(self) -> str:
        return os.getenv('LOG_LEVEL', self.get('logging.level', 'INFO'))


settings = Config()


def _config_error(exc: PydanticValidationError, source: str) -> ConfigurationError:
    first = exc.errors()[0]
    key = ".".join(str(x) for x in first["loc"]) or "config"
    return ConfigurationError(f"{source}: invalid value for '{key}': {first['msg']}", config_key=key)


def validated(model_cls, source: str = "config", **values):
    """Build a pydantic record, turning validation failures into ConfigurationError"""
    try:
        return model_cls(**values)
    except PydanticValidationError as e:
        raise _config_error(e, source) from e


def parse_train_config(text: str, source: str = "<string>"):
    """Parse flat ``key = value`` lines into a TrainConfig"""
    from yoloformer.models.config_models import TrainConfig

    fields = TrainConfig.model_fields
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source} line {lineno}: expected 'key = value'", config_key=line)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in fields:
            raise ConfigurationError(f"{source} line {lineno}: unknown key '{key}'", config_key=key)
        if key in values:
            raise ConfigurationError(f"{source} line {lineno}: duplicate key '{key}'", config_key=key)
        values[key] = [v.strip() for v in value.split(",")] if key == "loss_weights" else value
    return validated(TrainConfig, source, **values)


def load_train_config(path: Optional[str]):
    """TrainConfig from a flat config file, defaults when ``path`` is None"""
    from yoloformer.models.config_models import TrainConfig

    if path is None:
        return TrainConfig()
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}", config_key="--config") from e
    return parse_train_config(text, source=path)
