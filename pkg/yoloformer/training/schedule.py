import math

from yoloformer.models.config_models import TrainConfig


def lr_at(step: int, config: TrainConfig, steps_per_epoch: int = 1) -> float:
    """Linear warmup 0 -> peak, then cosine decay to exactly 0 at the last step"""
    warmup = config.warmup_epochs * steps_per_epoch
    total = config.epochs * steps_per_epoch
    if step < 0 or (total and step >= total):
        raise ValueError(f"step {step} outside [0, {total})")
    if step < warmup:
        return config.peak_lr * step / warmup
    span = total - 1 - warmup
    if span <= 0:
        return config.peak_lr
    progress = (step - warmup) / span
    return 0.5 * config.peak_lr * (1.0 + math.cos(math.pi * progress))


def keep_prob_at(epoch: int, config: TrainConfig) -> float:
    """DropBlock keep probability, linear in epoch from keep_start to keep_end"""
    if not config.dropblock_enabled:
        return 1.0
    if config.epochs <= 1:
        return config.dropblock_keep_end
    t = min(max(epoch / (config.epochs - 1), 0.0), 1.0)
    return (1.0 - t) * config.dropblock_keep_start + t * config.dropblock_keep_end
