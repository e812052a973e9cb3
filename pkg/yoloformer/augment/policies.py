"""
Policy engines: RandAugment, AugMix and the per-sample dispatcher used by the
training loader and the ``augment`` command.
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from yoloformer.augment.geometric import GEOMETRIC_NAMES, geometric_pipeline
from yoloformer.augment.photometric import PHOTOMETRIC_OPS
from yoloformer.models.config_models import AugmentPolicy, AugmentPolicyName
from yoloformer.models.detection_models import Sample
from yoloformer.utils.exceptions import ValidationError
from yoloformer.utils.rng import SeededRng

logger = logging.getLogger(__name__)

RANDAUGMENT_OPS = tuple(PHOTOMETRIC_OPS)


def rand_augment(s: Sample, policy: AugmentPolicy, rng: SeededRng) -> Sample:
    """N ops drawn uniformly with replacement, each at magnitude M"""
    for _ in range(policy.randaug_n):
        name = RANDAUGMENT_OPS[int(rng.integers(0, len(RANDAUGMENT_OPS)))]
        s = PHOTOMETRIC_OPS[name](s, policy.randaug_m, rng)
    return s


def chain_ops(policy: AugmentPolicy) -> List[str]:
    names = list(policy.augmix_ops) if policy.augmix_ops else list(PHOTOMETRIC_OPS)
    geometric = [n for n in names if n in GEOMETRIC_NAMES]
    if geometric:
        raise ValidationError(f"geometric ops {geometric} are not allowed in AugMix chains", field="augmix_ops")
    return names


def augmix_blend(original: np.ndarray, chains: Sequence[np.ndarray], weights: Sequence[float],
                 m: float) -> np.ndarray:
    """(1 - m) * original + m * sum(w_i * chain_i), rounded back to uint8"""
    mixed = np.zeros(original.shape, dtype=np.float64)
    for w, image in zip(weights, chains):
        mixed += float(w) * image.astype(np.float64)
    blended = (1.0 - m) * original.astype(np.float64) + m * mixed
    return np.clip(np.rint(blended), 0, 255).astype(np.uint8)


def augmix_mixing(policy: AugmentPolicy, rng: SeededRng) -> Tuple[np.ndarray, float]:
    """Chain weights ~ Dirichlet(1, ..., 1) and blend m ~ Beta(alpha, beta)"""
    weights = rng.dirichlet([1.0] * policy.augmix_chains)
    return weights, float(rng.beta(policy.mix_alpha, policy.mix_beta))


def aug_mix(s: Sample, policy: AugmentPolicy, rng: SeededRng) -> Sample:
    """Dirichlet-mixed chains of photometric ops, Beta-blended with the original"""
    names = chain_ops(policy)
    magnitude = 3 * policy.augmix_severity
    weights, m = augmix_mixing(policy, rng)
    lo, hi = policy.augmix_depth_range

    chains, trail = [], []
    for c in range(policy.augmix_chains):
        chained = s.replace(audit=[])
        depth = int(rng.integers(lo, hi + 1))
        for _ in range(depth):
            name = names[int(rng.integers(0, len(names)))]
            chained = PHOTOMETRIC_OPS[name](chained, magnitude, rng)
        chains.append(chained.image)
        trail.append(f"chain{c}[{','.join(chained.audit)}]")

    image = augmix_blend(s.image, chains, weights, m)
    return s.replace(image=image, audit=s.audit + [f"augmix:m={m:.4f}:" + ";".join(trail)])


def apply_policy(s: Sample, policy: AugmentPolicy, rng: SeededRng) -> Sample:
    """Photometric policy, then the geometric pipeline; NONE is the identity"""
    if policy.policy == AugmentPolicyName.NONE:
        return s
    if policy.policy == AugmentPolicyName.RANDAUGMENT:
        s = rand_augment(s, policy, rng)
    else:
        s = aug_mix(s, policy, rng)
    return geometric_pipeline(s, rng, policy.geometric_prob)


def policy_from_name(name: Optional[str], **overrides) -> AugmentPolicy:
    values = {"policy": AugmentPolicyName(name or "none")}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return AugmentPolicy(**values)
