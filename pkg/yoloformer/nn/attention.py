"""
Convolutional self-attention (CSAM) and the convolutional transformer module.

CSAM builds Query, Key and Value from three independent Psi gates:

    A   = sigmoid(Q * K)                 element-wise, no scaling
    Z   = mish(BN(V)) * A
    out = mish(conv4(mish(conv3(Z)))) + x

The Psi gate content selects the variant:

    sh    conv1(1x1) -> BN -> mish -> conv2(3x3)
    mb    sh branch + two conv1(1x1) -> BN -> mish branches, summed
    mh    conv1(1x1) -> BN -> mish -> split in 4 heads -> 3x3 per head -> concat
    mhmb  mb with the 3x3 stage of branch a in head form

The transformer module wraps CSAM with a projection and two residuals:

    p = conv1(x); r1 = csam(BN(p)) + p; out = conv3(mish(conv2(mish(BN(r1))))) + r1
"""
import logging
from typing import Optional, Tuple, Union

from yoloformer.engine import functional as F
from yoloformer.engine.tensor import Tensor
from yoloformer.models.config_models import CsamConfig, CsamVariant, TransformerConfig
from yoloformer.nn.layers import BatchNorm2d, Conv2d, ConvBnMish, Module, ModuleList, RunContext
from yoloformer.nn.regularizers import ShakeCoefficients
from yoloformer.utils.exceptions import ShapeError, ValidationError
from yoloformer.utils.rng import SeededRng

logger = logging.getLogger(__name__)


class PsiGate(Module):
    def __init__(self, channels: int, variant: CsamVariant, heads: int = 4, rng: Optional[SeededRng] = None):
        variant = CsamVariant(variant)
        if variant.has_heads and channels % heads:
            raise ValidationError(f"{channels} channels are not divisible by {heads} heads", field="channels")
        self.variant = variant
        self.channels = channels
        self.heads = heads

        self.conv1 = Conv2d(channels, channels, 1, rng=rng, bias=False)
        self.bn1 = BatchNorm2d(channels)
        if variant.has_heads:
            width = channels // heads
            self.conv2_heads = ModuleList(Conv2d(width, width, 3, rng=rng) for _ in range(heads))
        else:
            self.conv2 = Conv2d(channels, channels, 3, rng=rng)
        if variant.has_branches:
            self.conv1_b = Conv2d(channels, channels, 1, rng=rng, bias=False)
            self.bn1_b = BatchNorm2d(channels)
            self.conv1_c = Conv2d(channels, channels, 1, rng=rng, bias=False)
            self.bn1_c = BatchNorm2d(channels)

    def forward(self, x: Tensor, ctx: Optional[RunContext] = None,
                shake: Optional[ShakeCoefficients] = None) -> Tensor:
        return psi_forward(x, self, self.variant, ctx, shake)


def psi_forward(x: Tensor, gate: PsiGate, variant: CsamVariant, ctx: Optional[RunContext] = None,
                shake: Optional[ShakeCoefficients] = None) -> Tensor:
    """Run one Psi gate; ``shake`` scales branches b and c when given"""
    variant = CsamVariant(variant)
    if variant != gate.variant:
        raise ValidationError(f"gate built for {gate.variant.value}, called as {variant.value}", field="variant")
    if x.ndim != 4 or x.shape[1] != gate.channels:
        raise ShapeError(f"psi expects {gate.channels} channels, got {x.shape}", dimension="channels")
    if shake is not None and not variant.has_branches:
        raise ValidationError(f"shake coefficients given to branchless variant {variant.value}", field="shake")

    a = F.mish(gate.bn1(gate.conv1(x), ctx))
    if variant.has_heads:
        parts = F.channel_split(a, gate.heads)
        a = F.channel_concat([conv(part) for conv, part in zip(gate.conv2_heads, parts)])
    else:
        a = gate.conv2(a)
    if not variant.has_branches:
        return a

    b = F.mish(gate.bn1_b(gate.conv1_b(x), ctx))
    c = F.mish(gate.bn1_c(gate.conv1_c(x), ctx))
    if shake is None:
        return F.elementwise_add(F.elementwise_add(a, b), c)
    return F.elementwise_add(a, F.shake_combine([b, c], shake.forward_pair, shake.backward_pair))


class CSAM(Module):
    def __init__(self, config: CsamConfig, rng: Optional[SeededRng] = None):
        self.config = config
        c = config.channels
        self.q = PsiGate(c, config.variant, config.heads, rng)
        self.k = PsiGate(c, config.variant, config.heads, rng)
        self.v = PsiGate(c, config.variant, config.heads, rng)
        self.v_bn = BatchNorm2d(c)
        self.conv3 = Conv2d(c, c, 1, rng=rng)
        self.conv4 = Conv2d(c, c, 3, rng=rng)

    def _shake(self, gate: str, ctx: Optional[RunContext]) -> Optional[ShakeCoefficients]:
        if not self.config.shake_shake_enabled:
            return None
        ctx = ctx or RunContext.eval()
        return ctx.shake_coefficients(f"{self.path}.{gate}")

    def forward(self, x: Tensor, ctx: Optional[RunContext] = None,
                return_attention: bool = False) -> Union[Tensor, Tuple[Tensor, Tensor]]:
        return csam_forward(x, self, ctx, return_attention)


def csam_forward(x: Tensor, csam: CSAM, ctx: Optional[RunContext] = None,
                 return_attention: bool = False) -> Union[Tensor, Tuple[Tensor, Tensor]]:
    """CSAM forward; with ``return_attention`` also returns the map A"""
    if x.ndim != 4 or x.shape[1] != csam.config.channels:
        raise ShapeError(f"csam expects {csam.config.channels} channels, got {x.shape}", dimension="channels")
    variant = csam.config.variant
    query = psi_forward(x, csam.q, variant, ctx, csam._shake("q", ctx))
    key = psi_forward(x, csam.k, variant, ctx, csam._shake("k", ctx))
    value = F.mish(csam.v_bn(psi_forward(x, csam.v, variant, ctx, csam._shake("v", ctx)), ctx))

    attention = F.sigmoid(F.elementwise_mul(query, key))
    z = F.elementwise_mul(value, attention)
    y = F.mish(csam.conv4(F.mish(csam.conv3(z))))
    out = F.elementwise_add(y, x)
    return (out, attention) if return_attention else out


class TransformerModule(Module):
    def __init__(self, config: TransformerConfig, rng: Optional[SeededRng] = None):
        self.config = config
        cin, cout = config.in_channels, config.out_channels
        self.conv1 = Conv2d(cin, cout, 1, rng=rng)
        self.bn1 = BatchNorm2d(cout)
        self.csam = CSAM(config.csam, rng)
        self.bn2 = BatchNorm2d(cout)
        self.conv2 = Conv2d(cout, cout, 1, rng=rng)
        self.conv3 = Conv2d(cout, cout, 1, rng=rng)

    def forward(self, x: Tensor, ctx: Optional[RunContext] = None) -> Tensor:
        return transformer_module_forward(x, self, ctx)


def transformer_module_forward(x: Tensor, module: TransformerModule, ctx: Optional[RunContext] = None) -> Tensor:
    if x.ndim != 4 or x.shape[1] != module.config.in_channels:
        raise ShapeError(f"transformer module expects {module.config.in_channels} channels, got {x.shape}",
                         dimension="channels")
    p = module.conv1(x)
    r1 = F.elementwise_add(module.csam(module.bn1(p, ctx), ctx), p)
    v = module.bn2(r1, ctx)
    w = module.conv3(F.mish(module.conv2(F.mish(v))))
    return F.elementwise_add(w, r1)


class ResidualBlock(Module):
    """Baseline block: 1x1 -> 3x3 conv-BN-mish with an identity shortcut"""

    def __init__(self, channels: int, rng: Optional[SeededRng] = None):
        hidden = max(channels // 2, 1)
        self.conv1 = ConvBnMish(channels, hidden, 1, rng=rng)
        self.conv2 = ConvBnMish(hidden, channels, 3, rng=rng)

    def forward(self, x: Tensor, ctx: Optional[RunContext] = None) -> Tensor:
        return F.elementwise_add(self.conv2(self.conv1(x, ctx), ctx), x)


def build_block(block_type: str, channels: int, variant: CsamVariant, heads: int = 4,
                shake_shake: bool = False, rng: Optional[SeededRng] = None) -> Module:
    if block_type == "residual":
        return ResidualBlock(channels, rng)
    csam = CsamConfig(variant=variant, channels=channels, heads=heads, shake_shake_enabled=shake_shake)
    return TransformerModule(TransformerConfig(in_channels=channels, out_channels=channels, csam=csam), rng)
