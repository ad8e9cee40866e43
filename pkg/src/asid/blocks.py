"""Local module, gating branches and the information distillation block."""

from __future__ import annotations

from dataclasses import dataclass

from . import ops
from .attention import AttentionRegistry, ChannelAttention, SpatialAttention
from .errors import ConfigError, ContractError
from .layers import Conv2d, Module, ModuleList
from .tensor import Tensor, add, concat, gelu, mean, mul, relu, sigmoid, split


class SqueezeExcite(Module):
    """Channel gate from globally pooled statistics through a bottleneck MLP."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        if reduction < 1 or channels % reduction:
            raise ConfigError(f"SE reduction {reduction} does not divide {channels} channels")
        self.reduce = Conv2d(channels, channels // reduction, 1)
        self.expand = Conv2d(channels // reduction, channels, 1)

    def gate(self, x: Tensor) -> Tensor:
        s = mean(x, axis=(2, 3), keepdims=True)
        return sigmoid(self.expand(relu(self.reduce(s))))

    def forward(self, x: Tensor) -> Tensor:
        return mul(x, self.gate(x))

    def child_geometry(self, h, w):
        return [("reduce", self.reduce, 1, 1), ("expand", self.expand, 1, 1)]


class LocalModule(Module):
    """Pixel-wise conv, depth-wise 3x3 conv, GELU, SE gate, residual."""

    def __init__(self, channels: int, se_reduction: int = 4):
        super().__init__()
        self.pw = Conv2d(channels, channels, 1)
        self.dw = Conv2d(channels, channels, 3, groups=channels)
        self.se = SqueezeExcite(channels, se_reduction)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.pw.in_channels:
            raise ContractError(f"local module built for {self.pw.in_channels} channels got {x.shape[1]}")
        return add(self.se(gelu(self.dw(self.pw(x)))), x)


class ESA(Module):
    """Enhanced spatial attention: a sigmoid mask from a strided, pooled branch.

    1x1 reduce -> 3x3 stride-2 conv -> max-pool -> three 3x3 convs -> bilinear
    upsample -> add 1x1-projected reduced skip -> 1x1 restore -> sigmoid.
    """

    def __init__(self, channels: int, reduced: int = 16, pool: int = 7, pool_stride: int = 3):
        super().__init__()
        self.pool, self.pool_stride = pool, pool_stride
        self.conv1 = Conv2d(channels, reduced, 1)
        self.conv_f = Conv2d(reduced, reduced, 1)
        self.conv2 = Conv2d(reduced, reduced, 3, stride=2, padding=0)
        self.conv_max = Conv2d(reduced, reduced, 3)
        self.conv3 = Conv2d(reduced, reduced, 3)
        self.conv3_ = Conv2d(reduced, reduced, 3)
        self.conv4 = Conv2d(reduced, channels, 1)

    def pooled_size(self, h: int, w: int) -> tuple[int, int]:
        h2, w2 = self.conv2.output_size(h, w)
        if h2 < self.pool or w2 < self.pool:
            raise ContractError(
                f"ESA: {h}x{w} input is {h2}x{w2} after striding, smaller than the {self.pool}x{self.pool} pool")
        return ops.conv_output_size(h2, self.pool, self.pool_stride), ops.conv_output_size(w2, self.pool, self.pool_stride)

    def mask(self, x: Tensor) -> Tensor:
        H, W = x.shape[2], x.shape[3]
        self.pooled_size(H, W)
        c1_ = self.conv1(x)
        c1 = ops.max_pool2d(self.conv2(c1_), self.pool, self.pool_stride)
        c3 = self.conv3_(relu(self.conv3(relu(self.conv_max(c1)))))
        c3 = ops.bilinear_resize(c3, H, W)
        return sigmoid(self.conv4(add(c3, self.conv_f(c1_))))

    def forward(self, x: Tensor) -> Tensor:
        return mul(x, self.mask(x))

    def child_geometry(self, h, w):
        hp, wp = self.pooled_size(h, w)
        return [("conv1", self.conv1, h, w), ("conv_f", self.conv_f, h, w), ("conv2", self.conv2, h, w),
                ("conv_max", self.conv_max, hp, wp), ("conv3", self.conv3, hp, wp),
                ("conv3_", self.conv3_, hp, wp), ("conv4", self.conv4, h, w)]


@dataclass(frozen=True)
class IdbConfig:
    channels: int = 48
    refined_width: int = 12
    units: int = 3
    channel_split: bool = True
    meso_size: int = 8
    global_size: int = 8
    ffn_ratio: float = 2.25
    se_ratio: int = 4
    cam_heads: int = 6
    esa_channels: int = 16
    esa_pool: int = 7
    esa_pool_stride: int = 3

    def unit_widths(self) -> list[int]:
        """Input width of each unit: C, C - r, C - 2r, ..."""
        return [self.channels - i * self.refined_width for i in range(self.units)]

    def attention_widths(self) -> list[int]:
        """Channels each SAM attends over.

        With channel split the refined channels of every non-final unit
        bypass attention; without it each SAM sees its unit's full width.
        """
        widths = self.unit_widths()
        if not self.channel_split:
            return widths
        return [w - self.refined_width for w in widths[:-1]] + [widths[-1]]

    def validate(self) -> None:
        r, widths = self.refined_width, self.unit_widths()
        if self.units < 1 or r < 1:
            raise ConfigError(f"units ({self.units}) and refined_width ({r}) must be positive")
        if self.units > 1 and widths[-1] <= r:
            raise ConfigError(
                f"unit widths {widths} must all exceed refined_width {r} (channels - (units-1)*r > r)")
        if r * (self.units - 1) + widths[-1] != self.channels:
            raise ConfigError("distilled concat width does not close to the block width")
        for w in widths:
            if w % self.se_ratio:
                raise ConfigError(f"se_ratio {self.se_ratio} does not divide unit width {w}")
        if self.channels % self.cam_heads:
            raise ConfigError(f"cam_heads {self.cam_heads} does not divide {self.channels} channels")


class DistillationUnit(Module):
    def __init__(self, width: int, attn_width: int, cfg: IdbConfig, producer: bool):
        super().__init__()
        self.width, self.attn_width = width, attn_width
        self.lm = LocalModule(width, cfg.se_ratio)
        self.sam = SpatialAttention(attn_width, cfg.meso_size, cfg.global_size, cfg.ffn_ratio, producer)


def _spatial_step(sam: SpatialAttention, x: Tensor, registry: AttentionRegistry, block: int, depth: int) -> Tensor:
    producer = registry.is_producer(block, depth)
    if producer != sam.producer:
        role = "producer" if producer else "consumer"
        raise ContractError(f"block {block} depth {depth} is a {role} under {registry.mode.value} "
                            "but its SAM was built for the other role")
    where = f"block {block} depth {depth}"
    if producer:
        y, entry = sam(x, where=where)
        registry.publish(block, depth, entry)
        return y
    y, _ = sam(x, registry.fetch(block, depth), where=where)
    return y


class InformationDistillationBlock(Module):
    """Progressive split/refine over ``units`` LM+SAM steps, then fuse, CAM, ESA.

    Every non-final unit keeps ``refined_width`` channels aside and forwards
    the rest; the kept pieces and the last unit's output are concatenated,
    fused by a 1x1 conv, passed through CAM, added to the block input and
    gated by ESA.
    """

    def __init__(self, cfg: IdbConfig, producers: list[bool]):
        super().__init__()
        cfg.validate()
        if len(producers) != cfg.units:
            raise ConfigError(f"need one producer flag per unit, got {len(producers)} for {cfg.units}")
        self.cfg = cfg
        self.units = ModuleList(
            DistillationUnit(w, a, cfg, p)
            for w, a, p in zip(cfg.unit_widths(), cfg.attention_widths(), producers))
        C = cfg.channels
        self.fuse = Conv2d(C, C, 1)
        self.cam = ChannelAttention(C, cfg.meso_size, cfg.global_size, cfg.ffn_ratio, cfg.cam_heads)
        self.esa = ESA(C, cfg.esa_channels, cfg.esa_pool, cfg.esa_pool_stride)

    def forward(self, x: Tensor, registry: AttentionRegistry, block: int = 1) -> Tensor:
        cfg = self.cfg
        if x.shape[1] != cfg.channels:
            raise ContractError(f"block built for {cfg.channels} channels got input {x.shape}")
        r, last = cfg.refined_width, len(self.units)
        refined, cur = [], x
        for depth, unit in enumerate(self.units, start=1):
            y = unit.lm(cur)
            if depth < last and cfg.channel_split:
                ref, y = split(y, [r, unit.width - r], axis=1)
                y = _spatial_step(unit.sam, y, registry, block, depth)
            else:
                y = _spatial_step(unit.sam, y, registry, block, depth)
                if depth < last:
                    ref, y = split(y, [r, unit.width - r], axis=1)
            if depth < last:
                refined.append(ref)
            cur = y
        refined.append(cur)
        f = self.fuse(concat(refined, axis=1))
        return self.esa(add(self.cam(f), x))


class SerialBlock(Module):
    """Ablation baseline: LM -> SAM -> CAM in series, residual, then ESA."""

    def __init__(self, cfg: IdbConfig, producer: bool = True):
        super().__init__()
        C = cfg.channels
        self.cfg = cfg
        self.lm = LocalModule(C, cfg.se_ratio)
        self.sam = SpatialAttention(C, cfg.meso_size, cfg.global_size, cfg.ffn_ratio, producer)
        self.cam = ChannelAttention(C, cfg.meso_size, cfg.global_size, cfg.ffn_ratio, cfg.cam_heads)
        self.esa = ESA(C, cfg.esa_channels, cfg.esa_pool, cfg.esa_pool_stride)

    def forward(self, x: Tensor, registry: AttentionRegistry, block: int = 1) -> Tensor:
        y = _spatial_step(self.sam, self.lm(x), registry, block, 1)
        return self.esa(add(self.cam(y), x))
