"""End-to-end assembly: shallow conv, cascaded blocks, global residual, upsampler."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields

import numpy as np

from . import ops
from .attention import AttentionRegistry, ShareMode
from .blocks import IdbConfig, InformationDistillationBlock, SerialBlock
from .errors import ConfigError, ContractError
from .layers import Conv2d, Module, ModuleList, init_parameters
from .tensor import Tensor, add, getitem

VARIANTS = ("asid", "baseline")


@dataclass(frozen=True)
class ModelConfig:
    """Architectural hyper-parameters.

    Defaults are the ~300K-parameter model; ``ffn_ratio``, ``cam_heads`` and
    the ESA width were chosen so parameter and multiply-add totals land on
    the published complexity figures.
    """

    blocks: int = 3
    channels: int = 48
    refined_width: int = 12
    units: int = 3
    meso_size: int = 8
    global_size: int = 8
    scale: int = 2
    share_mode: str = ShareMode.INTER.value
    channel_split: bool = True
    ffn_ratio: float = 2.25
    se_ratio: int = 4
    cam_heads: int = 6
    esa_channels: int = 16
    esa_pool: int = 7
    esa_pool_stride: int = 3
    variant: str = "asid"

    def __post_init__(self):
        try:
            mode = ShareMode.parse(self.share_mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        object.__setattr__(self, "share_mode", mode.value)

    @property
    def mode(self) -> ShareMode:
        return ShareMode.parse(self.share_mode)

    def idb(self) -> IdbConfig:
        return IdbConfig(
            channels=self.channels, refined_width=self.refined_width, units=self.units,
            channel_split=self.channel_split, meso_size=self.meso_size, global_size=self.global_size,
            ffn_ratio=self.ffn_ratio, se_ratio=self.se_ratio, cam_heads=self.cam_heads,
            esa_channels=self.esa_channels, esa_pool=self.esa_pool, esa_pool_stride=self.esa_pool_stride)

    def validate(self) -> "ModelConfig":
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.meso_size < 1 or self.global_size < 1:
            raise ConfigError("meso_size and global_size must be positive")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.ffn_ratio <= 0:
            raise ConfigError("ffn_ratio must be positive")
        if self.variant == "baseline":
            if self.channels % self.se_ratio or self.channels % self.cam_heads:
                raise ConfigError("se_ratio and cam_heads must divide channels")
        else:
            self.idb().validate()
        return self

    @property
    def multiple(self) -> int:
        """Spatial size the body needs its input padded to."""
        return math.lcm(self.meso_size, self.global_size)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        names = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(names))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**{k: _coerce(names[k], v) for k, v in values.items()})


def _coerce(f, value):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    if not isinstance(value, str):
        return value
    try:
        if kind == "bool":
            low = value.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"config key {f.name}: cannot parse {value!r} as {kind}") from None
    return value.strip()


PRESETS = {
    "asid": ModelConfig(),
    "asid-d8": ModelConfig(blocks=8),
    "micro": ModelConfig(blocks=2, channels=16, refined_width=4, meso_size=4, global_size=4,
                         cam_heads=2, esa_channels=4),
    "micro-grad": ModelConfig(blocks=2, channels=8, refined_width=2, meso_size=2, global_size=2,
                              se_ratio=2, cam_heads=1, esa_channels=4, esa_pool=3, esa_pool_stride=1),
}


def config_to_text(cfg: ModelConfig) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in cfg.to_dict().items())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def config_from_text(text: str, base: ModelConfig | None = None) -> ModelConfig:
    merged = (base or ModelConfig()).to_dict()
    merged.update(parse_config_text(text))
    return ModelConfig.from_dict(merged)


class Upsampler(Module):
    """3x3 conv to 3*s^2 channels followed by a single pixel shuffle."""

    def __init__(self, channels: int, scale: int):
        super().__init__()
        self.scale = scale
        self.conv = Conv2d(channels, 3 * scale * scale, 3)

    def forward(self, x: Tensor) -> Tensor:
        return ops.pixel_shuffle(self.conv(x), self.scale)


class ASID(Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        C = config.channels
        self.head = Conv2d(3, C, 3)
        plan = AttentionRegistry(config.mode, config.units)
        self.blocks = ModuleList()
        for b in range(1, config.blocks + 1):
            if config.variant == "baseline":
                self.blocks.append(SerialBlock(config.idb(), plan.is_producer(b, 1)))
            else:
                producers = [plan.is_producer(b, d) for d in range(1, config.units + 1)]
                self.blocks.append(InformationDistillationBlock(config.idb(), producers))
        self.body = Conv2d(C, C, 3)
        self.upsample = Upsampler(C, config.scale)

    def new_registry(self) -> AttentionRegistry:
        return AttentionRegistry(self.config.mode, self.config.units)

    def padded_size(self, h: int, w: int) -> tuple[int, int]:
        m = self.config.multiple
        return h + (-h) % m, w + (-w) % m

    def check_geometry(self, h: int, w: int) -> tuple[int, int]:
        hp, wp = self.padded_size(h, w)
        if (hp - h) >= h or (wp - w) >= w:
            raise ContractError(f"input {h}x{w} too small to reflect-pad to {hp}x{wp}")
        try:
            self.blocks[0].esa.pooled_size(hp, wp)
        except ContractError as exc:
            raise ContractError(f"input {h}x{w} below the minimum geometry: {exc}") from None
        return hp, wp

    def forward(self, x: Tensor, training: bool = False, registry: AttentionRegistry | None = None) -> Tensor:
        """Super-resolve an (B, 3, H, W) batch in [0, 1].

        Inputs are reflect-padded to a multiple of lcm(P, G) and the output is
        cropped back. Outside training the result is clamped to [0, 1].
        """
        if x.ndim != 4 or x.shape[1] != 3:
            raise ContractError(f"expected an RGB batch shaped (B, 3, H, W), got {x.shape}")
        _, _, H, W = x.shape
        hp, wp = self.check_geometry(H, W)
        s = self.config.scale
        xp = ops.reflect_pad(x, hp - H, wp - W) if (hp, wp) != (H, W) else x
        registry = registry if registry is not None else self.new_registry()
        f0 = self.head(xp)
        f = f0
        for b, block in enumerate(self.blocks, start=1):
            f = block(f, registry, b)
        out = self.upsample(add(f0, self.body(f)))
        if (hp, wp) != (H, W):
            out = getitem(out, (slice(None), slice(None), slice(0, H * s), slice(0, W * s)))
        if not training:
            out = Tensor(np.clip(out.data, 0.0, 1.0))
        return out


def build(config: ModelConfig | None = None, seed: int = 0, dtype=np.float32) -> ASID:
    model = ASID(config or ModelConfig())
    init_parameters(model, seed, dtype)
    return model
