"""Windowed spatial/channel self-attention and cross-block attention sharing.

Each attention module runs two stages: a meso stage over non-overlapping
P x P tiles and a global stage over G x G pixel grids strided across the whole
image. A stage is pre-norm attention with a residual, followed by a pre-norm
feed-forward network with a residual.

Spatial affinity matrices depend only on the window geometry (tokens x
tokens), never on channel width, which is what lets later blocks reuse the
matrices computed by the first block even though their channel counts shrink.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from . import ops
from .errors import ContractError, OrderingError, ShareError
from .layers import LayerNorm, Linear, Module
from .tensor import Tensor, add, gelu, matmul, mul, permute, reshape, softmax, transpose

LEVELS = ("meso", "global")


class ShareMode(str, Enum):
    INTER = "InterGroup"
    INTRA = "IntraGroup"
    NONE = "None"

    @classmethod
    def parse(cls, value) -> "ShareMode":
        if isinstance(value, cls):
            return value
        for mode in cls:
            if str(value).lower() in (mode.value.lower(), mode.name.lower()):
                return mode
        raise ValueError(f"unknown share mode {value!r}; expected one of {[m.value for m in cls]}")


@dataclass(frozen=True)
class AttentionEntry:
    """Spatial attention matrices for one depth: (windows, T, T) per level."""

    meso: Tensor
    glob: Tensor

    def level(self, name: str) -> Tensor:
        return self.meso if name == "meso" else self.glob


def partition(x: Tensor, level: str, size: int) -> Tensor:
    return ops.partition_meso(x, size) if level == "meso" else ops.partition_global(x, size)


def merge(t: Tensor, level: str, size: int, B: int, H: int, W: int) -> Tensor:
    if level == "meso":
        return ops.merge_meso(t, size, B, H, W)
    return ops.merge_global(t, size, B, H, W)


def spatial_affinity(q: Tensor, k: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) over tokens; q, k are (windows, T, d)."""
    return softmax(mul(matmul(q, transpose(k)), 1.0 / math.sqrt(q.shape[-1])), axis=-1)


def channel_affinity(q: Tensor, k: Tensor, heads: int) -> Tensor:
    """Per-head channel affinity softmax(q_h^T k_h / sqrt(T)), shaped (windows, heads, d, d)."""
    N, T, C = q.shape
    d = C // heads
    qh = permute(reshape(q, (N, T, heads, d)), (0, 2, 3, 1))
    kh = permute(reshape(k, (N, T, heads, d)), (0, 2, 1, 3))
    return softmax(mul(matmul(qh, kh), 1.0 / math.sqrt(T)), axis=-1)


def channel_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> tuple[Tensor, Tensor]:
    N, T, C = v.shape
    d = C // heads
    A = channel_affinity(q, k, heads)
    vh = permute(reshape(v, (N, T, heads, d)), (0, 2, 3, 1))
    out = matmul(A, vh)
    return reshape(permute(out, (0, 3, 1, 2)), (N, T, C)), A


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = Linear(dim, hidden)
        self.fc2 = Linear(hidden, dim)

    def forward(self, t: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(t)))


def ffn_width(dim: int, ratio: float) -> int:
    return max(1, int(ratio * dim + 0.5))


class SpatialStage(Module):
    """One level of spatial attention. Consumers own no Q/K projections."""

    def __init__(self, dim: int, level: str, size: int, ffn_ratio: float, producer: bool = True):
        super().__init__()
        self.dim, self.level, self.size, self.producer = dim, level, size, producer
        self.norm1 = LayerNorm(dim)
        if producer:
            self.q = Linear(dim, dim)
            self.k = Linear(dim, dim)
        self.v = Linear(dim, dim)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_width(dim, ffn_ratio))

    def forward(self, x: Tensor, shared: Tensor | None = None, where: str = "") -> tuple[Tensor, Tensor]:
        B, C, H, W = x.shape
        t = partition(x, self.level, self.size)
        n = self.norm1(t)
        if self.producer:
            A = spatial_affinity(self.q(n), self.k(n))
        else:
            if shared is None:
                raise ShareError(f"{where} {self.level}: consumer stage needs a shared attention matrix")
            expect = (t.shape[0], t.shape[1], t.shape[1])
            if shared.shape != expect:
                raise ShareError(
                    f"{where} {self.level}: shared attention {shared.shape} does not fit windows {expect}")
            A = shared
        z = add(matmul(A, self.v(n)), t)
        out = add(z, self.ffn(self.norm2(z)))
        return merge(out, self.level, self.size, B, H, W), A

    def own_macs(self, h, w):
        tokens = self.size * self.size
        per_pixel = tokens * self.dim * (2 if self.producer else 1)
        return per_pixel * h * w


class SpatialAttention(Module):
    """SAM: meso then global spatial attention.

    A producer computes and returns its matrices; a consumer is handed them.
    """

    def __init__(self, dim: int, meso: int, glob: int, ffn_ratio: float, producer: bool = True):
        super().__init__()
        self.producer = producer
        self.meso = SpatialStage(dim, "meso", meso, ffn_ratio, producer)
        self.glob = SpatialStage(dim, "global", glob, ffn_ratio, producer)

    def forward(self, x: Tensor, shared: AttentionEntry | None = None,
                where: str = "") -> tuple[Tensor, AttentionEntry]:
        if not self.producer and shared is None:
            raise ShareError(f"{where}: consumer SAM called without shared attention")
        x, a_meso = self.meso(x, shared.meso if shared is not None and not self.producer else None, where)
        x, a_glob = self.glob(x, shared.glob if shared is not None and not self.producer else None, where)
        return x, AttentionEntry(a_meso, a_glob)


class ChannelStage(Module):
    def __init__(self, dim: int, level: str, size: int, ffn_ratio: float, heads: int = 1):
        super().__init__()
        if dim % heads:
            raise ContractError(f"channel attention: {dim} channels not divisible into {heads} heads")
        self.dim, self.level, self.size, self.heads = dim, level, size, heads
        self.norm1 = LayerNorm(dim)
        self.q = Linear(dim, dim)
        self.k = Linear(dim, dim)
        self.v = Linear(dim, dim)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_width(dim, ffn_ratio))

    def forward(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        t = partition(x, self.level, self.size)
        n = self.norm1(t)
        y, _ = channel_attention(self.q(n), self.k(n), self.v(n), self.heads)
        z = add(y, t)
        out = add(z, self.ffn(self.norm2(z)))
        return merge(out, self.level, self.size, B, H, W)

    def own_macs(self, h, w):
        # q_h^T k_h and A v_h: 2 * C * d per pixel
        return 2 * self.dim * (self.dim // self.heads) * h * w


class ChannelAttention(Module):
    """CAM: meso then global channel attention."""

    def __init__(self, dim: int, meso: int, glob: int, ffn_ratio: float, heads: int = 1):
        super().__init__()
        self.meso = ChannelStage(dim, "meso", meso, ffn_ratio, heads)
        self.glob = ChannelStage(dim, "global", glob, ffn_ratio, heads)

    def forward(self, x: Tensor) -> Tensor:
        return self.glob(self.meso(x))


class AttentionRegistry:
    """Routes spatial attention matrices from producer SAMs to consumers.

    Blocks and depths are 1-based. Under InterGroup sharing block 1 produces
    every depth and block b > 1 reuses block 1's matrix at the same depth;
    under IntraGroup each block's depth 1 produces for its own depths 2..u;
    with no sharing every SAM produces its own.
    """

    def __init__(self, mode: ShareMode | str, units: int):
        self.mode = ShareMode.parse(mode)
        self.units = units
        self.entries: dict[tuple[int, int], AttentionEntry] = {}

    def _check(self, block: int, depth: int) -> None:
        if block < 1 or not 1 <= depth <= self.units:
            raise ContractError(f"attention position block={block} depth={depth} out of range (units={self.units})")

    def source(self, block: int, depth: int) -> tuple[int, int] | None:
        """Position whose matrices (block, depth) reuses, or None if it produces."""
        self._check(block, depth)
        if self.mode is ShareMode.INTER and block > 1:
            return (1, depth)
        if self.mode is ShareMode.INTRA and depth > 1:
            return (block, 1)
        return None

    def is_producer(self, block: int, depth: int) -> bool:
        return self.source(block, depth) is None

    def publish(self, block: int, depth: int, entry: AttentionEntry) -> None:
        if not self.is_producer(block, depth):
            raise ContractError(f"block {block} depth {depth} is a consumer under {self.mode.value}; it cannot publish")
        self.entries[(block, depth)] = entry

    def fetch(self, block: int, depth: int) -> AttentionEntry:
        src = self.source(block, depth)
        if src is None:
            raise ContractError(f"block {block} depth {depth} computes its own attention under {self.mode.value}")
        try:
            return self.entries[src]
        except KeyError:
            raise OrderingError(
                f"block {block} depth {depth} fetched attention from block {src[0]} depth {src[1]} "
                "before it was published") from None

    def clear(self) -> None:
        self.entries.clear()
