"""Parameterised layers and the minimal Module container they live in."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .errors import ConfigError
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf tensor. ``init`` names the initialisation rule."""

    def __init__(self, data, init: str = "zeros"):
        super().__init__(data, requires_grad=True)
        self.init = init


class Module:
    """Ordered container of parameters and sub-modules.

    Registration order is the serialization and initialization order, so
    it must stay deterministic.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_children(self) -> Iterator[tuple[str, "Module"]]:
        yield from self._modules.items()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def own_params(self) -> int:
        return sum(p.size for p in self._params.values())

    def to(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    # cost hooks used by the accounting module
    def own_macs(self, h: int, w: int) -> int:
        """Multiply-adds executed directly by this module on an h x w input."""
        return 0

    def child_geometry(self, h: int, w: int) -> list[tuple[str, "Module", int, int]]:
        """(name, child, h, w) for each child; children see the parent's geometry by default."""
        return [(name, m, h, w) for name, m in self._modules.items()]


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, m: Module) -> None:
        setattr(self, str(len(self._items)), m)
        self._items.append(m)

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 1, stride: int = 1,
                 padding: int | None = None, groups: int = 1, bias: bool = True):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise ConfigError(f"conv {in_channels}->{out_channels} not divisible into {groups} groups")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride, self.groups = kernel_size, stride, groups
        self.padding = kernel_size // 2 if padding is None else padding
        self.weight = Parameter(np.zeros((out_channels, in_channels // groups, kernel_size, kernel_size)),
                                init="fan_in_uniform")
        self.bias = Parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel_size, self.stride, self.padding
        return ops.conv_output_size(h, k, s, p), ops.conv_output_size(w, k, s, p)

    def own_macs(self, h, w):
        ho, wo = self.output_size(h, w)
        return self.out_channels * (self.in_channels // self.groups) * self.kernel_size ** 2 * ho * wo


class Linear(Module):
    """Per-token projection; an h x w geometry means h*w tokens."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.weight = Parameter(np.zeros((in_features, out_features)), init="trunc_normal")
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)

    def own_macs(self, h, w):
        return self.in_features * self.out_features * h * w


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = Parameter(np.ones(dim), init="ones")
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias, self.eps)


def init_parameters(module: Module, seed: int, dtype=np.float32) -> None:
    """Deterministically (re)initialise every parameter in registration order.

    Convolutions draw U(-1/sqrt(fan_in), 1/sqrt(fan_in)); token projections a
    normal with std 0.02 truncated at two standard deviations; biases zero.
    """
    rng = np.random.default_rng(seed)
    for _, p in module.named_parameters():
        if p.init == "fan_in_uniform":
            bound = 1.0 / np.sqrt(np.prod(p.shape[1:]))
            data = rng.uniform(-bound, bound, size=p.shape)
        elif p.init == "trunc_normal":
            data = rng.standard_normal(p.shape)
            bad = np.abs(data) > 2.0
            while bad.any():
                data[bad] = rng.standard_normal(int(bad.sum()))
                bad = np.abs(data) > 2.0
            data = 0.02 * data
        elif p.init == "ones":
            data = np.ones(p.shape)
        else:
            data = np.zeros(p.shape)
        p.data = np.ascontiguousarray(data, dtype=dtype)
