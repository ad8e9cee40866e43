"""The finite-difference gradient suite shared by the CLI and the tests."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .attention import ChannelStage, SpatialStage, channel_attention, spatial_affinity
from .gradcheck import GradCheckResult, gradcheck
from .layers import init_parameters
from .network import PRESETS, build
from .tensor import (Tensor, abs_, add, concat, gelu, getitem, matmul, mean, mul, permute, relu, reshape,
                     sigmoid, softmax, split, sub, sum_, transpose)


@dataclass
class CheckOutcome:
    name: str
    result: GradCheckResult
    seconds: float


def _leaf(rng, *shape, away_from_zero: bool = False) -> Tensor:
    data = rng.standard_normal(shape)
    if away_from_zero:
        data = np.sign(data) * (0.1 + np.abs(data))
    return Tensor(data, requires_grad=True)


def _cases(rng) -> list[tuple[str, Callable, list[Tensor], int | None]]:
    L = lambda *s, **k: _leaf(rng, *s, **k)  # noqa: E731
    distinct = Tensor(rng.permutation(2 * 3 * 9 * 9).reshape(2, 3, 9, 9) * 0.1, requires_grad=True)

    stage_s = SpatialStage(4, "meso", 2, 2.0, producer=True)
    stage_c = ChannelStage(4, "global", 2, 2.0, heads=2)
    for m in (stage_s, stage_c):
        init_parameters(m, 1, np.float64)
        for p in m.parameters():
            p.data = p.data + 0.3 * rng.standard_normal(p.shape)

    return [
        ("add", lambda a, b: add(a, b), [L(3, 4), L(4)], None),
        ("sub", lambda a, b: sub(a, b), [L(2, 3, 4), L(3, 1)], None),
        ("mul", lambda a, b: mul(a, b), [L(2, 3, 4), L(1, 3, 1)], None),
        ("matmul", lambda a, b: matmul(a, b), [L(2, 3, 4), L(4, 5)], None),
        ("softmax", lambda a: softmax(a, axis=-1), [L(3, 5)], None),
        ("relu", relu, [L(4, 5, away_from_zero=True)], None),
        ("gelu", gelu, [L(4, 5)], None),
        ("sigmoid", sigmoid, [L(4, 5)], None),
        ("abs", abs_, [L(4, 5, away_from_zero=True)], None),
        ("sum", lambda a: sum_(a, axis=1), [L(3, 4, 2)], None),
        ("mean", lambda a: mean(a, axis=(0, 2), keepdims=True), [L(3, 4, 2)], None),
        ("reshape", lambda a: reshape(a, (4, 6)), [L(2, 3, 4)], None),
        ("permute", lambda a: permute(a, (2, 0, 1)), [L(2, 3, 4)], None),
        ("transpose", lambda a: transpose(a), [L(2, 3, 4)], None),
        ("getitem", lambda a: getitem(a, (slice(None), slice(1, 3))), [L(3, 4)], None),
        ("concat", lambda a, b: concat([a, b], axis=1), [L(2, 3, 2), L(2, 1, 2)], None),
        ("split", lambda a: mul(split(a, [1, 3], axis=1)[1], 2.0), [L(2, 4, 2)], None),
        ("conv2d", lambda x, w, b: ops.conv2d(x, w, b, stride=2, padding=1),
         [L(2, 4, 7, 7), L(6, 4, 3, 3), L(6)], None),
        ("conv2d_grouped", lambda x, w, b: ops.conv2d(x, w, b, padding=1, groups=4),
         [L(1, 4, 5, 5), L(4, 1, 3, 3), L(4)], None),
        ("reflect_pad", lambda x: ops.reflect_pad(x, 2, 3), [L(1, 2, 4, 5)], None),
        ("pixel_shuffle", lambda x: ops.pixel_shuffle(x, 2), [L(1, 8, 3, 3)], None),
        ("pixel_unshuffle", lambda x: ops.pixel_unshuffle(x, 2), [L(1, 2, 4, 6)], None),
        ("partition_meso", lambda x: ops.partition_meso(x, 2), [L(1, 3, 4, 6)], None),
        ("partition_global", lambda x: ops.partition_global(x, 2), [L(1, 3, 4, 6)], None),
        ("max_pool2d", lambda x: ops.max_pool2d(x, 3, 2), [distinct], None),
        ("bilinear_resize", lambda x: ops.bilinear_resize(x, 7, 5), [L(1, 2, 3, 4)], None),
        ("layer_norm", lambda x, w, b: ops.layer_norm(x, w, b), [L(3, 5), L(5), L(5)], None),
        ("linear", lambda x, w, b: ops.linear(x, w, b), [L(2, 3, 4), L(4, 5), L(5)], None),
        ("spatial_affinity", spatial_affinity, [L(2, 4, 3), L(2, 4, 3)], None),
        ("channel_attention", lambda q, k, v: channel_attention(q, k, v, 2)[0],
         [L(2, 4, 4), L(2, 4, 4), L(2, 4, 4)], None),
        ("spatial_stage", lambda x: stage_s(x)[0], [L(1, 4, 4, 4)], None),
        ("channel_stage", stage_c, [L(1, 4, 4, 4)], None),
    ]


def end_to_end_case(seed: int = 0, samples: int = 6):
    """Micro model on an 8x8 input: gradients w.r.t. the input and every parameter."""
    model = build(PRESETS["micro-grad"], seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    for p in model.parameters():  # break the zero-bias / unit-norm symmetry
        p.data = np.ascontiguousarray(p.data + 0.05 * rng.standard_normal(p.shape))
    x = Tensor(rng.random((1, 3, 8, 8)), requires_grad=True)
    params = model.parameters()

    def fn(inp, *_):
        return model(inp, training=True)

    return "asid_micro_end_to_end", fn, [x, *params], samples


def run_suite(seed: int = 0, end_to_end: bool = True, eps: float = 1e-5) -> list[CheckOutcome]:
    rng = np.random.default_rng(seed)
    cases = _cases(rng)
    if end_to_end:
        cases.append(end_to_end_case(seed))
    out = []
    for name, fn, inputs, samples in cases:
        t = time.perf_counter()
        res = gradcheck(fn, inputs, eps=eps, max_samples=samples, seed=seed)
        out.append(CheckOutcome(name, res, time.perf_counter() - t))
    return out
