"""Acceptance gate: every criterion at its stated tolerance, one summary line each."""

import math
import sys
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import ACCEPTANCE
from asid import data, metrics, ops
from asid.accounting import ablation_sweep, count_macs, count_params
from asid.attention import SpatialAttention
from asid.blocks import IdbConfig
from asid.checks import run_suite
from asid.layers import init_parameters
from asid.network import ASID, PRESETS, ModelConfig, build
from asid.tensor import Tensor, concat, count_ops, softmax, split
from asid.trainer import TrainConfig, train_loop


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def within(value, target, tol):
    return abs(value - target) <= tol * target


def test_criterion_01_parameter_reproduction():
    t = time.perf_counter()
    cases = {"x2": (ModelConfig(), 298_000), "x3": (ModelConfig(scale=3), 304_000),
             "x4": (ModelConfig(scale=4), 313_000), "D8 x2": (ModelConfig(blocks=8), 732_000)}
    got = {k: count_params(ASID(cfg)).params for k, (cfg, _) in cases.items()}
    elapsed = time.perf_counter() - t
    ok = all(within(got[k], target, 0.08) for k, (_, target) in cases.items()) and elapsed < 1.0
    detail = ", ".join(f"{k} {got[k]} vs {cases[k][1]}" for k in cases)
    record(1, ok, f"{detail} (+-8%, {elapsed:.2f}s)")


def test_criterion_02_upsampler_scale_deltas():
    p = {s: count_params(ASID(ModelConfig(scale=s))).params for s in (2, 3, 4)}
    d3, d4 = p[3] - p[2], p[4] - p[2]
    record(2, d3 == 6_495 and d4 == 15_588, f"x3-x2 = {d3} (6495), x4-x2 = {d4} (15588)")


def test_criterion_03_mac_reproduction():
    m4 = count_macs(ASID(ModelConfig(scale=4)), 1280, 720).macs
    m2 = count_macs(ASID(ModelConfig()), 1280, 720).macs
    ok = within(m4, 17.2e9, 0.15) and within(m2, 63.592e9, 0.15)
    record(3, ok, f"x4@720p {m4 / 1e9:.4f}G vs 17.2G, x2@720p {m2 / 1e9:.4f}G vs 63.592G (+-15%)")


def test_criterion_04_ablation_ordering():
    rows = {r.variant: r.params for r in ablation_sweep()}
    targets = {"baseline": 288_000, "ID+AS+CS": 298_000, "ID+CS": 316_000, "ID+AS": 365_000, "ID": 401_000}
    order = ["baseline", "ID+AS+CS", "ID+CS", "ID+AS", "ID"]
    strict = all(rows[a] < rows[b] for a, b in zip(order, order[1:]))
    each = all(within(rows[k], v, 0.10) for k, v in targets.items())
    as_saving = rows["ID"] - rows["ID+AS"]
    cs_saving = rows["ID"] - rows["ID+CS"]
    ok = (strict and each and within(as_saving, 36_000, 0.30) and within(cs_saving, 85_000, 0.30)
          and rows["InterGroup"] < rows["IntraGroup"])
    detail = " < ".join(f"{k} {rows[k]}" for k in order)
    record(4, ok, f"{detail}; AS saving {as_saving} (36K+-30%), CS saving {cs_saving} (85K+-30%), "
                  f"Inter {rows['InterGroup']} < Intra {rows['IntraGroup']}")


def test_criterion_05_gradient_suite():
    t = time.perf_counter()
    outcomes = run_suite()
    elapsed = time.perf_counter() - t
    worst = max(outcomes, key=lambda o: o.result.max_rel_error)
    ok = worst.result.max_rel_error < 1e-4 and elapsed < 120 and any(o.name.endswith("end_to_end") for o in outcomes)
    record(5, ok, f"{len(outcomes)} checks in f64, worst {worst.name} {worst.result.max_rel_error:.2e} "
                  f"(< 1e-4), {elapsed:.1f}s (< 120s)")


def test_criterion_06_sharing_exactness():
    dim = 24
    prod = SpatialAttention(dim, 8, 8, 2.25, producer=True)
    cons = SpatialAttention(dim, 8, 8, 2.25, producer=False)
    init_parameters(prod, 0)
    init_parameters(cons, 1)
    src = dict(prod.named_parameters())
    for name, p in cons.named_parameters():
        p.data = src[name].data.copy()
    x = Tensor(np.random.default_rng(0).random((1, dim, 16, 16)).astype(np.float32))
    y_p, entry = prod(x)
    with count_ops() as c:
        y_c, _ = cons(x, entry)
    bitwise = np.array_equal(y_p.numpy(), y_c.numpy())
    record(6, bitwise and c["softmax"] == 0,
           f"consumer output bitwise equal: {bitwise}; consumer softmax calls: {c['softmax']}")


def _partition_round_trip(size, hm, wm):
    x = np.random.default_rng(size + hm + wm).standard_normal((2, 3, size * hm, size * wm))
    H, W = x.shape[2:]
    for part, merge in ((ops.partition_meso, ops.merge_meso), (ops.partition_global, ops.merge_global)):
        assert np.array_equal(merge(part(Tensor(x), size), size, 2, H, W).numpy(), x)


@st.composite
def _idb(draw):
    r, units = draw(st.integers(1, 16)), draw(st.integers(1, 5))
    return IdbConfig(channels=r * (units - 1) + draw(st.integers(r + 1, 4 * r + 8)), refined_width=r,
                     units=units, se_ratio=1, cam_heads=1, channel_split=draw(st.booleans()))


def test_criterion_07_structural_invariants():
    checks = []

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 3), st.integers(1, 3))
    def partition(size, hm, wm):
        _partition_round_trip(size, hm, wm)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
    def shuffle(r, c, h):
        x = np.random.default_rng(r * c * h).standard_normal((1, c * r * r, h, h + 1))
        assert np.array_equal(ops.pixel_unshuffle(ops.pixel_shuffle(Tensor(x), r), r).numpy(), x)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(1, 6), min_size=1, max_size=5))
    def split_concat(widths):
        x = Tensor(np.random.default_rng(len(widths)).standard_normal((2, sum(widths), 3)))
        assert np.array_equal(concat(split(x, widths, axis=1), axis=1).numpy(), x.numpy())

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 9), st.floats(0.1, 30))
    def softmax_rows(n, k, spread):
        x = np.random.default_rng(n * k).standard_normal((n, k)) * spread
        np.testing.assert_allclose(softmax(Tensor(x)).numpy().sum(-1), 1.0, atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(_idb())
    def bookkeeping(cfg):
        cfg.validate()
        w, a = cfg.unit_widths(), cfg.attention_widths()
        assert w[0] == cfg.channels and cfg.refined_width * (cfg.units - 1) + w[-1] == cfg.channels
        assert all(x - y == cfg.refined_width for x, y in zip(w, w[1:]))
        assert a == (w if not cfg.channel_split else [x - cfg.refined_width for x in w[:-1]] + [w[-1]])
        assert all(x > 0 for x in a)

    for name, fn in (("partition", partition), ("pixel-shuffle", shuffle), ("split/concat", split_concat),
                     ("softmax rows", softmax_rows), ("channel bookkeeping x100", bookkeeping)):
        try:
            fn()
            checks.append((name, True))
        except AssertionError:
            checks.append((name, False))
    record(7, all(ok for _, ok in checks), ", ".join(f"{n} {'ok' if ok else 'FAILED'}" for n, ok in checks))


def test_criterion_08_metric_oracle():
    img = np.random.default_rng(0).random((32, 32, 3))
    ident_psnr, ident_ssim = metrics.psnr_y(img, img, 2), metrics.ssim_y(img, img, 2)
    plane = np.full((24, 24), 0.4)
    offset = metrics.psnr(plane, plane + 16 / 255)
    k = [float(data.cubic(t)) for t in (0.0, 0.5, 1.0)]
    ok = (math.isinf(ident_psnr) and ident_ssim == 1.0 and abs(offset - 24.05) <= 0.01
          and all(abs(a - b) <= 1e-9 for a, b in zip(k, (1.0, 0.5625, 0.0))))
    record(8, ok, f"identical -> psnr {metrics.format_db(ident_psnr)}, ssim {ident_ssim}; "
                  f"16/255 offset -> {offset:.4f} dB (24.05+-0.01); kernel(0, .5, 1) = {k}")


def test_criterion_09_desk_scale_learning():
    rng = np.random.default_rng(0)
    # four smooth synthetic HR patches, bicubic-degraded
    pairs = [data.degrade(np.clip(data.bicubic_resize(rng.random((8, 8, 3)), 4), 0, 1), 2) for _ in range(4)]
    lr = np.concatenate([data.to_nchw(a) for a, _ in pairs])
    hr = np.concatenate([data.to_nchw(b) for _, b in pairs])
    model = build(PRESETS["micro"], seed=0)
    best = {"psnr": -math.inf, "step": None}

    class Reached(Exception):
        pass

    def evaluate(m):
        return metrics.psnr(m(Tensor(lr)).numpy(), hr)

    def watch(entry):
        if entry.psnr is not None:
            best["psnr"] = max(best["psnr"], entry.psnr)
            if entry.psnr >= 35.0:
                best["step"] = entry.step
                raise Reached

    def feed():
        while True:
            yield lr, hr

    t = time.perf_counter()
    try:
        train_loop(model, feed(), TrainConfig(batch=4, lr0=2e-3, epochs=2000), evaluate=evaluate,
                   eval_every=25, on_step=watch)
    except Reached:
        pass
    elapsed = time.perf_counter() - t
    ok = best["step"] is not None and elapsed < 600
    record(9, ok, f"micro (C=16, N=2) on 4 pairs: {best['psnr']:.2f} dB at step {best['step']} "
                  f"(>= 35 dB within 2000), {elapsed:.0f}s")


def test_criterion_10_full_training_not_reproducible():
    ACCEPTANCE[10] = ("criterion 10: N/A   benchmark PSNR/SSIM tables and accuracy curves need ~1000-epoch "
                      "DIV2K training; not reproducible at desk scale (criteria 5-9 substitute)")
    pytest.skip("full-scale benchmark accuracy is out of reach at desk scale")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-rs"]))
