"""Command-line entry point: ``asid <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import accounting, data, metrics, store
from .checks import run_suite
from .errors import AsidError, ConfigError, CorruptStoreError, DataError, NumericError
from .network import ASID, PRESETS, ModelConfig, build, config_from_text, config_to_text, parse_config_text
from .tensor import Tensor
from .trainer import TrainConfig, load_checkpoint, train_loop

CONFIG_ENV = "ASID_CONFIG"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DTYPES = {"f32": np.float32, "f64": np.float64}


class UsageError(AsidError):
    category = "usage"


def exit_code(exc: AsidError) -> int:
    if isinstance(exc, (DataError, CorruptStoreError)):
        return EXIT_DATA
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return EXIT_USAGE


def _geometry(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"geometry must look like 1280x720, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("geometry must be positive")
    return w, h


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", choices=sorted(PRESETS), help="base configuration (default: asid, or the config stored in --weights)")
    common.add_argument("--config", help=f"key=value config file (default: ${CONFIG_ENV} if set)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--scale", type=int, choices=(2, 3, 4), help="upscaling factor")
    common.add_argument("--seed", type=int, default=0, help="initialisation / sampling seed")
    common.add_argument("--dtype", choices=sorted(DTYPES), default="f32", help="compute precision")
    common.add_argument("--format", choices=("text", "csv"), default="text", help="report format")
    common.add_argument("--weights", help="weight store to load instead of a fresh build")

    p = argparse.ArgumentParser(prog="asid", description="Lightweight attention-sharing SR network.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    b = sub.add_parser("build", parents=[common], help="initialise a model and write its weight store")
    b.add_argument("--out", required=True, help="output weight store")

    t = sub.add_parser("train", parents=[common], help="train on HR images (directory or manifest)")
    t.add_argument("--data", required=True, help="HR image directory or manifest")
    t.add_argument("--out", required=True, help="checkpoint path (weight store + .opt.npz sidecar)")
    t.add_argument("--resume", action="store_true", help="continue from --out")
    t.add_argument("--epochs", type=int, default=1000)
    t.add_argument("--steps-per-epoch", type=int, default=1)
    t.add_argument("--batch", type=int, default=16)
    t.add_argument("--patch", type=int, default=64, help="LR patch side")
    t.add_argument("--lr0", type=float, default=5e-4)
    t.add_argument("--period", type=int, default=250, help="halving period at 1000 epochs")
    t.add_argument("--loss", choices=("l1", "l2"), default="l1")
    t.add_argument("--no-augment", action="store_true")
    t.add_argument("--log", help="training log CSV")
    t.add_argument("--checkpoint-every", type=int, default=0)

    i = sub.add_parser("infer", parents=[common], help="super-resolve an image or a directory")
    i.add_argument("--input", required=True)
    i.add_argument("--output", required=True)

    e = sub.add_parser("eval", parents=[common], help="PSNR/SSIM (Y) on bicubic-degraded HR images")
    e.add_argument("--data", required=True, help="HR image directory or manifest")
    e.add_argument("--out", help="also write the report here")

    c = sub.add_parser("count", parents=[common], help="parameter and multiply-add report")
    c.add_argument("--geometry", type=_geometry, default=accounting.OUTPUT_720P, help="output WxH")
    c.add_argument("--depth", type=int, default=None, help="maximum tree depth to print")

    g = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient suite")
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.add_argument("--skip-end-to-end", action="store_true")

    a = sub.add_parser("ablate", parents=[common], help="component and sharing ablation tables")
    a.add_argument("--geometry", type=_geometry, default=accounting.OUTPUT_720P, help="output WxH")

    d = sub.add_parser("dump-attention", parents=[common], help="write spatial attention matrices for an image")
    d.add_argument("--input", required=True)
    d.add_argument("--out", required=True, help="output directory")
    return p


def resolve_config(args) -> ModelConfig:
    if args.preset:
        cfg = PRESETS[args.preset]
    elif args.weights:
        cfg = store.read_config(args.weights)
    else:
        cfg = PRESETS["asid"]
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from None
        cfg = config_from_text(text, cfg)
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides.update(parse_config_text(item))
    if args.scale is not None:
        overrides["scale"] = str(args.scale)
    if overrides:
        merged = cfg.to_dict()
        merged.update(overrides)
        cfg = ModelConfig.from_dict(merged)
    return cfg.validate()


def _model(args, cfg: ModelConfig) -> ASID:
    dtype = DTYPES[args.dtype]
    if args.weights:
        return store.load(args.weights, config=cfg, dtype=dtype)
    return build(cfg, seed=args.seed, dtype=dtype)


def _echo_config(cfg: ModelConfig, err) -> None:
    err.write("# resolved config\n" + config_to_text(cfg))


def _upscale(model: ASID, img: np.ndarray, dtype) -> np.ndarray:
    return data.from_nchw(model(Tensor(data.to_nchw(img, dtype))).data)


def cmd_build(args, cfg, out, err):
    model = build(cfg, seed=args.seed)
    store.save(model, args.out)
    out.write(f"wrote {args.out}: {model.num_params()} parameters\n")


def cmd_train(args, cfg, out, err):
    tcfg = TrainConfig(batch=args.batch, lr0=args.lr0, period=args.period, epochs=args.epochs,
                       steps_per_epoch=args.steps_per_epoch, seed=args.seed, loss=args.loss)
    if args.resume:
        model, opt = load_checkpoint(args.out, DTYPES[args.dtype])
        cfg = model.config
    else:
        model, opt = _model(args, cfg), None
    pairs = [data.degrade(data.load_image(p), cfg.scale) for p in data.image_paths(args.data)]
    stream = data.patch_sampler(pairs, args.patch, cfg.scale, augment=not args.no_augment, seed=args.seed)
    feed = ((lr.astype(DTYPES[args.dtype]), hr) for lr, hr in data.batches(stream, tcfg.batch))
    with data.Prefetcher(feed, maxsize=4) as batches:
        history = train_loop(model, batches, tcfg, log_path=args.log, checkpoint_path=args.out,
                             checkpoint_every=args.checkpoint_every, opt=opt)
    last = history[-1] if history else None
    out.write(f"trained {len(history)} steps; final loss {last.loss:.6g}\n" if last else "nothing to train\n")


def cmd_infer(args, cfg, out, err):
    model = _model(args, cfg)
    src, dst = Path(args.input), Path(args.output)
    jobs = [(p, dst / p.name) for p in data.list_images(src)] if src.is_dir() else [(src, dst)]
    if src.is_dir():
        dst.mkdir(parents=True, exist_ok=True)
    for inp, target in jobs:
        sr = _upscale(model, data.load_image(inp), DTYPES[args.dtype])
        data.save_image(target, sr)
        out.write(f"{inp} -> {target} ({sr.shape[1]}x{sr.shape[0]})\n")


def cmd_eval(args, cfg, out, err):
    model = _model(args, cfg)
    s = model.config.scale
    rows = []
    for path in data.image_paths(args.data):
        lr, hr = data.degrade(data.load_image(path), s)
        sr = _upscale(model, lr, DTYPES[args.dtype])
        rows.append((str(path), metrics.psnr_y(hr, sr, s), metrics.ssim_y(hr, sr, s)))
    if not rows:
        raise DataError(f"no images found in {args.data}")
    rows.sort()
    mean_p = float(np.mean([r[1] for r in rows]))
    mean_s = float(np.mean([r[2] for r in rows]))
    if args.format == "csv":
        lines = ["image,psnr_y,ssim_y"] + [f"{n},{metrics.format_db(p)},{q:.6g}" for n, p, q in rows]
        lines.append(f"mean,{metrics.format_db(mean_p)},{mean_s:.6g}")
    else:
        width = max(len(r[0]) for r in rows + [("mean", 0, 0)])
        lines = [f"{n:<{width}}  {metrics.format_db(p):>10}  {q:>9.6g}" for n, p, q in rows]
        lines.append(f"{'mean':<{width}}  {metrics.format_db(mean_p):>10}  {mean_s:>9.6g}")
    text = "\n".join(lines) + "\n"
    out.write(text)
    if args.out:
        Path(args.out).write_text(text)


def cmd_count(args, cfg, out, err):
    model = _model(args, cfg) if args.weights else ASID(cfg)
    w, h = args.geometry
    report = accounting.count_macs(model, w, h)
    if args.format == "csv":
        out.write(accounting.report_csv(report, args.depth))
    else:
        out.write(accounting.report_text(report, args.depth))
        out.write(f"total: params {accounting.human(report.params)} ({report.params}), "
                  f"macs {accounting.human(report.macs)} ({report.macs}), "
                  f"2xmacs {accounting.human(2 * report.macs)}\n")


def cmd_grad_check(args, cfg, out, err):
    if args.dtype != "f64":
        raise ConfigError("grad-check needs --dtype f64")
    outcomes = run_suite(seed=args.seed, end_to_end=not args.skip_end_to_end)
    worst = max(o.result.max_rel_error for o in outcomes)
    for o in outcomes:
        mark = "ok" if o.result.passed(args.tolerance) else "FAIL"
        out.write(f"{o.name:<24} {o.result.max_rel_error:.3e}  {mark}\n")
    out.write(f"max relative error {worst:.3e} (tolerance {args.tolerance:g})\n")
    if not worst < args.tolerance:
        raise NumericError(f"gradient check failed: max relative error {worst:.3e}")


def cmd_ablate(args, cfg, out, err):
    w, h = args.geometry
    rows = accounting.ablation_sweep(cfg, w, h)
    out.write(accounting.sweep_csv(rows) if args.format == "csv" else accounting.sweep_text(rows))


def cmd_dump_attention(args, cfg, out, err):
    model = _model(args, cfg)
    img = data.load_image(args.input)
    x = Tensor(data.to_nchw(img, DTYPES[args.dtype]))
    registry = model.new_registry()
    model(x, registry=registry)
    dst = Path(args.out)
    dst.mkdir(parents=True, exist_ok=True)
    hp, wp = model.padded_size(img.shape[0], img.shape[1])
    index = []
    for (block, depth), entry in sorted(registry.entries.items()):
        for level, size in (("meso", model.config.meso_size), ("global", model.config.global_size)):
            A = entry.level(level).data
            name = f"b{block}_d{depth}_{level}"
            A.astype("<f4").tofile(dst / f"{name}.bin")
            meta = {"block": block, "depth": depth, "level": level, "windows": A.shape[0],
                    "shape": list(A.shape), "dtype": "float32-le", "window_size": size,
                    "input_size": [img.shape[0], img.shape[1]], "padded_size": [hp, wp]}
            (dst / f"{name}.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
            index.append(name)
            out.write(f"{name}: {tuple(A.shape)}\n")
    (dst / "index.json").write_text(json.dumps(index, indent=1) + "\n")


COMMANDS = {
    "build": cmd_build, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval, "count": cmd_count,
    "grad-check": cmd_grad_check, "ablate": cmd_ablate, "dump-attention": cmd_dump_attention,
}


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    logging.basicConfig(level=logging.WARNING, format="warning: %(message)s", stream=err)
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = resolve_config(args)
        _echo_config(cfg, err)
        COMMANDS[args.command](args, cfg, out, err)
    except AsidError as exc:
        err.write(f"error: {exc.category}: {' '.join(str(exc).split())}\n")
        return exit_code(exc)
    except OSError as exc:
        err.write(f"error: data: {exc}\n")
        return EXIT_DATA
    return EXIT_OK


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
