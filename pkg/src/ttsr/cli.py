"""``ttsr`` command line: train, infer, eval, viz-transfer, gradcheck,
count-params, bench.

Every command exits 0 on success and 1 on a runtime error (usage errors exit
2); outputs are written atomically, so a failed command leaves no file behind.
``--debug`` turns on the NaN guard in the autograd tape; ``--kernels`` picks
the compiled or numpy kernel backend for the whole command.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import autograd, kernels

log = logging.getLogger("ttsr")

PARAM_TARGETS = {True: 6.42e6, False: 4.42e6}
PARAM_TOLERANCE = 0.05


def _write_text(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(text, out):
    if out:
        _write_text(out, text)
    else:
        sys.stdout.write(text)


# ---- commands ------------------------------------------------------------

def cmd_train(args):
    from .config import TrainConfig
    from .data import PairedDataset
    from .train import train

    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    dataset = PairedDataset(args.data)
    st = train(dataset, None if args.resume else cfg, out_dir=args.out, resume=args.resume)
    print(f"trained {st.step} steps, {st.epoch} epochs; outputs in {args.out}")
    return 0


def cmd_infer(args):
    from .data import load_png, save_png
    from .diagnostics import super_resolve
    from .train import load_generator

    gen, _ = load_generator(args.ckpt)
    lr, ref = load_png(args.lr), load_png(args.ref)
    if ref.shape[0] % 4 or ref.shape[1] % 4:
        raise ValueError(f"Ref extents {ref.shape[:2]} must be divisible by 4")
    sr = super_resolve(gen, lr, ref)
    save_png(sr, args.out)
    print(f"wrote {args.out} ({sr.shape[1]}x{sr.shape[0]})")
    return 0


def _eval_items(root, levels):
    from .data import load_png, make_lr
    from .diagnostics import LR_LEVEL

    root = Path(root)
    hr_dir = root / "input"
    if not hr_dir.is_dir():
        raise FileNotFoundError(f"{root}: expected an input/ subdirectory")
    ids = sorted(p.stem for p in hr_dir.glob("*.png"))
    if not ids:
        raise FileNotFoundError(f"{hr_dir}: no PNG files")
    items = []
    for i in ids:
        hr = load_png(hr_dir / f"{i}.png")
        refs = {}
        for level in levels:
            if level == LR_LEVEL:
                continue
            path = root / level / f"{i}.png"
            if not path.exists():
                raise FileNotFoundError(f"missing reference variant {level!r} for {i}: {path}")
            refs[level] = load_png(path)
        items.append({"lr": make_lr(hr), "hr": hr, "refs": refs})
    return items


def cmd_eval(args):
    from .diagnostics import relevance_level_eval, table_csv
    from .train import load_generator

    gen, _ = load_generator(args.ckpt)
    levels = [s for s in args.levels.split(",") if s]
    rows = relevance_level_eval(gen, _eval_items(args.data, levels), levels)
    _emit(table_csv(rows), args.out)
    return 0


def cmd_viz_transfer(args):
    from .data import load_png, save_png
    from .diagnostics import transferred_image_viz
    from .texture import LTE

    if args.ckpt:
        from .train import load_generator
        model = load_generator(args.ckpt)[0]
    else:
        model = LTE(np.random.default_rng(args.seed), width=args.lte_width)
    img = transferred_image_viz(load_png(args.lr), load_png(args.ref), model)
    save_png(img, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_gradcheck(args):
    from .battery import TOLERANCE, run_battery

    dt = {"f64": np.float64, "f32": np.float32}[args.dtype]
    tol = TOLERANCE[dt] if args.tol is None else args.tol
    results = run_battery(dt, seed=args.seed, include_models=not args.ops_only)
    worst = sorted(results, key=lambda r: -r[1])
    for name, err in worst[:args.top]:
        print(f"{name:32s} {err:.3e}")
    bad = [n for n, e in results if not e < tol]
    print(f"{len(results)} checks, worst {worst[0][1]:.3e}, tolerance {tol:g}: {'FAIL' if bad else 'ok'}")
    if bad:
        print("failed: " + ", ".join(bad), file=sys.stderr)
    return 1 if bad else 0


def cmd_count_params(args):
    from .network import Generator, GeneratorConfig, count_params, param_table

    blocks = tuple(int(b) for b in args.blocks.split("+"))
    cfg = GeneratorConfig(base_channels=args.channels, blocks=blocks, csfi=args.csfi,
                          lte_width=args.lte_width)
    gen = Generator(cfg)
    for name, n in param_table(gen).items():
        print(f"{name:12s} {n:>10,d}")
    total = count_params(gen)
    print(f"{'total':12s} {total:>10,d}  ({total / 1e6:.2f}M)")
    if args.assert_target:
        target = PARAM_TARGETS[args.csfi]
        if (args.channels, blocks, args.lte_width) != (64, (16, 16, 8, 4), 64):
            raise ValueError("--assert compares against the published counts; use the default architecture")
        dev = total / target - 1
        print(f"target {target / 1e6:.2f}M, deviation {dev:+.2%}")
        if abs(dev) > PARAM_TOLERANCE:
            print(f"parameter count outside +/-{PARAM_TOLERANCE:.0%}", file=sys.stderr)
            return 1
    return 0


def cmd_bench(args):
    from . import bench

    if args.backend:
        kernels.use_backend(args.backend)
    sizes = tuple(int(s) for s in args.sizes.split(","))
    rows = bench.run(sizes, args.channels, args.repeats, naive=not args.no_naive,
                     backends=not args.no_backends)
    _emit(bench.rows_csv(rows), args.out)
    if not args.no_naive:
        for s in sizes:
            print(f"# relevance speedup vs naive at {s}x{s}: {bench.speedup(rows, s * s):.1f}x", file=sys.stderr)
    return 0


# ---- parser --------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="ttsr", description=__doc__.split("\n\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p.add_argument("--debug", action="store_true", help="abort on the first non-finite tape value")
    p.add_argument("--kernels", choices=("cython", "python"), help="kernel backend (default: cython if built)")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    t = sub.add_parser("train", help="train a generator/critic pair",
                       description="Config: key = value lines named after TrainConfig fields "
                                   "(see README). Data: DIR/input/NNN.png (HR) and DIR/ref/NNN.png. "
                                   "Writes loss_log.csv, run_meta.json, epoch_NNNN.ckpt and last.ckpt under --out.")
    t.add_argument("--config", help="key=value training config (defaults if omitted)")
    t.add_argument("--data", required=True, help="dataset root with input/ and ref/")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seed", type=int, help="override the config seed")
    t.add_argument("--resume", help="checkpoint to continue from (its config is used)")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="super-resolve one LR image with a reference")
    i.add_argument("--ckpt", required=True, help="training checkpoint (TTSRCKPT format)")
    i.add_argument("--lr", required=True, help="LR input PNG")
    i.add_argument("--ref", required=True, help="reference PNG (extents divisible by 4)")
    i.add_argument("--out", required=True, help="output PNG (4x the LR extents)")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="PSNR/SSIM per reference level (CSV: level,psnr,ssim,n)",
                       description="DATA/input/NNN.png holds HR ground truth; each level L other than "
                                   "'LR' reads DATA/L/NNN.png. Level 'LR' uses the up-sampled LR image.")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--levels", default="ref,LR", help="comma-separated levels, most to least relevant")
    e.add_argument("--out", help="CSV path (stdout if omitted)")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("viz-transfer", help="transfer Ref image patches with the level-3 hard attention map")
    v.add_argument("--lr", required=True)
    v.add_argument("--ref", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--ckpt", help="use this checkpoint's texture extractor (random one if omitted)")
    v.add_argument("--seed", type=int, default=0, help="init seed for the random extractor")
    v.add_argument("--lte-width", type=int, default=64)
    v.set_defaults(func=cmd_viz_transfer)

    g = sub.add_parser("gradcheck", help="finite-difference check of every op and the full model")
    g.add_argument("--dtype", choices=("f64", "f32"), default="f64")
    g.add_argument("--tol", type=float, help="relative error bound (default 1e-5 for f64)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--top", type=int, default=10, help="worst offenders to print")
    g.add_argument("--ops-only", action="store_true", help="skip the transformer/generator/critic cases")
    g.set_defaults(func=cmd_gradcheck)

    c = sub.add_parser("count-params", help="generator parameter table")
    c.add_argument("--csfi", dest="csfi", action="store_true", default=True)
    c.add_argument("--no-csfi", dest="csfi", action="store_false")
    c.add_argument("--channels", type=int, default=64)
    c.add_argument("--blocks", default="16+16+8+4", help="residual blocks per stage")
    c.add_argument("--lte-width", type=int, default=64)
    c.add_argument("--assert", dest="assert_target", action="store_true",
                   help="fail unless within 5%% of the published count (6.42M / 4.42M)")
    c.set_defaults(func=cmd_count_params)

    b = sub.add_parser("bench", help="relevance/transfer timings as CSV (op,backend,lq,lk,seconds,throughput)",
                       description="Throughput is query-key comparisons per second for relevance and "
                                   "query patches per second for transfer.")
    b.add_argument("--sizes", default="1,8,16,32", help="comma-separated grid sides (L = side^2)")
    b.add_argument("--channels", type=int, default=16)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--backend", choices=("cython", "python"), help="kernel backend for the size sweep")
    b.add_argument("--no-naive", action="store_true", help="skip the loop oracle")
    b.add_argument("--no-backends", action="store_true", help="skip the backend comparison")
    b.add_argument("--out", help="CSV path (stdout if omitted)")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    backend, debug = kernels.BACKEND, autograd.debug_enabled()
    try:
        if args.kernels:
            kernels.use_backend(args.kernels)
        if args.debug:
            autograd.set_debug(True)
        return args.func(args)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # every failure becomes a one-line message and exit 1
        log.debug("command failed", exc_info=True)
        print(f"ttsr {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    finally:
        kernels.use_backend(backend)
        autograd.set_debug(debug)


if __name__ == "__main__":
    sys.exit(main())
