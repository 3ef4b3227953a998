"""Command-line surface: synth / init / fit / render / interpolate / eval / ablate.

Every subcommand accepts ``--config FILE`` with ``section.key = value``
lines overriding pipeline defaults. Render parallelism is bounded by the
AGSV_THREADS environment variable.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace

import numpy as np

from .config import PipelineConfig, load_overrides, KERNEL_VARIANTS, SPLINE_KINDS
from . import dataio, losses, metrics, renderer, scenefile, seeding, synth, trainer


def _pipeline(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        cfg = load_overrides(args.config, cfg)
    return cfg


def _cmd_synth(args) -> int:
    if os.path.exists(args.recipe):
        recipe = synth.recipe_from_json(args.recipe)
        if args.size is not None:
            recipe.width = recipe.height = args.size
        if args.frames is not None:
            recipe.frames = args.frames
        if args.seed is not None:
            recipe.seed = args.seed
    else:
        recipe = synth.make_recipe(args.recipe, args.size, args.frames, args.seed)
    manifest = synth.generate(recipe, args.out)
    print(f"wrote {recipe.frames} frames to {manifest}")
    return 0


def _cmd_init(args) -> int:
    cfg = _pipeline(args)
    bundles = dataio.load_dataset(args.data)
    scene = seeding.build_initial_scene(bundles, args.count, cfg, seed=args.seed)
    scenefile.save_scene(args.out, scene)
    print(f"seeded {scene.count} primitives -> {args.out}")
    return 0


def _cmd_fit(args) -> int:
    cfg = _pipeline(args)
    if args.iters is not None:
        cfg = replace(cfg, train=replace(cfg.train, main_iters=args.iters))
    if args.warmup is not None:
        cfg = replace(cfg, train=replace(cfg.train, warmup_iters=args.warmup))
    bundles = dataio.load_dataset(args.data)
    if args.scene:
        scene = scenefile.load_scene(args.scene)
    else:
        scene = seeding.build_initial_scene(bundles, args.count, cfg,
                                            seed=cfg.train.seed)
    os.makedirs(args.out, exist_ok=True)
    scene, rows = trainer.train(scene, bundles, cfg,
                                metrics_path=os.path.join(args.out, "metrics.csv"))
    scenefile.save_scene(os.path.join(args.out, "scene.agsv"), scene)
    if rows:
        print(f"final: total={rows[-1][5]:.5g} psnr={rows[-1][6]:.2f} dB")
    print(f"scene -> {os.path.join(args.out, 'scene.agsv')}")
    return 0


def _dims_from_args(args):
    if args.data:
        bundles = dataio.load_dataset(args.data)
        return bundles[0].width, bundles[0].height, bundles
    if args.width and args.height:
        return args.width, args.height, None
    raise ValueError("render: provide --data or both --width and --height")


def _cmd_render(args) -> int:
    cfg = _pipeline(args)
    scene = scenefile.load_scene(args.scene)
    width, height, _ = _dims_from_args(args)
    target = renderer.render(scene, args.time, width, height, cfg.render)
    dataio.write_png(args.out + ".png", np.clip(target.rgb, 0, 1))
    dataio.write_pfm(args.out + ".pfm", target.depth)
    print(f"wrote {args.out}.png and {args.out}.pfm")
    return 0


def _cmd_interpolate(args) -> int:
    cfg = _pipeline(args)
    scene = scenefile.load_scene(args.scene)
    bundles = dataio.load_dataset(args.data)
    width, height = bundles[0].width, bundles[0].height
    f_count = len(bundles)
    if f_count < 2:
        raise ValueError("interpolate: need at least two frames")
    os.makedirs(args.out, exist_ok=True)
    k = args.factor
    written = 0
    for i in range(f_count - 1):
        t0 = dataio.frame_time(i, f_count)
        t1 = dataio.frame_time(i + 1, f_count)
        for j in range(1, k):
            t = t0 + (t1 - t0) * j / k
            target = renderer.render(scene, t, width, height, cfg.render)
            name = os.path.join(args.out, f"interp_{i:04d}_{j:02d}of{k:02d}.png")
            dataio.write_png(name, np.clip(target.rgb, 0, 1))
            written += 1
    print(f"wrote {written} in-between frames to {args.out}")
    return 0


def evaluate_scene(scene, bundles, render_cfg):
    """Per-frame (index, psnr, ssim) rows over all training frames."""
    rows = []
    for bundle in bundles:
        target = renderer.render(scene, bundle.time, bundle.width, bundle.height,
                                 render_cfg)
        pred = np.clip(target.rgb, 0, 1)
        rows.append((bundle.index, metrics.psnr(pred, bundle.rgb),
                     losses.ssim(pred, bundle.rgb)))
    return rows


def _cmd_eval(args) -> int:
    cfg = _pipeline(args)
    scene = scenefile.load_scene(args.scene)
    bundles = dataio.load_dataset(args.data)
    rows = evaluate_scene(scene, bundles, cfg.render)
    mean_psnr = float(np.mean([r[1] for r in rows]))
    mean_ssim = float(np.mean([r[2] for r in rows]))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "psnr", "ssim"])
        for frame, p, s in rows:
            writer.writerow([frame, f"{p:.6f}", f"{s:.6f}"])
        writer.writerow(["mean", f"{mean_psnr:.6f}", f"{mean_ssim:.6f}"])
    print(f"mean PSNR {mean_psnr:.2f} dB, mean SSIM {mean_ssim:.4f} -> {args.out}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = _pipeline(args)
    scene_cfg = cfg.scene
    if args.primitive:
        scene_cfg = replace(scene_cfg, variant=args.primitive)
    if args.spline:
        scene_cfg = replace(scene_cfg, spline=args.spline)
    cfg = replace(cfg, scene=scene_cfg)
    if args.iters is not None:
        cfg = replace(cfg, train=replace(cfg.train, main_iters=args.iters))
    if args.warmup is not None:
        cfg = replace(cfg, train=replace(cfg.train, warmup_iters=args.warmup))
    bundles = dataio.load_dataset(args.data)
    scene = seeding.build_initial_scene(bundles, args.count, cfg, seed=cfg.train.seed)
    os.makedirs(args.out, exist_ok=True)
    scene, rows = trainer.train(scene, bundles, cfg,
                                metrics_path=os.path.join(args.out, "metrics.csv"))
    scenefile.save_scene(os.path.join(args.out, "scene.agsv"), scene)
    eval_rows = evaluate_scene(scene, bundles, cfg.render)
    mean_psnr = float(np.mean([r[1] for r in eval_rows]))
    with open(os.path.join(args.out, "eval.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "psnr", "ssim"])
        for frame, p, s in eval_rows:
            writer.writerow([frame, f"{p:.6f}", f"{s:.6f}"])
        writer.writerow(["mean", f"{mean_psnr:.6f}", ""])
    label = args.primitive or args.spline or "default"
    print(f"ablation {label}: mean PSNR {mean_psnr:.2f} dB")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaborsplat",
        description="Fit and render videos as frequency-adaptive Gabor splats.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--recipe", required=True,
                   help=f"built-in name {sorted(synth.RECIPES)} or a JSON recipe file")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("init", help="seed an initial scene from a dataset")
    p.add_argument("--data", required=True, help="manifest.json path")
    p.add_argument("--out", required=True, help="output .agsv scene")
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_init)

    p = sub.add_parser("fit", help="optimize a scene against a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scene", help="start from an existing .agsv instead of init")
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--iters", type=int, help="override main-stage iterations")
    p.add_argument("--warmup", type=int, help="override warm-up iterations")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("render", help="render one timestamp to PNG + PFM")
    p.add_argument("--scene", required=True)
    p.add_argument("--time", type=float, required=True)
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--data", help="dataset manifest (for image dimensions)")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("interpolate", help="render in-between frames")
    p.add_argument("--scene", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--factor", type=int, required=True,
                   help="k-1 new frames per input interval")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_interpolate)

    p = sub.add_parser("eval", help="PSNR/SSIM table over training frames")
    p.add_argument("--scene", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="re-fit with a kernel or spline variant")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--primitive", choices=KERNEL_VARIANTS)
    p.add_argument("--spline", choices=SPLINE_KINDS)
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--iters", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
