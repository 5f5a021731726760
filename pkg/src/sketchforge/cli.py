"""Command-line pipeline: fit an image to strokes, re-render saved models,
and compile them to plotter G-code.

Every fit writes a manifest.json holding the fully resolved configuration;
`fit --from-manifest` replays it, and with --deterministic two replays are
byte-identical.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from . import losses as losses_mod
from .canvas import load_image, resize_bilinear, save_ppm
from .errors import FormatError, NumericAbort, ValidationError
from .estimator import resolve_encoder
from .export import (
    model_to_svg,
    model_to_toolpath,
    order_strokes,
    pen_up_travel,
    simulate_gcode,
    toolpath_to_gcode,
)
from .optimizer import OptimConfig, init_model, optimise
from .primitives import model_from_json, model_to_json
from .rasterizer import RasterConfig, rasterize

PRESETS = {
    "paper-points": {"points": 2000, "lines": 0, "splines": 0},
    "paper-lines": {"points": 0, "lines": 1000, "splines": 0},
    "paper-splines": {"points": 0, "lines": 0, "splines": 500},
}


def _parse_wh(text: str, what: str) -> tuple[float, float]:
    try:
        w, h = text.lower().split("x")
        return float(w), float(h)
    except ValueError as exc:
        raise ValidationError(f"{what} must look like WxH, got {text!r}") from exc


def _threads_from(args) -> int:
    if getattr(args, "deterministic", False):
        return 1
    if args.threads is not None:
        return max(int(args.threads), 1)
    env = os.environ.get("SKETCHFORGE_THREADS")
    if env:
        try:
            return max(int(env), 1)
        except ValueError:
            raise ValidationError(f"SKETCHFORGE_THREADS must be an integer, got {env!r}")
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sketchforge",
        description="Optimise a stroke budget to match an image, then export "
        "SVG and pen-plotter G-code.",
    )
    parser.add_argument("--version", action="version", version=f"sketchforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="optimise strokes against an image")
    fit.add_argument("--image", help="target image (PNG or P6 PPM)")
    fit.add_argument("--from-manifest", help="replay a previous run's manifest.json")
    fit.add_argument("--points", type=int, default=0, help="number of point primitives")
    fit.add_argument("--lines", type=int, default=0, help="number of straight-line primitives")
    fit.add_argument("--splines", type=int, default=0, help="number of Catmull-Rom primitives")
    fit.add_argument("--preset", choices=sorted(PRESETS),
                     help="primitive budget preset (explicit counts win)")
    fit.add_argument("--loss", choices=["mse", "pyramid", "feature"], default="mse")
    fit.add_argument("--pyramid-levels", type=int, default=3)
    fit.add_argument("--encoder", default="random:0",
                     help="feature-loss encoder: SKW1 path or random:SEED")
    fit.add_argument("--taps", help="comma-separated encoder tap layer indices")
    fit.add_argument("--feature-weights", help="comma-separated per-tap loss weights")
    fit.add_argument("--no-lpips-norm", action="store_true",
                     help="disable per-pixel feature normalisation")
    fit.add_argument("--mse-weight", type=float, default=0.0,
                     help="add this much pixel MSE to the feature loss")
    fit.add_argument("--iters", type=int, default=2000)
    fit.add_argument("--lr", type=float, default=0.01)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--resolution", default="256x256", help="working resolution WxH")
    fit.add_argument("--sigma-start", type=float, default=8.0, help="initial softness, px")
    fit.add_argument("--sigma-end", type=float, default=1.0, help="final softness, px")
    fit.add_argument("--colour", choices=["gray", "rgb"], default="gray",
                     help="gray uses darken-min ink compositing; rgb soft-over "
                     "(grayscale conversion is Rec. 709 luma)")
    fit.add_argument("--init", choices=["random_uniform", "grid", "saliency"],
                     default="random_uniform")
    fit.add_argument("--fixed-colour", action="store_true",
                     help="keep initial colours instead of learning them")
    fit.add_argument("--snapshot-every", type=int, default=0)
    fit.add_argument("--out-dir", required=True)
    fit.add_argument("--threads", type=int, default=None)
    fit.add_argument("--deterministic", action="store_true",
                     help="force serial reductions for bit-exact replays")

    plot = sub.add_parser("plot", help="compile a model JSON to G-code")
    plot.add_argument("model", help="model JSON produced by fit")
    plot.add_argument("--bed", default="200x200", help="bed size in mm, WxH")
    plot.add_argument("--margin", type=float, default=10.0)
    plot.add_argument("--order", choices=["identity", "greedy_nn", "greedy_2opt"],
                      default="greedy_2opt")
    plot.add_argument("--flatten-tol", type=float, default=0.05,
                      help="max spline flattening deviation, mm")
    plot.add_argument("--feed-draw", type=float, default=1500.0)
    plot.add_argument("--feed-travel", type=float, default=3000.0)
    plot.add_argument("--pen-up-z", type=float, default=5.0)
    plot.add_argument("--pen-down-z", type=float, default=0.0)
    plot.add_argument("--out", help="output .gcode path (default: model stem + .gcode)")

    render = sub.add_parser("render", help="rasterise a model JSON to PPM and SVG")
    render.add_argument("model")
    render.add_argument("--resolution", help="render resolution WxH (default: model canvas)")
    render.add_argument("--sigma", type=float, default=1.0,
                        help="softness in px (default: the schedule end value)")
    render.add_argument("--out-dir", required=True)
    render.add_argument("--size-mm", default="200x200", help="SVG physical size WxH in mm")

    return parser


def _fit_args_from_manifest(path: str, parser: argparse.ArgumentParser,
                            out_dir: str | None) -> argparse.Namespace:
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read manifest {path!r}: {exc}") from exc
    argv = ["fit"]
    for key, value in manifest["args"].items():
        flag = "--" + key.replace("_", "-")
        if isinstance(value, bool):
            if value:
                argv.append(flag)
        elif value is not None:
            argv.extend([flag, str(value)])
    if not out_dir:
        raise ValidationError("--out-dir is required when replaying a manifest")
    argv.extend(["--out-dir", out_dir])
    return parser.parse_args(argv)


def cmd_fit(args, parser) -> int:
    if args.from_manifest:
        args = _fit_args_from_manifest(args.from_manifest, parser, args.out_dir)
    if not args.image:
        raise ValidationError("fit requires --image (or --from-manifest)")

    counts = {"points": args.points, "lines": args.lines, "splines": args.splines}
    if args.preset and all(v == 0 for v in counts.values()):
        counts = dict(PRESETS[args.preset])
    elif args.preset:
        preset = PRESETS[args.preset]
        counts = {k: counts[k] if counts[k] else preset[k] for k in counts}
    if all(v == 0 for v in counts.values()):
        raise ValidationError("no primitives requested: set --points/--lines/--splines "
                              "or choose a --preset")

    res_w, res_h = _parse_wh(args.resolution, "--resolution")
    res_w, res_h = int(res_w), int(res_h)
    colour_mode = "grayscale" if args.colour == "gray" else "rgb"
    if not os.path.exists(args.image):
        raise ValidationError(f"image not found: {args.image}")
    target = load_image(args.image, colour_mode)
    if (target.canvas.width, target.canvas.height) != (res_w, res_h):
        target = type(target)(canvas=resize_bilinear(target.canvas, res_w, res_h),
                              source_path=target.source_path, colour_mode=colour_mode)

    threads = _threads_from(args)
    cfg = OptimConfig(
        iterations=args.iters, lr=args.lr, sigma_start_px=args.sigma_start,
        sigma_end_px=args.sigma_end, seed=args.seed, snapshot_every=args.snapshot_every,
        init=args.init, compose="darken_min" if args.colour == "gray" else "soft_over",
        learn_colour=not args.fixed_colour, threads=threads,
    )

    if args.loss == "mse":
        spec = losses_mod.LossSpec(kind="mse")
    elif args.loss == "pyramid":
        spec = losses_mod.LossSpec(kind="pyramid_mse", pyramid_levels=args.pyramid_levels)
    else:
        net = resolve_encoder(args.encoder, target.canvas.channels)
        if args.taps:
            net = net.with_taps(tuple(int(t) for t in args.taps.split(",")))
        weights = None
        if args.feature_weights:
            weights = np.array([float(w) for w in args.feature_weights.split(",")])
        spec = losses_mod.LossSpec(kind="feature", feature_encoder=net,
                                   feature_weights=weights,
                                   lpips_normalise=not args.no_lpips_norm,
                                   mse_weight=args.mse_weight)

    os.makedirs(args.out_dir, exist_ok=True)
    manifest = {
        "command": "fit",
        "versions": {"sketchforge": __version__, "numpy": np.__version__},
        "args": {
            "image": os.path.abspath(args.image),
            "points": counts["points"], "lines": counts["lines"],
            "splines": counts["splines"],
            "loss": args.loss, "pyramid_levels": args.pyramid_levels,
            "encoder": args.encoder, "taps": args.taps,
            "feature_weights": args.feature_weights,
            "no_lpips_norm": args.no_lpips_norm, "mse_weight": args.mse_weight,
            "iters": args.iters, "lr": args.lr, "seed": args.seed,
            "resolution": f"{res_w}x{res_h}",
            "sigma_start": args.sigma_start, "sigma_end": args.sigma_end,
            "colour": args.colour, "init": args.init,
            "fixed_colour": args.fixed_colour,
            "snapshot_every": args.snapshot_every,
            "deterministic": args.deterministic,
        },
    }
    with open(os.path.join(args.out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)

    model = init_model(target, counts["points"], counts["lines"], counts["splines"], cfg)
    report = optimise(target, model, spec, cfg, out_dir=args.out_dir)

    with open(os.path.join(args.out_dir, "model.json"), "w") as fh:
        fh.write(model_to_json(report.final_model))
    final_cfg = RasterConfig(sigma_px=cfg.sigma_end_px, compose=cfg.compose, threads=threads)
    final_render, _ = rasterize(report.final_model, final_cfg)
    save_ppm(final_render, os.path.join(args.out_dir, "final.ppm"))
    with open(os.path.join(args.out_dir, "final.svg"), "w") as fh:
        fh.write(model_to_svg(report.final_model, 200.0, 200.0))
    with open(os.path.join(args.out_dir, "loss.csv"), "w") as fh:
        fh.write("iteration,loss\n")
        for it, value in report.loss_history:
            fh.write(f"{it},{value!r}\n")

    first = report.loss_history[0][1]
    last = report.loss_history[-1][1]
    print(f"fit: {len(report.loss_history)} iterations, loss {first:.6g} -> {last:.6g}, "
          f"{report.wall_time_s:.1f}s")
    print(f"fit: outputs in {args.out_dir}")
    return 0


def cmd_plot(args) -> int:
    if not os.path.exists(args.model):
        raise ValidationError(f"model not found: {args.model}")
    with open(args.model) as fh:
        model = model_from_json(fh.read())
    bed_w, bed_h = _parse_wh(args.bed, "--bed")
    tp = model_to_toolpath(model, bed_w, bed_h, args.margin, args.flatten_tol)
    before = pen_up_travel(tp)
    ordered = order_strokes(tp, args.order)
    after = pen_up_travel(ordered)
    prog = toolpath_to_gcode(ordered, feed_draw_mm_min=args.feed_draw,
                             feed_travel_mm_min=args.feed_travel,
                             pen_up_z=args.pen_up_z, pen_down_z=args.pen_down_z)
    out = args.out or os.path.splitext(args.model)[0] + ".gcode"
    with open(out, "w", newline="\n") as fh:
        fh.write(prog.text())
    print(f"plot: {len(ordered.strokes)} strokes, pen-up travel "
          f"{before:.1f} mm -> {after:.1f} mm ({args.order})")
    print(f"plot: pen-down {prog.stats.pen_down_mm:.1f} mm, "
          f"{prog.stats.command_count} commands -> {out}")
    return 0


def cmd_render(args) -> int:
    if not os.path.exists(args.model):
        raise ValidationError(f"model not found: {args.model}")
    with open(args.model) as fh:
        model = model_from_json(fh.read())
    if not model.primitives:
        raise ValidationError("model has no primitives to render")
    if args.resolution:
        w, h = _parse_wh(args.resolution, "--resolution")
        model.canvas_w, model.canvas_h = int(w), int(h)
    compose = "darken_min" if model.channels == 1 else "soft_over"
    cfg = RasterConfig(sigma_px=args.sigma, compose=compose)
    canvas, _ = rasterize(model, cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    save_ppm(canvas, os.path.join(args.out_dir, "render.ppm"))
    svg_w, svg_h = _parse_wh(args.size_mm, "--size-mm")
    with open(os.path.join(args.out_dir, "render.svg"), "w") as fh:
        fh.write(model_to_svg(model, svg_w, svg_h))
    print(f"render: {model.canvas_w}x{model.canvas_h} -> {args.out_dir}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "fit":
            return cmd_fit(args, parser)
        if args.command == "plot":
            return cmd_plot(args)
        return cmd_render(args)
    except NumericAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, FormatError, IOError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
