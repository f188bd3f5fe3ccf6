"""Command-line surface.

Subcommands: fit, render, edit, correspond, hint, eval, sweep, pipeline,
serve. Exit codes: 0 success, 2 validation error, 3 numerical failure.
Report paths also render matplotlib figures next to their CSV/JSON output
unless --no-figures is given. BW_THREADS caps worker parallelism.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import figures, formats, hints, metrics
from .camera import DepthMap
from .editing import (DEFAULT_MAX_DISTANCE, PrimitiveTransform, apply_edits,
                      correspond)
from .errors import NumericalError, ValidationError
from .fitting import FitConfig, fit, normalize_depth, sweep_parts
from .pipeline import PipelineManifest, StageError, run_pipeline
from .render import render_scene


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc.cause, ValidationError) else 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convexscene")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit primitives to a depth map")
    p.add_argument("--depth", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--k", type=int, default=12)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("render", help="render a scene to depth/id/point rasters")
    p.add_argument("--scene", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--prefix", default="render")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("edit", help="apply an edit script to a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--edits", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("correspond", help="correspondence between two scene views")
    p.add_argument("--scene-a", required=True)
    p.add_argument("--scene-b", required=True)
    p.add_argument("--edits")
    p.add_argument("--max-distance", type=float, default=DEFAULT_MAX_DISTANCE)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_correspond)

    p = sub.add_parser("hint", help="build the texture hint package")
    p.add_argument("--src", required=True)
    p.add_argument("--scene-a", required=True)
    p.add_argument("--scene-b", required=True)
    p.add_argument("--edits")
    p.add_argument("--max-distance", type=float, default=DEFAULT_MAX_DISTANCE)
    p.add_argument("--tau", type=float, default=hints.DEFAULT_TAU)
    p.add_argument("--dilate-px", type=int, default=hints.DEFAULT_DILATE_PX)
    p.add_argument("--skip-threshold", type=float, default=hints.HINT_SKIP_THRESHOLD)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_hint)

    p = sub.add_parser("eval", help="evaluation metrics")
    eval_sub = p.add_subparsers(dest="eval_kind", required=True)

    g = eval_sub.add_parser("geometry")
    g.add_argument("--pred", required=True)
    g.add_argument("--gt", required=True)
    g.add_argument("--out")
    g.add_argument("--no-figures", action="store_true")
    g.set_defaults(func=cmd_eval_geometry)

    t = eval_sub.add_parser("texture")
    t.add_argument("--src", required=True)
    t.add_argument("--dst", required=True)
    t.add_argument("--corr", required=True, help="directory with R/W/mask rasters")
    t.add_argument("--out")
    t.set_defaults(func=cmd_eval_texture)

    p = sub.add_parser("sweep", help="fit a range of primitive counts")
    p.add_argument("--depth", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--ks", required=True, help="comma-separated counts, e.g. 4,8,12")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pipeline", help="run the full fit/edit/hint/eval pipeline")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("serve", help="run the local editing service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8732)
    p.set_defaults(func=cmd_serve)

    return parser


def _load_depth_camera(args):
    depth = DepthMap(formats.read_pfm(args.depth).astype(np.float64))
    cam = formats.read_camera_json(args.camera)
    if depth.values.shape != (cam.height, cam.width):
        raise ValidationError("depth dimensions do not match the camera")
    scale = 1.0
    if not args.no_normalize:
        depth, scale = normalize_depth(depth)
    return depth, cam, scale


def cmd_fit(args) -> int:
    depth, cam, scale = _load_depth_camera(args)
    cfg = FitConfig(k=args.k, steps=args.steps, seed=args.seed, lr=args.lr)
    scene, report = fit(depth, cam, cfg)
    formats.write_scene_json(args.out, scene)
    payload = {"schema_version": formats.REPORT_SCHEMA_VERSION,
               "final_loss": report.final_loss, "absrel": report.absrel,
               "iterations_run": report.iterations_run,
               "wall_time": report.wall_time, "diverged": report.diverged,
               "depth_scale": scale, "k": args.k, "seed": args.seed}
    report_path = Path(args.report) if args.report else Path(args.out).with_suffix(".report.json")
    report_path.write_bytes(formats.dump_json_bytes(payload))
    print(f"fit k={args.k} absrel={report.absrel:.4f} loss={report.final_loss:.6f}")
    return 0


def cmd_render(args) -> int:
    scene = formats.read_scene_json(args.scene)
    product = render_scene(scene)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_pfm(out / f"{args.prefix}.depth.pfm", product.depth.values)
    formats.write_cvxm(out / f"{args.prefix}.convex.cvxm", product.convex_map)
    formats.write_pfm(out / f"{args.prefix}.points.pfm", product.points)
    formats.write_png(out / f"{args.prefix}.depth.png",
                      figures.depth_preview(product.depth.values))
    formats.write_png(out / f"{args.prefix}.convex.png",
                      figures.convex_preview(product.convex_map))
    print(f"rendered {args.prefix}: {int(product.hit_mask().sum())} hit pixels")
    return 0


def cmd_edit(args) -> int:
    scene = formats.read_scene_json(args.scene)
    records, delta = formats.read_edit_script(args.edits)
    transforms = {}
    for doc in records:
        t = PrimitiveTransform.from_dict(doc)
        transforms[t.primitive_id] = t
    edited = apply_edits(scene, transforms, delta)
    formats.write_scene_json(args.out, edited)
    print(f"applied {len(transforms)} transform(s)")
    return 0


def _correspondence_inputs(args):
    scene_a = formats.read_scene_json(args.scene_a)
    scene_b = formats.read_scene_json(args.scene_b)
    transforms = {}
    if args.edits:
        records, _delta = formats.read_edit_script(args.edits)
        for doc in records:
            t = PrimitiveTransform.from_dict(doc)
            transforms[t.primitive_id] = t
    centers = [p.center for p in scene_a.primitives]
    return scene_a, scene_b, transforms, centers


def cmd_correspond(args) -> int:
    scene_a, scene_b, transforms, centers = _correspondence_inputs(args)
    src = render_scene(scene_a)
    dst = render_scene(scene_b)
    corr = correspond(src, dst, transforms, centers, max_distance=args.max_distance)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_pfm(out / "correspondence.R.pfm", corr.R)
    formats.write_pfm(out / "correspondence.W.pfm", corr.W)
    print(f"correspondence: {float((corr.W > 0).mean()):.1%} of pixels matched")
    return 0


def cmd_hint(args) -> int:
    scene_a, scene_b, transforms, centers = _correspondence_inputs(args)
    src_img = formats.read_png(args.src)
    src = render_scene(scene_a)
    dst = render_scene(scene_b)
    corr = correspond(src, dst, transforms, centers, max_distance=args.max_distance)
    package = hints.build_hint_package(
        src_img, corr, hit_mask=(~dst.hit_mask()).astype(np.int8),
        tau=args.tau, dilate_px=args.dilate_px, skip_threshold=args.skip_threshold)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_pfm(out / "correspondence.R.pfm", corr.R)
    formats.write_pfm(out / "correspondence.W.pfm", corr.W)
    formats.write_png(out / "hint.png", package.hint)
    formats.write_png(out / "hint_inpainted.png", package.inpainted)
    formats.write_pfm(out / "mask.pfm", package.mask.values)
    formats.write_png(out / "mask.png", package.mask.values)
    print(f"hint package written to {out}")
    return 0


def cmd_eval_geometry(args) -> int:
    pred = formats.read_pfm(args.pred).astype(np.float64)
    gt = formats.read_pfm(args.gt).astype(np.float64)
    valid = metrics.depth_valid_mask(gt, pred)
    if valid.sum() < 2:
        raise ValidationError("fewer than 2 jointly valid pixels")
    alignment = metrics.align_depth(pred, gt, valid)
    value = metrics.absrel(pred, gt, valid)
    payload = {"schema_version": formats.REPORT_SCHEMA_VERSION, "absrel": value,
               "scale": alignment.scale, "shift": alignment.shift,
               "residual": alignment.residual,
               "valid_fraction": float(valid.mean())}
    out = Path(args.out) if args.out else Path(args.pred).with_suffix(".geometry.json")
    out.write_bytes(formats.dump_json_bytes(payload))
    if not args.no_figures:
        aligned = alignment.scale * pred + alignment.shift
        err = np.zeros_like(gt)
        err[valid] = np.abs(aligned[valid] - gt[valid]) / gt[valid]
        figures.save_raster_panel([
            ("prediction", figures.depth_preview(pred)),
            ("ground truth", figures.depth_preview(gt)),
            ("relative error", np.clip(err / max(value * 4, 1e-9), 0, 1)),
        ], out.with_suffix(".png"))
    print(f"absrel={value:.5f} over {valid.sum()} pixels")
    return 0


def cmd_eval_texture(args) -> int:
    from .editing import CorrespondenceResult
    from .hints import ConfidenceMask

    src = formats.read_png(args.src)
    dst = formats.read_png(args.dst)
    corr_dir = Path(args.corr)
    corr = CorrespondenceResult(
        formats.read_pfm(corr_dir / "correspondence.R.pfm").astype(np.float64),
        formats.read_pfm(corr_dir / "correspondence.W.pfm").astype(np.float64))
    mask_path = corr_dir / "mask.pfm"
    if mask_path.is_file():
        mask = ConfidenceMask(formats.read_pfm(mask_path).astype(np.float64),
                              processed=True)
    else:
        mask = hints.process_mask(corr.W)
    report = metrics.reprojection_report(src, dst, corr, mask)
    payload = {"schema_version": formats.REPORT_SCHEMA_VERSION,
               "psnr": report.psnr, "ssim": report.ssim,
               "valid_fraction": report.valid_fraction}
    out = Path(args.out) if args.out else corr_dir / "texture_report.json"
    out.write_bytes(formats.dump_json_bytes(payload))
    print(f"psnr={report.psnr:.2f}dB ssim={report.ssim:.4f}")
    return 0


def cmd_sweep(args) -> int:
    depth, cam, _scale = _load_depth_camera(args)
    ks = [int(tok) for tok in args.ks.split(",") if tok.strip()]
    if not ks:
        raise ValidationError("--ks must list at least one count")
    reports = sweep_parts(depth, cam, ks, FitConfig(steps=args.steps, seed=args.seed))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [{"k": k, "absrel": r.absrel, "final_loss": r.final_loss,
             "iterations_run": r.iterations_run, "wall_time": r.wall_time}
            for k, r in zip(ks, reports)]
    (out / "sweep.json").write_bytes(formats.dump_json_bytes(
        {"schema_version": formats.REPORT_SCHEMA_VERSION, "results": rows}))
    with open(out / "sweep.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    if not args.no_figures:
        figures.save_absrel_vs_parts(ks, [r.absrel for r in reports],
                                     out / "sweep.png")
    for row in rows:
        print(f"k={row['k']:>3} absrel={row['absrel']:.5f}")
    return 0


def cmd_pipeline(args) -> int:
    manifest = PipelineManifest.from_json(args.manifest)
    run_dir = run_pipeline(manifest)
    print(f"pipeline artifacts in {run_dir}")
    for report in ("geometry_report.json", "texture_report.json"):
        path = run_dir / report
        if path.is_file():
            print(f"  {report}: {json.loads(path.read_text())}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
