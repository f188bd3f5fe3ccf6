"""End-to-end driver: fit/load -> edit -> render -> correspond -> hint -> eval.

Every stage persists its artifacts before the next stage starts, and each
stage reads only what earlier stages persisted, so a run can be resumed or
audited file by file. The run directory is content-addressed by a hash of
all inputs and parameters: re-running with identical inputs lands in the
same directory with bit-identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import figures, formats, hints, metrics
from .camera import DepthMap
from .editing import (DEFAULT_MAX_DISTANCE, PrimitiveTransform, apply_edits,
                      correspond)
from .errors import ValidationError
from .fitting import FitConfig, fit, normalize_depth
from .render import render_scene

SCHEMA_VERSION = formats.REPORT_SCHEMA_VERSION


@dataclass(frozen=True)
class PipelineManifest:
    source_image: str
    edits: str
    out_dir: str
    scene: str | None = None
    depth: str | None = None
    camera: str | None = None
    k: int = 12
    steps: int = 2000
    seed: int = 0
    max_distance: float = DEFAULT_MAX_DISTANCE
    tau: float = hints.DEFAULT_TAU
    dilate_px: int = hints.DEFAULT_DILATE_PX
    hint_skip_threshold: float = hints.HINT_SKIP_THRESHOLD
    normalize: bool = True
    figures: bool = True

    @staticmethod
    def from_json(path) -> "PipelineManifest":
        try:
            doc = json.loads(Path(path).read_text())
            return PipelineManifest(**doc)
        except (json.JSONDecodeError, TypeError) as exc:
            raise ValidationError(f"malformed pipeline manifest {path}: {exc}") from exc


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def _validate(manifest: PipelineManifest) -> None:
    """All referenced inputs must exist and parse before any stage runs."""
    for label, path in (("source_image", manifest.source_image),
                        ("edits", manifest.edits)):
        if not Path(path).is_file():
            raise ValidationError(f"{label} not found: {path}")
    if manifest.scene:
        formats.read_scene_json(manifest.scene)
    else:
        if not (manifest.depth and manifest.camera):
            raise ValidationError("manifest needs either scene or depth + camera")
        if not Path(manifest.depth).is_file():
            raise ValidationError(f"depth not found: {manifest.depth}")
        formats.read_camera_json(manifest.camera)
    formats.read_edit_script(manifest.edits)
    formats.read_png(manifest.source_image)


def _input_hash(manifest: PipelineManifest) -> str:
    h = hashlib.sha256()
    params = asdict(manifest)
    params.pop("out_dir")
    params.pop("figures")
    h.update(json.dumps(params, sort_keys=True).encode())
    for path in (manifest.source_image, manifest.edits, manifest.scene,
                 manifest.depth, manifest.camera):
        if path:
            h.update(Path(path).read_bytes())
    return h.hexdigest()[:12]


def _write_report(path: Path, payload: dict) -> None:
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    path.write_bytes(formats.dump_json_bytes(payload))


def run_pipeline(manifest: PipelineManifest) -> Path:
    """Execute all stages; returns the content-addressed run directory."""
    _validate(manifest)
    run_dir = Path(manifest.out_dir) / _input_hash(manifest)
    run_dir.mkdir(parents=True, exist_ok=True)

    paths = {
        "scene": run_dir / "scene.json",
        "scene_edited": run_dir / "scene_edited.json",
        "fit_report": run_dir / "fit_report.json",
        "src_depth": run_dir / "render_src.depth.pfm",
        "src_convex": run_dir / "render_src.convex.cvxm",
        "src_points": run_dir / "render_src.points.pfm",
        "dst_depth": run_dir / "render_dst.depth.pfm",
        "dst_convex": run_dir / "render_dst.convex.cvxm",
        "dst_points": run_dir / "render_dst.points.pfm",
        "corr_r": run_dir / "correspondence.R.pfm",
        "corr_w": run_dir / "correspondence.W.pfm",
        "hint": run_dir / "hint.png",
        "inpainted": run_dir / "hint_inpainted.png",
        "mask": run_dir / "mask.pfm",
        "mask_png": run_dir / "mask.png",
        "geometry_report": run_dir / "geometry_report.json",
        "texture_report": run_dir / "texture_report.json",
        "metrics_csv": run_dir / "metrics.csv",
        "panel": run_dir / "panel.png",
        "manifest_copy": run_dir / "run_manifest.json",
    }

    # stage: scene (load or fit)
    try:
        if manifest.scene:
            scene = formats.read_scene_json(manifest.scene)
            formats.write_scene_json(paths["scene"], scene)
        else:
            depth = DepthMap(formats.read_pfm(manifest.depth))
            cam = formats.read_camera_json(manifest.camera)
            scale = 1.0
            if manifest.normalize:
                depth, scale = normalize_depth(depth)
            cfg = FitConfig(k=manifest.k, steps=manifest.steps, seed=manifest.seed)
            scene, report = fit(depth, cam, cfg)
            formats.write_scene_json(paths["scene"], scene)
            _write_report(paths["fit_report"], {
                "final_loss": report.final_loss, "absrel": report.absrel,
                "iterations_run": report.iterations_run,
                "wall_time": report.wall_time, "diverged": report.diverged,
                "depth_scale": scale})
    except Exception as exc:
        raise StageError("scene", exc) from exc

    # stage: edit
    try:
        scene = formats.read_scene_json(paths["scene"])
        records, camera_delta = formats.read_edit_script(manifest.edits)
        transforms = {}
        for doc in records:
            t = PrimitiveTransform.from_dict(doc)
            transforms[t.primitive_id] = t
        edited = apply_edits(scene, transforms, camera_delta)
        formats.write_scene_json(paths["scene_edited"], edited)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("edit", exc) from exc

    # stage: render both views
    try:
        src_scene = formats.read_scene_json(paths["scene"])
        dst_scene = formats.read_scene_json(paths["scene_edited"])
        src = render_scene(src_scene)
        dst = render_scene(dst_scene)
        for tag, product in (("src", src), ("dst", dst)):
            formats.write_pfm(paths[f"{tag}_depth"], product.depth.values)
            formats.write_cvxm(paths[f"{tag}_convex"], product.convex_map)
            formats.write_pfm(paths[f"{tag}_points"], product.points)
    except Exception as exc:
        raise StageError("render", exc) from exc

    # stage: correspond (edited view back to source view)
    try:
        src = _load_render(paths, "src")
        dst = _load_render(paths, "dst")
        centers = [p.center for p in src_scene.primitives]
        corr = correspond(src, dst, transforms, centers,
                          max_distance=manifest.max_distance)
        formats.write_pfm(paths["corr_r"], corr.R)
        formats.write_pfm(paths["corr_w"], corr.W)
    except Exception as exc:
        raise StageError("correspond", exc) from exc

    # stage: hint package
    try:
        src_img = formats.read_png(manifest.source_image)
        corr = _load_corr(paths)
        dst = _load_render(paths, "dst")
        package = hints.build_hint_package(
            src_img, corr, hit_mask=(~dst.hit_mask()).astype(np.int8),
            tau=manifest.tau, dilate_px=manifest.dilate_px,
            skip_threshold=manifest.hint_skip_threshold)
        formats.write_png(paths["hint"], package.hint)
        formats.write_png(paths["inpainted"], package.inpainted)
        formats.write_pfm(paths["mask"], package.mask.values)
        formats.write_png(paths["mask_png"], package.mask.values)
    except Exception as exc:
        raise StageError("hint", exc) from exc

    # stage: eval
    try:
        src = _load_render(paths, "src")
        dst = _load_render(paths, "dst")
        valid = metrics.depth_valid_mask(dst.depth.values, src.depth.values)
        geo = {
            "absrel": (metrics.absrel(dst.depth.values, src.depth.values, valid)
                       if valid.sum() >= 2 else None),
            "valid_fraction": float(valid.mean()),
        }
        _write_report(paths["geometry_report"], geo)

        # cycle direction: match source-view pixels against the edited view,
        # then warp the edited-view hint back for comparison
        rev = correspond(dst, src, transforms, centers,
                         max_distance=manifest.max_distance,
                         transform_mode="forward")
        rev_mask = hints.process_mask(rev.W, manifest.tau, manifest.dilate_px)
        dst_img = formats.read_png(paths["inpainted"])
        tex = None
        if (rev_mask.values >= 1.0).any():
            report = metrics.reprojection_report(src_img, dst_img, rev, rev_mask)
            tex = {"psnr": report.psnr, "ssim": report.ssim,
                   "valid_fraction": report.valid_fraction}
        _write_report(paths["texture_report"], {"texture": tex})

        with open(paths["metrics_csv"], "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["metric", "value"])
            writer.writerow(["geometry_absrel", geo["absrel"]])
            writer.writerow(["geometry_valid_fraction", geo["valid_fraction"]])
            if tex:
                writer.writerow(["texture_psnr", tex["psnr"]])
                writer.writerow(["texture_ssim", tex["ssim"]])
                writer.writerow(["texture_valid_fraction", tex["valid_fraction"]])
    except Exception as exc:
        raise StageError("eval", exc) from exc

    if manifest.figures:
        package_mask = formats.read_pfm(paths["mask"])
        figures.save_raster_panel([
            ("source depth", figures.depth_preview(src.depth.values)),
            ("edited depth", figures.depth_preview(dst.depth.values)),
            ("edited ids", figures.convex_preview(dst.convex_map)),
            ("hint", formats.read_png(paths["hint"])),
            ("inpainted", formats.read_png(paths["inpainted"])),
            ("mask", package_mask),
        ], paths["panel"])

    paths["manifest_copy"].write_bytes(formats.dump_json_bytes(asdict(manifest)))
    return run_dir


def _load_render(paths, tag: str):
    from .render import RenderProduct

    depth = DepthMap(formats.read_pfm(paths[f"{tag}_depth"]).astype(np.float64))
    convex = formats.read_cvxm(paths[f"{tag}_convex"])
    points = formats.read_pfm(paths[f"{tag}_points"]).astype(np.float64)
    return RenderProduct(depth, convex, points)


def _load_corr(paths):
    from .editing import CorrespondenceResult

    r = formats.read_pfm(paths["corr_r"]).astype(np.float64)
    w = formats.read_pfm(paths["corr_w"]).astype(np.float64)
    return CorrespondenceResult(r, w)
