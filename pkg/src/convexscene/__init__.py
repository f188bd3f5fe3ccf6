"""Convex-polytope scene toolkit.

Represents a scene as a union of blended convex polytopes fitted to a depth
map, supports primitive and camera edits, and produces the conditioning
signals a depth-to-image generator consumes: rendered primitive depth,
warped texture hints, and confidence masks, plus the matching evaluation
metrics.
"""

from .camera import CameraIntrinsics, DepthMap, RigidTransform, lift_depth, project_point
from .editing import (CorrespondenceResult, EditSession, PrimitiveTransform,
                      apply_edits, apply_transform_forward,
                      apply_transform_inverse, correspond)
from .errors import NumericalError, ValidationError
from .fitting import (FitConfig, FitReport, SampleSet, build_samples, fit,
                      normalize_depth, occupancy_loss, sweep_parts)
from .geometry import (ConvexPrimitive, HalfPlane, Scene, axis_box_primitive,
                       indicator, plane_distance, scene_sdf, smooth_sdf,
                       union_indicator)
from .hints import (ConfidenceMask, HintPackage, bilinear_sample,
                    build_hint_package, generate_hint, process_mask,
                    voronoi_inpaint)
from .metrics import (DepthAlignment, TextureReport, absrel, align_depth, psnr,
                      reprojection_report, ssim)
from .render import RenderProduct, render_scene

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics", "DepthMap", "RigidTransform", "lift_depth", "project_point",
    "CorrespondenceResult", "EditSession", "PrimitiveTransform", "apply_edits",
    "apply_transform_forward", "apply_transform_inverse", "correspond",
    "NumericalError", "ValidationError",
    "FitConfig", "FitReport", "SampleSet", "build_samples", "fit",
    "normalize_depth", "occupancy_loss", "sweep_parts",
    "ConvexPrimitive", "HalfPlane", "Scene", "axis_box_primitive", "indicator",
    "plane_distance", "scene_sdf", "smooth_sdf", "union_indicator",
    "ConfidenceMask", "HintPackage", "bilinear_sample", "build_hint_package",
    "generate_hint", "process_mask", "voronoi_inpaint",
    "DepthAlignment", "TextureReport", "absrel", "align_depth", "psnr",
    "reprojection_report", "ssim",
    "RenderProduct", "render_scene",
]
