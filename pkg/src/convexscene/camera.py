"""Pinhole camera model, rigid transforms, and depth-map lifting.

Conventions: right-handed camera frame, z forward, y down. Pixel (u, v)
addresses column u, row v, with the sample point at the integer coordinate.
A pose maps camera coordinates into world coordinates; the renderer applies
its inverse (world-to-camera) ahead of the intrinsics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValidationError("image dimensions must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError("principal point must lie inside the image")

    @staticmethod
    def centered(fx: float, fy: float, width: int, height: int) -> "CameraIntrinsics":
        return CameraIntrinsics(fx, fy, width / 2.0, height / 2.0, width, height)


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation; used for camera poses and camera deltas."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValidationError("rigid transform must be finite")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-5):
            raise ValidationError("rotation must be orthonormal")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -(rt @ self.translation))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self applied after other: (self*other)(x) = self(other(x))."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def is_identity(self) -> bool:
        return bool(np.allclose(self.rotation, np.eye(3)) and
                    np.allclose(self.translation, 0.0))


@dataclass(frozen=True)
class DepthMap:
    """H x W depth along camera z, world units. Invalid pixels are 0."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValidationError("depth map must be 2-D")
        if not np.all(np.isfinite(v)):
            raise ValidationError("depth map must be finite")
        if np.any(v < 0):
            raise ValidationError("negative depths are not allowed; use 0 for invalid")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def valid_mask(self) -> np.ndarray:
        return self.values > 0


def pixel_grid(cam: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """(u, v) coordinate arrays of shape H x W."""
    u = np.arange(cam.width, dtype=np.float64)
    v = np.arange(cam.height, dtype=np.float64)
    return np.meshgrid(u, v)


def lift_depth(depth: DepthMap, cam: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Back-project a depth map to camera-frame 3D points.

    Returns (points H x W x 3, valid H x W). Invalid pixels map to (0,0,0):
    X = (u - cx) d / fx, Y = (v - cy) d / fy, Z = d.
    """
    if depth.values.shape != (cam.height, cam.width):
        raise ValidationError(
            f"depth {depth.values.shape} does not match camera "
            f"{(cam.height, cam.width)}")
    u, v = pixel_grid(cam)
    d = depth.values
    pts = np.zeros((cam.height, cam.width, 3))
    pts[..., 0] = (u - cam.cx) * d / cam.fx
    pts[..., 1] = (v - cam.cy) * d / cam.fy
    pts[..., 2] = d
    valid = depth.valid_mask()
    pts[~valid] = 0.0
    return pts, valid


def project_point(cam: CameraIntrinsics, p) -> tuple[float, float]:
    """Camera-frame point to continuous pixel coordinates (u, v)."""
    p = np.asarray(p, dtype=np.float64).reshape(3)
    if p[2] <= 0:
        raise ValidationError("cannot project a point with non-positive depth")
    return (float(cam.fx * p[0] / p[2] + cam.cx),
            float(cam.fy * p[1] / p[2] + cam.cy))


def project_points(cam: CameraIntrinsics, pts: np.ndarray) -> np.ndarray:
    """Vectorized project_point; rows with z <= 0 come back as NaN."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    out = np.full((len(pts), 2), np.nan)
    ok = pts[:, 2] > 0
    out[ok, 0] = cam.fx * pts[ok, 0] / pts[ok, 2] + cam.cx
    out[ok, 1] = cam.fy * pts[ok, 1] / pts[ok, 2] + cam.cy
    return out
