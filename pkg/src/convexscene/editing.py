"""Primitive and camera edits plus point-cloud correspondence between views.

Correspondence links each pixel of an edited render back to the source
render: the edited pixel's 3D point is mapped into source space by the
inverse of its primitive's transform, matched against the source points of
the same primitive, and accepted when the nearest neighbor lies within
max_distance. Confidence is 1 - min(d/d_max, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .camera import RigidTransform
from .errors import ValidationError
from .geometry import ConvexPrimitive, HalfPlane, Scene
from .render import RenderProduct
from .util import kdtree_workers

DEFAULT_MAX_DISTANCE = 0.005


@dataclass(frozen=True)
class PrimitiveTransform:
    """One edit record: optional translation, y-rotation, uniform scale, delete."""

    primitive_id: int
    translation: np.ndarray | None = None
    rotation_y: float | None = None
    scale: float | None = None
    delete: bool = False

    def __post_init__(self):
        if self.translation is not None:
            t = np.asarray(self.translation, dtype=np.float64).reshape(3)
            if not np.all(np.isfinite(t)):
                raise ValidationError("translation must be finite")
            object.__setattr__(self, "translation", t)
        if self.rotation_y is not None and not math.isfinite(self.rotation_y):
            raise ValidationError("rotation angle must be finite")
        if self.scale is not None and not self.scale > 0:
            raise ValidationError("scale must be positive")

    def is_identity(self) -> bool:
        return (self.translation is None and self.rotation_y is None
                and self.scale is None and not self.delete)

    @staticmethod
    def from_dict(doc: dict) -> "PrimitiveTransform":
        known = {"primitive_id", "translate", "rotate_y", "scale", "delete"}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown transform fields: {sorted(unknown)}")
        return PrimitiveTransform(
            primitive_id=int(doc["primitive_id"]),
            translation=doc.get("translate"),
            rotation_y=doc.get("rotate_y"),
            scale=doc.get("scale"),
            delete=bool(doc.get("delete", False)),
        )

    def to_dict(self) -> dict:
        out: dict = {"primitive_id": self.primitive_id}
        if self.translation is not None:
            out["translate"] = [float(v) for v in self.translation]
        if self.rotation_y is not None:
            out["rotate_y"] = float(self.rotation_y)
        if self.scale is not None:
            out["scale"] = float(self.scale)
        if self.delete:
            out["delete"] = True
        return out


def compose_transforms(a: PrimitiveTransform, b: PrimitiveTransform) -> PrimitiveTransform:
    """Fold sequential edits into one record: translations sum, angles sum,
    scales multiply, delete latches. Exact for commuting cases; documented
    approximation otherwise."""
    if a.primitive_id != b.primitive_id:
        raise ValidationError("cannot compose transforms of different primitives")

    def _sum(x, y):
        if x is None:
            return y
        if y is None:
            return x
        return x + y

    scale = None
    if a.scale is not None or b.scale is not None:
        scale = (a.scale or 1.0) * (b.scale or 1.0)
    return PrimitiveTransform(
        primitive_id=a.primitive_id,
        translation=_sum(a.translation, b.translation),
        rotation_y=_sum(a.rotation_y, b.rotation_y),
        scale=scale,
        delete=a.delete or b.delete,
    )


# ---------------------------------------------------------------------------
# point mapping


def _rot_y(theta: float) -> np.ndarray:
    # matches the point update x' = x*c - z*s, z' = x*s + z*c
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def apply_transform_inverse(p, center, t: PrimitiveTransform):
    """Map an edited-space point back into source space.

    Order: center, subtract translation, rotate by -theta about Y, divide by
    scale, uncenter.
    """
    if t.delete:
        raise ValidationError("cannot invert a delete record")
    p = np.asarray(p, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    q = p - center
    if t.translation is not None:
        q = q - t.translation
    if t.rotation_y is not None:
        c, s = math.cos(-t.rotation_y), math.sin(-t.rotation_y)
        if q.ndim == 1:
            x, z = q[0], q[2]
            q = np.array([x * c - z * s, q[1], x * s + z * c])
        else:
            x, z = q[..., 0].copy(), q[..., 2].copy()
            q = q.copy()
            q[..., 0] = x * c - z * s
            q[..., 2] = x * s + z * c
    if t.scale is not None:
        q = q / t.scale
    return q + center


def apply_transform_forward(p, center, t: PrimitiveTransform):
    """Source-space point into edited space: the exact inverse of
    apply_transform_inverse (scale, rotate +theta, translate, in that order)."""
    if t.delete:
        raise ValidationError("cannot apply a delete record to points")
    p = np.asarray(p, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    q = p - center
    if t.scale is not None:
        q = q * t.scale
    if t.rotation_y is not None:
        c, s = math.cos(t.rotation_y), math.sin(t.rotation_y)
        if q.ndim == 1:
            x, z = q[0], q[2]
            q = np.array([x * c - z * s, q[1], x * s + z * c])
        else:
            x, z = q[..., 0].copy(), q[..., 2].copy()
            q = q.copy()
            q[..., 0] = x * c - z * s
            q[..., 2] = x * s + z * c
    if t.translation is not None:
        q = q + t.translation
    return q + center


# ---------------------------------------------------------------------------
# scene editing


def transform_primitive(prim: ConvexPrimitive, t: PrimitiveTransform) -> ConvexPrimitive:
    """Apply the forward edit to the primitive's planes and center."""
    normals = prim.normals()
    offsets = prim.offsets()
    center = prim.center.copy()
    # planes move with the same center pivot the point maps use
    if t.scale is not None:
        offsets = t.scale * offsets + (t.scale - 1.0) * (normals @ center)
    if t.rotation_y is not None:
        r = _rot_y(t.rotation_y)
        rotated = normals @ r.T
        offsets = offsets + (normals @ center) - (rotated @ center)
        normals = rotated
    if t.translation is not None:
        offsets = offsets - normals @ t.translation
        center = center + t.translation
    planes = tuple(HalfPlane(n, d) for n, d in zip(normals, offsets))
    return ConvexPrimitive(planes, prim.delta, prim.sigma, center)


def apply_edits(scene: Scene, transforms: dict[int, PrimitiveTransform],
                camera_delta: RigidTransform | None = None) -> Scene:
    """Return the edited scene; deletes tombstone, never renumber."""
    prims = list(scene.primitives)
    live = list(scene.live)
    for pid, t in transforms.items():
        if pid < 0 or pid >= len(prims):
            raise ValidationError(f"no primitive with id {pid}")
        if t.delete:
            live[pid] = False
            continue
        if not live[pid]:
            raise ValidationError(f"primitive {pid} is deleted")
        prims[pid] = transform_primitive(prims[pid], t)
    pose = scene.pose
    if camera_delta is not None:
        pose = pose.compose(camera_delta)  # delta expressed in the camera frame
    return Scene(tuple(prims), scene.camera, pose, tuple(live))


@dataclass(frozen=True)
class EditSession:
    """Source scene, accumulated transforms, and the resulting edited scene."""

    source: Scene
    transforms: dict[int, PrimitiveTransform] = field(default_factory=dict)
    camera_delta: RigidTransform | None = None

    @property
    def edited(self) -> Scene:
        return apply_edits(self.source, self.transforms, self.camera_delta)

    def with_transform(self, t: PrimitiveTransform) -> "EditSession":
        merged = dict(self.transforms)
        if t.primitive_id in merged:
            merged[t.primitive_id] = compose_transforms(merged[t.primitive_id], t)
        else:
            merged[t.primitive_id] = t
        return replace(self, transforms=merged)

    def with_camera_delta(self, delta: RigidTransform) -> "EditSession":
        combined = delta if self.camera_delta is None else self.camera_delta.compose(delta)
        return replace(self, camera_delta=combined)


# ---------------------------------------------------------------------------
# correspondence


@dataclass(frozen=True)
class CorrespondenceResult:
    """R: per-pixel continuous source coords (x, y); W: confidence in [0, 1].

    Pixels without an accepted correspondence keep R = (0, 0) and W = 0.
    A correspondence at exactly max_distance keeps its R with W = 0.
    """

    R: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        if self.R.shape[:2] != self.W.shape or self.R.shape[2] != 2:
            raise ValidationError("correspondence shapes disagree")


def correspond(src: RenderProduct, dst: RenderProduct,
               transforms: dict[int, PrimitiveTransform] | None = None,
               centers: list[np.ndarray] | np.ndarray | None = None,
               max_distance: float = DEFAULT_MAX_DISTANCE,
               transform_mode: str = "inverse") -> CorrespondenceResult:
    """Per-primitive nearest-neighbor matching of dst pixels to src pixels.

    transform_mode "inverse" maps dst (edited-space) points back to source
    space before matching; "forward" maps them source-to-edited, which is
    what warping the edited image back into the source frame needs.

    Nearest-neighbor ties break toward the lowest linear source pixel index.
    Primitives with id < 0, id >= len(centers), or absent from either map
    are skipped.
    """
    if src.depth.values.shape != dst.depth.values.shape:
        raise ValidationError("source and destination renders must share resolution")
    if max_distance <= 0:
        raise ValidationError("max_distance must be positive")
    if transform_mode not in ("inverse", "forward"):
        raise ValidationError(f"unknown transform_mode {transform_mode!r}")
    transforms = transforms or {}
    if centers is None:
        centers = []
    centers = [np.asarray(c, dtype=np.float64) for c in centers]

    h, w = dst.depth.values.shape
    R = np.zeros((h, w, 2))
    W = np.zeros((h, w))
    workers = kdtree_workers()

    src_map = src.convex_map
    dst_map = dst.convex_map
    for pid in np.unique(dst_map):
        pid = int(pid)
        if pid < 0 or pid >= len(centers):
            continue
        if pid in transforms and transforms[pid].delete:
            continue  # a deleted primitive cannot correspond anywhere
        src_sel = src_map == pid
        dst_sel = dst_map == pid
        if not src_sel.any() or not dst_sel.any():
            continue

        src_yx = np.argwhere(src_sel)  # row-major order = linear index order
        src_pts = src.points[src_sel].astype(np.float64)
        dst_yx = np.argwhere(dst_sel)
        query = dst.points[dst_sel].astype(np.float64)

        if pid in transforms:
            t = transforms[pid]
            if not t.is_identity():
                mapper = (apply_transform_inverse if transform_mode == "inverse"
                          else apply_transform_forward)
                query = mapper(query, centers[pid], t)

        tree = cKDTree(src_pts)
        dmin, imin = tree.query(query, k=1, workers=workers)
        imin = _resolve_ties(tree, query, dmin, imin)

        accept = dmin <= max_distance
        ys, xs = dst_yx[accept, 0], dst_yx[accept, 1]
        matched = src_yx[imin[accept]]
        R[ys, xs, 0] = matched[:, 1]  # x first
        R[ys, xs, 1] = matched[:, 0]
        W[ys, xs] = 1.0 - np.minimum(dmin[accept] / max_distance, 1.0)
    return CorrespondenceResult(R, W)


def _resolve_ties(tree: cKDTree, query: np.ndarray, dmin: np.ndarray,
                  imin: np.ndarray) -> np.ndarray:
    """Force the documented tie-break (lowest index) when the nearest
    distance is attained by several source points."""
    if len(query) == 0:
        return imin
    d2, i2 = tree.query(query, k=min(2, tree.n), workers=kdtree_workers())
    if tree.n < 2:
        return imin
    tied = np.flatnonzero(d2[:, 0] == d2[:, 1])
    if tied.size == 0:
        return imin
    out = imin.copy()
    for qi in tied:
        cands = tree.query_ball_point(query[qi], r=dmin[qi])
        if cands:
            out[qi] = min(cands)
    return out
