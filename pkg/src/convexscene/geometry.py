"""Convex polytope primitives and their smooth occupancy functions.

A primitive is an intersection of half-spaces. Its smooth signed distance is
the LogSumExp of the per-plane signed distances, and a sigmoid turns that
into a soft inside/outside indicator. A scene is an ordered list of
primitives (indices are stable identifiers; deletion tombstones an entry)
plus a pinhole camera and its pose.

All types are immutable values after construction and every operation here
is a pure function, so they are safe to evaluate concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraIntrinsics, RigidTransform
from .errors import ValidationError

DEFAULT_FACES = 12
DEFAULT_DELTA = 10.0
DEFAULT_SIGMA = 75.0

# Primitive counts supported by fitted scenes; authored scenes may use any K >= 1.
SUPPORTED_PART_COUNTS = (4, 6, 8, 10, 12, 24, 36, 48, 60, 72)

_UNIT_TOL = 1e-6


@dataclass(frozen=True)
class HalfPlane:
    """One oriented plane: signed distance n.x + d, negative inside."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = float(np.linalg.norm(n))
        if not math.isfinite(norm) or norm == 0.0:
            raise ValidationError("half-plane normal must be finite and nonzero")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "offset", float(self.offset) / norm)
        if not math.isfinite(self.offset):
            raise ValidationError("half-plane offset must be finite")


def icosphere_directions(subdivisions: int = 3) -> np.ndarray:
    """Unit directions from a subdivided icosahedron (642 at 3 subdivisions)."""
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]

    for _ in range(subdivisions):
        midpoint_cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint_cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                midpoint_cache[key] = len(verts) - 1
            return midpoint_cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    return np.stack(verts)


_BOUNDEDNESS_DIRECTIONS = icosphere_directions(3)  # 642 directions


def is_bounded(normals: np.ndarray) -> bool:
    """A polytope is unbounded iff some direction decreases every plane distance.

    Tested over a fixed set of 642 sphere directions: bounded iff every
    direction has at least one plane with positive slope along it.
    """
    slopes = _BOUNDEDNESS_DIRECTIONS @ np.asarray(normals, dtype=np.float64).T
    return bool(slopes.max(axis=1).min() > 0.0)


@dataclass(frozen=True)
class ConvexPrimitive:
    """A smooth convex polytope: F half-planes, LogSumExp temperature delta,
    indicator sharpness sigma, and a center used as the edit pivot."""

    planes: tuple[HalfPlane, ...]
    delta: float = DEFAULT_DELTA
    sigma: float = DEFAULT_SIGMA
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        planes = tuple(self.planes)
        if len(planes) < 4:
            raise ValidationError(f"need at least 4 planes, got {len(planes)}")
        if not (self.delta > 0 and self.sigma > 0):
            raise ValidationError("delta and sigma must be positive")
        object.__setattr__(self, "planes", planes)
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "sigma", float(self.sigma))
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(c)):
            raise ValidationError("center must be finite")
        object.__setattr__(self, "center", c)
        if not is_bounded(self.normals()):
            raise ValidationError("polytope is unbounded")

    def normals(self) -> np.ndarray:
        return np.stack([p.normal for p in self.planes])

    def offsets(self) -> np.ndarray:
        return np.array([p.offset for p in self.planes])

    @property
    def face_count(self) -> int:
        return len(self.planes)

    @staticmethod
    def from_arrays(normals, offsets, delta=DEFAULT_DELTA, sigma=DEFAULT_SIGMA,
                    center=(0.0, 0.0, 0.0)) -> "ConvexPrimitive":
        planes = tuple(HalfPlane(n, d) for n, d in zip(np.asarray(normals), np.asarray(offsets)))
        return ConvexPrimitive(planes, delta, sigma, np.asarray(center, dtype=np.float64))


def axis_box_primitive(lo, hi, delta=DEFAULT_DELTA, sigma=DEFAULT_SIGMA,
                       faces: int = DEFAULT_FACES) -> ConvexPrimitive:
    """Axis-aligned box as 6 face planes, padded to `faces` with tangent
    45-degree corner cuts (which never cut into the box volume)."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if np.any(hi <= lo):
        raise ValidationError("box needs hi > lo on every axis")
    center = (lo + hi) / 2.0
    normals = []
    offsets = []
    for axis in range(3):
        for sign, bound in ((1.0, hi[axis]), (-1.0, lo[axis])):
            n = np.zeros(3)
            n[axis] = sign
            normals.append(n)
            offsets.append(-sign * bound)
    corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                        for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    cut_dirs = [(1, 1, 0), (-1, -1, 0), (1, 0, 1), (-1, 0, -1), (0, 1, 1), (0, -1, -1)]
    for d in cut_dirs[: max(0, faces - 6)]:
        n = np.array(d, dtype=np.float64)
        n /= np.linalg.norm(n)
        # tangent offset with a hair of margin so the cut stays outside
        reach = float((corners @ n).max())
        normals.append(n)
        offsets.append(-(reach + 1e-6))
    return ConvexPrimitive.from_arrays(np.stack(normals), np.array(offsets),
                                       delta, sigma, center)


@dataclass(frozen=True)
class Scene:
    """Ordered primitives plus the camera that observed them.

    `live` tombstones deleted primitives without renumbering, so primitive
    indices stay stable identifiers across edits.
    """

    primitives: tuple[ConvexPrimitive, ...]
    camera: CameraIntrinsics
    pose: RigidTransform = field(default_factory=RigidTransform.identity)
    live: tuple[bool, ...] = ()

    def __post_init__(self):
        prims = tuple(self.primitives)
        if len(prims) < 1:
            raise ValidationError("scene needs at least one primitive")
        live = tuple(self.live) if self.live else tuple(True for _ in prims)
        if len(live) != len(prims):
            raise ValidationError("live flags must match primitive count")
        object.__setattr__(self, "primitives", prims)
        object.__setattr__(self, "live", live)

    @property
    def k(self) -> int:
        return len(self.primitives)

    def live_ids(self) -> list[int]:
        return [i for i, alive in enumerate(self.live) if alive]

    def with_primitives(self, primitives, live=None) -> "Scene":
        return Scene(tuple(primitives), self.camera, self.pose,
                     tuple(live) if live is not None else ())

    def with_pose(self, pose: RigidTransform) -> "Scene":
        return Scene(self.primitives, self.camera, pose, self.live)


# ---------------------------------------------------------------------------
# point evaluation


def plane_distance(plane: HalfPlane, x) -> float:
    """Signed distance n.x + d; positive outside the half-space."""
    x = np.asarray(x, dtype=np.float64)
    return float(plane.normal @ x + plane.offset)


def _logsumexp(z: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(z, axis=axis, keepdims=True)
    out = m.squeeze(axis) + np.log(np.sum(np.exp(z - m), axis=axis))
    return out


def smooth_sdf(prim: ConvexPrimitive, x) -> float:
    """LogSumExp over delta-scaled plane distances (the smooth max).

    This is a delta-scaled quantity, not a metric distance; see
    normalized_sdf for the world-unit version used by the ray marcher.
    """
    x = np.asarray(x, dtype=np.float64)
    z = prim.delta * (prim.normals() @ x + prim.offsets())
    return float(_logsumexp(z))


def normalized_sdf(prim: ConvexPrimitive, x) -> float:
    """smooth_sdf rescaled to world units (1-Lipschitz along any ray)."""
    return smooth_sdf(prim, x) / prim.delta


def indicator(prim: ConvexPrimitive, x) -> float:
    """Soft inside/outside classification: sigmoid(-sigma * smooth_sdf)."""
    z = prim.sigma * smooth_sdf(prim, x)
    # stable sigmoid(-z)
    if z >= 0:
        return float(math.exp(-z) / (1.0 + math.exp(-z))) if z < 700 else 0.0
    return float(1.0 / (1.0 + math.exp(z)))


def union_indicator(scene: Scene, x) -> float:
    """Hard max of live-primitive indicators: the scene's soft occupancy."""
    ids = scene.live_ids()
    if not ids:
        raise ValidationError("all primitives are tombstoned")
    return max(indicator(scene.primitives[i], x) for i in ids)


def scene_sdf(scene: Scene, x) -> tuple[float, int]:
    """(min over live primitives of normalized smooth SDF, argmin id).

    Ties break toward the lowest id, making the result independent of
    primitive storage order up to relabeling.
    """
    ids = scene.live_ids()
    if not ids:
        raise ValidationError("all primitives are tombstoned")
    best_val, best_id = math.inf, -1
    for i in ids:
        v = normalized_sdf(scene.primitives[i], x)
        if v < best_val:
            best_val, best_id = v, i
    return best_val, best_id


# ---------------------------------------------------------------------------
# batched evaluation (shared by the renderer and the fitter)


class ScenePlanes:
    """Live-primitive plane arrays unpacked once for vectorized queries."""

    def __init__(self, scene: Scene):
        self.ids = scene.live_ids()
        if not self.ids:
            raise ValidationError("all primitives are tombstoned")
        self.normals = [scene.primitives[i].normals() for i in self.ids]
        self.offsets = [scene.primitives[i].offsets() for i in self.ids]
        self.deltas = [scene.primitives[i].delta for i in self.ids]
        self.sigmas = [scene.primitives[i].sigma for i in self.ids]

    def normalized_sdf(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-point (min_k smooth_sdf_k/delta_k, argmin primitive id)."""
        pts = np.asarray(pts, dtype=np.float64)
        vals = np.empty((pts.shape[0], len(self.ids)))
        for k, (n, d, delta) in enumerate(zip(self.normals, self.offsets, self.deltas)):
            z = delta * (pts @ n.T + d)
            vals[:, k] = _logsumexp(z, axis=1) / delta
        kmin = np.argmin(vals, axis=1)
        ids = np.asarray(self.ids, dtype=np.int32)[kmin]
        return vals[np.arange(len(pts)), kmin], ids
