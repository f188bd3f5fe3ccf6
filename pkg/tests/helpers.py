"""Independent oracles and synthetic-scene builders shared by the tests.

Everything here is deliberately written the slow, obvious way (analytic
intersections, exhaustive searches) so it can stand as a reference
implementation against the production code paths.
"""

from __future__ import annotations

import numpy as np

from convexscene.camera import CameraIntrinsics, DepthMap
from convexscene.editing import PrimitiveTransform, apply_transform_inverse
from convexscene.geometry import Scene, axis_box_primitive


# ---------------------------------------------------------------------------
# analytic ray/box rendering


def ray_box_t(origin, direction, lo, hi):
    """Slab-method entry parameter of a ray into an axis box, or None."""
    t_near, t_far = -np.inf, np.inf
    for axis in range(3):
        o, d = origin[axis], direction[axis]
        if abs(d) < 1e-15:
            if o < lo[axis] or o > hi[axis]:
                return None
            continue
        t0 = (lo[axis] - o) / d
        t1 = (hi[axis] - o) / d
        if t0 > t1:
            t0, t1 = t1, t0
        t_near = max(t_near, t0)
        t_far = min(t_far, t1)
    if t_near > t_far or t_far < 0:
        return None
    return t_near if t_near > 0 else t_far


def analytic_box_depth(boxes, cam: CameraIntrinsics):
    """Exact depth and id maps of axis boxes seen from the identity pose.

    boxes: list of (lo, hi) world corners. Returns (DepthMap, id map).
    """
    u, v = np.meshgrid(np.arange(cam.width, dtype=np.float64),
                       np.arange(cam.height, dtype=np.float64))
    dirs = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy,
                     np.ones_like(u)], axis=-1)
    norms = np.linalg.norm(dirs, axis=-1, keepdims=True)
    dirs /= norms
    depth = np.zeros((cam.height, cam.width))
    ids = np.full((cam.height, cam.width), -1, dtype=np.int32)
    origin = np.zeros(3)
    for y in range(cam.height):
        for x in range(cam.width):
            best_t, best_i = np.inf, -1
            for i, (lo, hi) in enumerate(boxes):
                t = ray_box_t(origin, dirs[y, x], np.asarray(lo), np.asarray(hi))
                if t is not None and t < best_t:
                    best_t, best_i = t, i
            if best_i >= 0:
                depth[y, x] = best_t * dirs[y, x, 2]
                ids[y, x] = best_i
    return DepthMap(depth), ids


def box_scene(boxes, cam: CameraIntrinsics, delta=8000.0, sigma=75.0) -> Scene:
    """Scene whose smooth surfaces track the hard boxes within log(F)/delta
    (~3e-4 at the default), tight enough to compare against analytic rays."""
    prims = tuple(axis_box_primitive(lo, hi, delta=delta, sigma=sigma)
                  for lo, hi in boxes)
    return Scene(prims, cam)


# ---------------------------------------------------------------------------
# exhaustive correspondence (reference for Algorithm-style matching)


def brute_force_correspond(src_points, src_map, dst_points, dst_map,
                           transforms: dict[int, PrimitiveTransform],
                           centers, max_distance: float):
    """O(N^2) per-primitive nearest neighbor with lowest-linear-index ties."""
    h, w = dst_map.shape
    R = np.zeros((h, w, 2))
    W = np.zeros((h, w))
    for pid in np.unique(dst_map):
        pid = int(pid)
        if pid < 0 or pid >= len(centers):
            continue
        if pid in transforms and transforms[pid].delete:
            continue
        src_sel = src_map == pid
        dst_sel = dst_map == pid
        if not src_sel.any() or not dst_sel.any():
            continue
        src_yx = np.argwhere(src_sel)
        src_pts = src_points[src_sel].astype(np.float64)
        for y2, x2 in np.argwhere(dst_sel):
            q = dst_points[y2, x2].astype(np.float64)
            if pid in transforms and not transforms[pid].is_identity():
                q = apply_transform_inverse(q, centers[pid], transforms[pid])
            d = np.sqrt(((src_pts - q) ** 2).sum(axis=1))
            i_star = int(np.argmin(d))  # argmin returns the first (lowest) index
            d_min = d[i_star]
            if d_min <= max_distance:
                y1, x1 = src_yx[i_star]
                R[y2, x2] = (x1, y1)
                W[y2, x2] = 1.0 - min(d_min / max_distance, 1.0)
    return R, W


# ---------------------------------------------------------------------------
# exhaustive nearest-valid inpainting


def brute_force_voronoi(hint, conf, tau):
    """All-pairs nearest valid pixel; ties to the lowest row-major index."""
    c, h, w = hint.shape
    valid = np.argwhere(conf >= tau)
    out = np.zeros_like(hint)
    for i in range(h):
        for j in range(w):
            d2 = (valid[:, 0] - i) ** 2 + (valid[:, 1] - j) ** 2
            k = int(np.argmin(d2))  # first minimum = lowest row-major index
            vy, vx = valid[k]
            out[:, i, j] = hint[:, vy, vx]
    return out


# ---------------------------------------------------------------------------
# finite differences


def finite_difference_grads(loss_fn, normals, offsets, step=1e-5):
    """Central differences of a scalar loss over every plane parameter."""
    gn = np.zeros_like(normals)
    gd = np.zeros_like(offsets)
    for idx in np.ndindex(normals.shape):
        plus = normals.copy()
        minus = normals.copy()
        plus[idx] += step
        minus[idx] -= step
        gn[idx] = (loss_fn(plus, offsets) - loss_fn(minus, offsets)) / (2 * step)
    for idx in np.ndindex(offsets.shape):
        plus = offsets.copy()
        minus = offsets.copy()
        plus[idx] += step
        minus[idx] -= step
        gd[idx] = (loss_fn(normals, plus) - loss_fn(normals, minus)) / (2 * step)
    return gn, gd


# ---------------------------------------------------------------------------
# smooth world-space textures (gentle gradients survive resampling)


def smooth_texture(points, hit):
    """RGB in [0.05, 0.95] from low-frequency functions of world position."""
    img = np.zeros(hit.shape + (3,))
    p = points[hit]
    img[hit, 0] = 0.5 + 0.42 * np.sin(1.3 * p[:, 0] + 0.7 * p[:, 2])
    img[hit, 1] = 0.5 + 0.42 * np.sin(1.1 * p[:, 1] - 0.4 * p[:, 0] + 1.0)
    img[hit, 2] = 0.5 + 0.42 * np.cos(0.9 * p[:, 2] + 0.5 * p[:, 1])
    img = 0.5 + (img - 0.5) * 0.9
    img[~hit] = 0.0
    return np.moveaxis(img, -1, 0)  # CHW
