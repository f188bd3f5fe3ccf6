"""Fitting convex primitives to a depth map by first-order optimization.

The supervision is purely geometric: 3D samples drawn on, in front of, and
behind the lifted depth surface, with occupancy targets 0.5 / 0 / 1. The
union used for training is a p-norm smooth max over per-primitive
indicators so that gradients reach non-winning primitives (rendering keeps
the hard max). Gradients with respect to every plane normal and offset are
computed analytically; an Adam loop updates the planes and re-normalizes
them after every step.

Initialization clusters the lifted surface points with seeded k-means and
starts each primitive as the cluster's inflated bounding box. Depth inputs
are expected in normalized units (95th-percentile depth = 1); see
normalize_depth.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .camera import CameraIntrinsics, DepthMap, lift_depth
from .errors import NumericalError, ValidationError
from .geometry import (DEFAULT_DELTA, DEFAULT_SIGMA, ConvexPrimitive, Scene,
                       axis_box_primitive)
from .metrics import absrel, depth_valid_mask
from .render import render_scene

UNION_PNORM = 8.0
INRADIUS_MIN = 0.01
BOX_INFLATE = 1.02
# Surface residuals beyond this are written off instead of corrected.
# Samples on a sharp crease always read "outside" the smooth shape (the
# LogSumExp overshoots by up to log F near edges); left quadratic, they
# push every nearby plane outward and displace the optimum from the true
# geometry.
SURFACE_TRIM = 0.45


def _min_half_extent(delta: float) -> float:
    """Smallest init box with a saturated interior indicator.

    LogSumExp over F faces only goes negative once delta * half_extent
    clears log F, so boxes thinner than ~3/delta start smooth-empty and
    give the optimizer nothing to hold on to.
    """
    return max(3.0 / delta, 0.02)


@dataclass(frozen=True)
class SampleSet:
    """Labelled 3D samples: on the surface, in free space along the ray
    (target 0), and just behind the surface (target 1)."""

    surface_pts: np.ndarray
    free_pts: np.ndarray
    interior_pts: np.ndarray


@dataclass(frozen=True)
class FitConfig:
    k: int = 12
    steps: int = 2000
    lr: float = 5e-3
    lambda_surf: float = 1.0
    lambda_occ: float = 1.0
    lambda_aux: float = 0.1
    seed: int = 0
    n_per_class: int = 8192
    resample_every: int = 200
    delta: float = 60.0
    sigma: float = DEFAULT_SIGMA
    sigma_start: float = 8.0  # soft start; annealed up to sigma (coarse-to-fine)

    def __post_init__(self):
        if self.k < 1 or self.steps < 1:
            raise ValidationError("k and steps must be positive")
        for name in ("lr", "lambda_surf", "lambda_occ", "lambda_aux",
                     "n_per_class", "resample_every", "delta", "sigma",
                     "sigma_start"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")

    def sigma_at(self, step: int) -> float:
        """Geometric ramp from sigma_start to sigma across the run.

        A soft indicator has a wide gradient basin (the sigmoid saturates
        exactly ~37/(sigma*delta) from a plane); a sharp one pins planes
        tightly. Annealing gets both.
        """
        lo = min(self.sigma_start, self.sigma)
        if self.steps <= 1 or lo == self.sigma:
            return self.sigma
        frac = step / (self.steps - 1)
        return float(lo * (self.sigma / lo) ** frac)

    def lr_at(self, step: int) -> float:
        """Exponential decay to lr/50; Adam steps scale with lr, so planes
        stop wandering once the live gradients go sparse."""
        if self.steps <= 1:
            return self.lr
        return float(self.lr * (0.02 ** (step / (self.steps - 1))))


@dataclass(frozen=True)
class FitReport:
    final_loss: float
    absrel: float
    iterations_run: int
    wall_time: float
    diverged: bool = False
    depth_scale: float = 1.0


def normalize_depth(depth: DepthMap) -> tuple[DepthMap, float]:
    """Scale so the 95th-percentile valid depth maps to 1. Returns the
    scaled map and the divisor applied."""
    valid = depth.valid_mask()
    if not valid.any():
        raise ValidationError("depth map has no valid pixels")
    scale = float(np.percentile(depth.values[valid], 95))
    if scale <= 0:
        raise ValidationError("non-positive depth scale")
    return DepthMap(depth.values / scale), scale


FREE_SPAN = (0.05, 0.998)
INTERIOR_SPAN = (0.005, 0.03)


def build_samples(depth: DepthMap, cam: CameraIntrinsics, n_per_class: int,
                  seed: int) -> SampleSet:
    """Draw n_per_class pixels per label (uniform over valid pixels, with
    replacement, seeded) and place points along their rays: surface at d,
    free at u*d with u ~ U(0.05, 0.998), interior at d*(1 + v) with
    v ~ U(0.005, 0.03).

    The free band must reach almost to the surface: the indicator saturates
    exactly (zero gradient) about 0.5/delta away from a plane, so any gap
    between the free band and the surface is a dead zone planes can strand
    in.
    """
    valid = depth.valid_mask()
    ys, xs = np.nonzero(valid)
    if ys.size == 0:
        raise ValidationError("depth map has no valid pixels")
    rng = np.random.default_rng(seed)

    def rays(count):
        pick = rng.integers(0, ys.size, size=count)
        u = xs[pick].astype(np.float64)
        v = ys[pick].astype(np.float64)
        d = depth.values[ys[pick], xs[pick]]
        dirs = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy,
                         np.ones_like(u)], axis=1)
        return dirs, d

    dirs, d = rays(n_per_class)
    surface = dirs * d[:, None]

    dirs, d = rays(n_per_class)
    u = rng.uniform(*FREE_SPAN, size=n_per_class)
    free = dirs * (u * d)[:, None]

    dirs, d = rays(n_per_class)
    v = rng.uniform(*INTERIOR_SPAN, size=n_per_class)
    interior = dirs * (d * (1.0 + v))[:, None]

    return SampleSet(surface, free, interior)


# ---------------------------------------------------------------------------
# loss and analytic gradients


@dataclass(frozen=True)
class LossGrads:
    loss: float
    grad_normals: np.ndarray  # K x F x 3
    grad_offsets: np.ndarray  # K x F


def _loss_and_grads(normals: np.ndarray, offsets: np.ndarray, centers: np.ndarray,
                    delta: float, sigma: float, samples: SampleSet,
                    lambda_surf: float, lambda_occ: float,
                    lambda_aux: float) -> LossGrads:
    k, f, _ = normals.shape
    xs = np.concatenate([samples.surface_pts, samples.free_pts, samples.interior_pts])
    n_s, n_f, n_i = (len(samples.surface_pts), len(samples.free_pts),
                     len(samples.interior_pts))
    n_all = len(xs)
    target = np.concatenate([np.full(n_s, 0.5), np.zeros(n_f), np.ones(n_i)])
    coef = np.concatenate([
        np.full(n_s, 2.0 * lambda_surf / max(n_s, 1)),
        np.full(n_f, 2.0 * lambda_occ / max(n_f, 1)),
        np.full(n_i, 2.0 * lambda_occ / max(n_i, 1)),
    ])

    # per-primitive smooth SDF and indicator
    phi = np.empty((n_all, k))
    soft = []
    for j in range(k):
        z = delta * (xs @ normals[j].T + offsets[j])
        m = z.max(axis=1, keepdims=True)
        e = np.exp(z - m)
        se = e.sum(axis=1)
        phi[:, j] = m[:, 0] + np.log(se)
        soft.append(e / se[:, None])
    c_ind = expit(-sigma * phi)

    # p-norm smooth union, scaled to stay stable when indicators vanish
    cmax = c_ind.max(axis=1)
    nz = cmax > 0
    ratio = np.zeros_like(c_ind)
    ratio[nz] = c_ind[nz] / cmax[nz, None]
    rp = ratio ** UNION_PNORM
    t_sum = rp.sum(axis=1)
    union = np.zeros(n_all)
    union[nz] = cmax[nz] * t_sum[nz] ** (1.0 / UNION_PNORM)

    resid = union - target
    # trimmed quadratic on the surface class only
    surf_live = np.ones(n_all, dtype=bool)
    surf_live[:n_s] = np.abs(resid[:n_s]) <= SURFACE_TRIM
    surf_resid = np.where(surf_live[:n_s], resid[:n_s], SURFACE_TRIM)
    loss = (lambda_surf * np.mean(surf_resid ** 2)
            + lambda_occ * np.mean(resid[n_s:n_s + n_f] ** 2)
            + lambda_occ * np.mean(resid[n_s + n_f:] ** 2))

    dl_do = coef * resid * surf_live
    do_dc = np.zeros_like(c_ind)
    do_dc[nz] = (ratio[nz] ** (UNION_PNORM - 1.0)
                 * (t_sum[nz] ** (1.0 / UNION_PNORM - 1.0))[:, None])
    dc_dphi = -sigma * c_ind * (1.0 - c_ind)
    alpha = dl_do[:, None] * do_dc * dc_dphi  # N x K, chain up to phi

    grad_n = np.zeros_like(normals)
    grad_d = np.zeros_like(offsets)
    for j in range(k):
        g_h = delta * alpha[:, j, None] * soft[j]  # N x F
        grad_n[j] = g_h.T @ xs
        grad_d[j] = g_h.sum(axis=0)

    # degeneracy regularizer: centers must keep a minimum inradius
    for j in range(k):
        hc = normals[j] @ centers[j] + offsets[j]
        h_star = int(np.argmax(hc))
        gap = INRADIUS_MIN + hc[h_star]
        if gap > 0:
            loss += lambda_aux * gap * gap
            grad_n[j, h_star] += lambda_aux * 2.0 * gap * centers[j]
            grad_d[j, h_star] += lambda_aux * 2.0 * gap

    return LossGrads(float(loss), grad_n, grad_d)


def occupancy_loss(scene: Scene, samples: SampleSet, lambda_surf: float = 1.0,
                   lambda_occ: float = 1.0, lambda_aux: float = 0.1) -> LossGrads:
    """Loss over a scene's primitives with exact gradients w.r.t. every
    plane normal and offset (rows follow primitive order)."""
    prims = scene.primitives
    if not all(scene.live):
        raise ValidationError("occupancy_loss expects a scene without tombstones")
    f_max = max(p.face_count for p in prims)
    if any(p.face_count != f_max for p in prims):
        raise ValidationError("occupancy_loss expects a uniform face count")
    deltas = {p.delta for p in prims}
    sigmas = {p.sigma for p in prims}
    if len(deltas) != 1 or len(sigmas) != 1:
        raise ValidationError("occupancy_loss expects shared delta and sigma")
    normals = np.stack([p.normals() for p in prims])
    offsets = np.stack([p.offsets() for p in prims])
    centers = np.stack([p.center for p in prims])
    return _loss_and_grads(normals, offsets, centers, deltas.pop(), sigmas.pop(),
                           samples, lambda_surf, lambda_occ, lambda_aux)


# ---------------------------------------------------------------------------
# initialization


def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
            iters: int = 25) -> np.ndarray:
    """Plain seeded Lloyd iterations with k-means++ starts; returns labels."""
    n = len(points)
    if n < k:
        raise ValidationError(f"need at least {k} surface points, got {n}")
    centers = np.empty((k, 3))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = points[rng.integers(n)]
        else:
            centers[j] = points[np.searchsorted(np.cumsum(d2 / total),
                                                rng.random())]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        dist = ((points[:, None, :] - centers[None]) ** 2).sum(axis=2)
        labels = dist.argmin(axis=1)
        for j in range(k):
            sel = labels == j
            if sel.any():
                centers[j] = points[sel].mean(axis=0)
            else:  # revive an empty cluster at the farthest point
                far = dist.min(axis=1).argmax()
                centers[j] = points[far]
                labels[far] = j
    return labels


def _depth_regions(depth: DepthMap) -> np.ndarray:
    """Label valid pixels into regions separated by depth discontinuities.

    4-neighbours connect when their depths agree within 4% (floor 0.01), so
    one region never straddles an occlusion edge. Returns an H x W label
    map, -1 on invalid pixels.
    """
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    d = depth.values
    h, w = d.shape
    valid = depth.valid_mask()
    idx = np.arange(h * w).reshape(h, w)

    rows, cols = [], []
    right = valid[:, :-1] & valid[:, 1:] & (
        np.abs(d[:, :-1] - d[:, 1:]) <= np.maximum(0.04 * np.minimum(d[:, :-1], d[:, 1:]), 0.01))
    down = valid[:-1, :] & valid[1:, :] & (
        np.abs(d[:-1, :] - d[1:, :]) <= np.maximum(0.04 * np.minimum(d[:-1, :], d[1:, :]), 0.01))
    rows.append(idx[:, :-1][right])
    cols.append(idx[:, 1:][right])
    rows.append(idx[:-1, :][down])
    cols.append(idx[1:, :][down])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(h * w, h * w))
    _, labels = connected_components(graph, directed=False)
    labels = labels.reshape(h, w)
    out = np.full((h, w), -1, dtype=np.int64)
    out[valid] = labels[valid]
    return out


def _allocate_quota(sizes: np.ndarray, k: int) -> np.ndarray:
    """Split k clusters across regions proportionally to size (each at most
    its point count, largest regions first)."""
    order = np.argsort(-sizes)
    quota = np.zeros(len(sizes), dtype=np.int64)
    remaining = k
    for i in order[:remaining]:  # every sizable region gets one first
        if remaining == 0:
            break
        quota[i] = 1
        remaining -= 1
    while remaining > 0:
        # hand extras to the region with the most points per cluster
        load = sizes / np.maximum(quota, 1) * (quota > 0)
        i = int(np.argmax(np.where(quota < sizes, load, -1)))
        if quota[i] >= sizes[i]:
            break
        quota[i] += 1
        remaining -= 1
    return quota


def initial_scene(depth: DepthMap, cam: CameraIntrinsics, cfg: FitConfig) -> Scene:
    """K primitives from the lifted surface: split the depth map at
    discontinuities, spread the K budget across the regions, k-means within
    each, and start every cluster as its inflated bounding box."""
    pts, valid = lift_depth(depth, cam)
    regions = _depth_regions(depth)
    rng = np.random.default_rng(cfg.seed)

    region_ids, counts = np.unique(regions[regions >= 0], return_counts=True)
    # small specks cannot host a primitive of their own
    keep = counts >= max(16, valid.sum() // (cfg.k * 50))
    if keep.any():
        region_ids, counts = region_ids[keep], counts[keep]
    quota = _allocate_quota(counts.astype(np.int64), cfg.k)

    boxes = []
    for rid, q in zip(region_ids, quota):
        if q == 0:
            continue
        cluster_pts = pts[regions == rid]
        if len(cluster_pts) > 20000:
            cluster_pts = cluster_pts[rng.choice(len(cluster_pts), 20000,
                                                 replace=False)]
        labels = _kmeans(cluster_pts, int(q), rng)
        for j in range(int(q)):
            sel = cluster_pts[labels == j]
            if len(sel) == 0:
                continue
            boxes.append((sel.min(axis=0), sel.max(axis=0)))

    # pad a shortfall by splitting the widest boxes in half
    while len(boxes) < cfg.k:
        spans = [float(np.max(hi - lo)) for lo, hi in boxes]
        i = int(np.argmax(spans))
        lo, hi = boxes.pop(i)
        axis = int(np.argmax(hi - lo))
        mid = (lo[axis] + hi[axis]) / 2
        hi_a = hi.copy()
        hi_a[axis] = mid
        lo_b = lo.copy()
        lo_b[axis] = mid
        boxes += [(lo, hi_a), (lo_b, hi)]

    prims = []
    for lo, hi in boxes[: cfg.k]:
        mid = (lo + hi) / 2
        half = np.maximum((hi - lo) / 2 * BOX_INFLATE, _min_half_extent(cfg.delta))
        prims.append(axis_box_primitive(mid - half, mid + half,
                                        delta=cfg.delta, sigma=cfg.sigma))
    return Scene(tuple(prims), cam)


# ---------------------------------------------------------------------------
# optimization


def _renormalize(normals: np.ndarray, offsets: np.ndarray,
                 rng: np.random.Generator) -> None:
    norms = np.linalg.norm(normals, axis=2)
    dead = norms < 1e-12
    if dead.any():
        for j, h in zip(*np.nonzero(dead)):
            v = rng.normal(size=3)
            normals[j, h] = v / np.linalg.norm(v)
        norms = np.linalg.norm(normals, axis=2)
    normals /= norms[:, :, None]
    offsets /= norms


def fit(depth: DepthMap, cam: CameraIntrinsics, cfg: FitConfig,
        init: Scene | None = None) -> tuple[Scene, FitReport]:
    """Optimize cfg.k primitives against the depth map.

    `init` overrides the k-means initialization (it must carry cfg.k live
    primitives). Returns the best-loss scene seen and a report whose absrel
    compares the refit render against the input depth. Divergence keeps the
    last finite state and sets the report flag.
    """
    t0 = time.perf_counter()
    scene0 = init if init is not None else initial_scene(depth, cam, cfg)
    if scene0.k != cfg.k or not all(scene0.live):
        raise ValidationError("init scene must have cfg.k live primitives")

    normals = np.stack([p.normals() for p in scene0.primitives]).astype(np.float64)
    offsets = np.stack([p.offsets() for p in scene0.primitives]).astype(np.float64)
    centers = np.stack([p.center for p in scene0.primitives])
    rng = np.random.default_rng(cfg.seed + 1)

    m_n = np.zeros_like(normals)
    v_n = np.zeros_like(normals)
    m_d = np.zeros_like(offsets)
    v_d = np.zeros_like(offsets)
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    # losses at different anneal stages are not comparable, so "best" is
    # tracked only over the final resample window (at full sharpness)
    best = (math.inf, None, None)
    last_finite = (math.inf, normals.copy(), offsets.copy())
    samples = build_samples(depth, cam, cfg.n_per_class, cfg.seed)
    diverged = False
    steps_run = 0

    for step in range(cfg.steps):
        if step > 0 and step % cfg.resample_every == 0:
            samples = build_samples(depth, cam, cfg.n_per_class,
                                    cfg.seed + step // cfg.resample_every)
        out = _loss_and_grads(normals, offsets, centers, cfg.delta,
                              cfg.sigma_at(step), samples, cfg.lambda_surf,
                              cfg.lambda_occ, cfg.lambda_aux)
        if not math.isfinite(out.loss):
            diverged = True
            break
        steps_run = step + 1
        last_finite = (out.loss, normals.copy(), offsets.copy())
        if step >= cfg.steps - cfg.resample_every and out.loss < best[0]:
            best = (out.loss, normals.copy(), offsets.copy())

        t = step + 1
        lr = cfg.lr_at(step)
        m_n = beta1 * m_n + (1 - beta1) * out.grad_normals
        v_n = beta2 * v_n + (1 - beta2) * out.grad_normals ** 2
        m_d = beta1 * m_d + (1 - beta1) * out.grad_offsets
        v_d = beta2 * v_d + (1 - beta2) * out.grad_offsets ** 2
        bc1 = 1 - beta1 ** t
        bc2 = 1 - beta2 ** t
        normals = normals - lr * (m_n / bc1) / (np.sqrt(v_n / bc2) + eps)
        offsets = offsets - lr * (m_d / bc1) / (np.sqrt(v_d / bc2) + eps)
        _renormalize(normals, offsets, rng)

    final_loss, normals, offsets = best if best[1] is not None else last_finite
    if not math.isfinite(final_loss):
        raise NumericalError("fit diverged on the first step")

    prims = tuple(
        ConvexPrimitive.from_arrays(normals[j], offsets[j], cfg.delta, cfg.sigma,
                                    centers[j])
        for j in range(cfg.k))
    scene = Scene(prims, cam)

    product = render_scene(scene)
    mask = depth_valid_mask(product.depth.values, depth.values)
    fit_absrel = (absrel(product.depth.values, depth.values, mask)
                  if mask.sum() >= 2 else math.inf)
    report = FitReport(final_loss=final_loss, absrel=fit_absrel,
                       iterations_run=steps_run,
                       wall_time=time.perf_counter() - t0, diverged=diverged)
    return scene, report


def sweep_parts(depth: DepthMap, cam: CameraIntrinsics, ks: list[int],
                base: FitConfig | None = None) -> list[FitReport]:
    """Run fit per primitive count and return the reports in order."""
    if not ks:
        raise ValidationError("ks must be non-empty")
    base = base or FitConfig()
    reports = []
    for k in ks:
        _, report = fit(depth, cam, replace(base, k=k))
        reports.append(report)
    return reports
