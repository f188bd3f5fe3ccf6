"""Texture-hint synthesis, confidence-mask processing, and Voronoi inpainting.

The hint warps the source image into the edited view through the
correspondence map: every accepted low-res pixel fills a lambda_h x
lambda_w block of the output with bilinear samples taken around the matched
source location. Low-confidence correspondences (w < 0.1) and flagged
pixels are skipped and stay black until inpainting.

Note on the skip flag: `hit_mask` marks pixels that are *excluded* from
hint writing (value 1 = skip), which is how miss/sky pixels are kept out of
the warp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .editing import CorrespondenceResult
from .errors import ValidationError
from .util import kdtree_workers

HINT_SKIP_THRESHOLD = 0.1  # correspondence confidence below this writes nothing
DEFAULT_TAU = 0.01         # mask threshold; separate from the skip threshold above
DEFAULT_DILATE_PX = 9


@dataclass(frozen=True)
class ConfidenceMask:
    values: np.ndarray
    processed: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or not np.all(np.isfinite(v)):
            raise ValidationError("confidence mask must be finite 2-D")
        if v.min() < 0 or v.max() > 1:
            raise ValidationError("confidence must lie in [0, 1]")
        if self.processed and not np.all((v == 0) | (v == 1)):
            raise ValidationError("processed masks must be binary")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class HintPackage:
    """Raw warped hint, its inpainted version, and the processed mask.

    inpainted equals hint wherever mask = 1.
    """

    hint: np.ndarray
    inpainted: np.ndarray
    mask: ConfidenceMask


def bilinear_sample(img: np.ndarray, y: float, x: float) -> np.ndarray:
    """Sample a C x H x W image at (y, x); coordinates clip to the valid range."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[1] < 1 or img.shape[2] < 1:
        raise ValidationError("bilinear_sample expects a non-empty CHW image")
    _, h, w = img.shape
    x = min(max(float(x), 0.0), w - 1.001)
    y = min(max(float(y), 0.0), h - 1.001)
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    wx, wy = x - x0, y - y0
    top = img[:, y0, x0] * (1 - wx) + img[:, y0, x1] * wx
    bot = img[:, y1, x0] * (1 - wx) + img[:, y1, x1] * wx
    return top * (1 - wy) + bot * wy


def _bilinear_many(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Vectorized bilinear_sample over coordinate arrays -> (N, C)."""
    c, h, w = img.shape
    xs = np.clip(xs, 0.0, w - 1.001)
    ys = np.clip(ys, 0.0, h - 1.001)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (xs - x0)[:, None]
    wy = (ys - y0)[:, None]
    flat = img.reshape(c, -1)
    v00 = flat[:, y0 * w + x0].T
    v01 = flat[:, y0 * w + x1].T
    v10 = flat[:, y1 * w + x0].T
    v11 = flat[:, y1 * w + x1].T
    top = v00 * (1 - wx) + v01 * wx
    bot = v10 * (1 - wx) + v11 * wx
    return top * (1 - wy) + bot * wy


def generate_hint(src_img: np.ndarray, corr: CorrespondenceResult,
                  hit_mask: np.ndarray,
                  skip_threshold: float = HINT_SKIP_THRESHOLD) -> np.ndarray:
    """Warp the source image (C x Hs x Ws) through the correspondence map.

    The correspondence resolution must divide the source resolution evenly;
    non-integer scale factors are rejected.
    """
    src_img = np.asarray(src_img)
    if src_img.ndim != 3:
        raise ValidationError("source image must be C x H x W")
    hr, wr = corr.W.shape
    if hit_mask.shape != (hr, wr):
        raise ValidationError("hit mask must match correspondence resolution")
    c, hs, ws = src_img.shape
    if hs % hr or ws % wr:
        raise ValidationError(
            f"source {hs}x{ws} is not an integer multiple of correspondence {hr}x{wr}")
    lam_h, lam_w = hs // hr, ws // wr

    write = (np.asarray(hit_mask) == 0) & (corr.W >= skip_threshold)
    out = np.zeros((c, hs, ws), dtype=src_img.dtype)
    if not write.any():
        return out

    # Expand each low-res pixel to its output block; the sample point is the
    # matched source location plus the in-block offset.
    write_big = np.repeat(np.repeat(write, lam_h, axis=0), lam_w, axis=1)
    xc_big = np.repeat(np.repeat(corr.R[..., 0], lam_h, axis=0), lam_w, axis=1)
    yc_big = np.repeat(np.repeat(corr.R[..., 1], lam_h, axis=0), lam_w, axis=1)
    ys_grid, xs_grid = np.mgrid[0:hs, 0:ws]
    y_sample = yc_big * lam_h + (ys_grid % lam_h)
    x_sample = xc_big * lam_w + (xs_grid % lam_w)

    sel = write_big
    sampled = _bilinear_many(src_img.astype(np.float64), y_sample[sel], x_sample[sel])
    flat = out.reshape(c, -1)
    flat[:, sel.ravel()] = sampled.T.astype(out.dtype)
    return flat.reshape(c, hs, ws)


def process_mask(W: np.ndarray, tau: float = DEFAULT_TAU,
                 dilate_px: int = DEFAULT_DILATE_PX) -> ConfidenceMask:
    """Threshold confidence at tau, then grow the zero region by dilate_px
    pixels in Chebyshev distance."""
    if not 0 < tau < 1:
        raise ValidationError("tau must lie in (0, 1)")
    if dilate_px < 0:
        raise ValidationError("dilate_px must be >= 0")
    W = np.asarray(W, dtype=np.float64)
    binary = (W >= tau).astype(np.float64)
    if dilate_px > 0:
        binary = ndimage.minimum_filter(binary, size=2 * dilate_px + 1,
                                        mode="constant", cval=1.0)
    return ConfidenceMask(binary, processed=True)


def voronoi_inpaint(hint: np.ndarray, W: np.ndarray, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Give every pixel the color of its Euclidean-nearest valid pixel
    (confidence >= tau). Valid pixels keep their own color; distance ties
    break toward the lowest row-major index."""
    hint = np.asarray(hint)
    if hint.ndim != 3:
        raise ValidationError("hint must be C x H x W")
    W = np.asarray(W, dtype=np.float64)
    h, w = W.shape
    if hint.shape[1:] != (h, w):
        raise ValidationError("hint and confidence shapes disagree")
    valid = W >= tau
    if not valid.any():
        raise ValidationError("no valid pixels to inpaint from")
    if valid.all():
        return hint.copy()

    coords = np.argwhere(valid)  # row-major: index order == tie-break order
    tree = cKDTree(coords)
    query = np.argwhere(np.ones((h, w), dtype=bool))
    dist, idx = tree.query(query, k=1, workers=kdtree_workers())
    idx = _exact_nearest(tree, coords, query, dist, idx)
    out = hint.reshape(hint.shape[0], -1)[:, :]
    src_lin = coords[idx, 0] * w + coords[idx, 1]
    return out[:, src_lin].reshape(hint.shape).copy()


def _exact_nearest(tree: cKDTree, coords: np.ndarray, query: np.ndarray,
                   dist: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Pin nearest-valid ties to the lowest row-major index using exact
    integer distances (grid coordinates make squared distances integers)."""
    if tree.n < 2:
        return idx
    d2, _ = tree.query(query, k=2, workers=kdtree_workers())
    tied = np.flatnonzero(d2[:, 0] == d2[:, 1])
    if tied.size == 0:
        return idx
    out = idx.copy()
    qsub = query[tied]
    balls = tree.query_ball_point(qsub, r=dist[tied] + 1e-6)
    for row, cands in zip(tied, balls):
        q = query[row]
        diffs = coords[cands] - q
        d2_exact = (diffs * diffs).sum(axis=1)
        best = min(zip(d2_exact, cands))
        out[row] = best[1]
    return out


def upsample_mask(values: np.ndarray, lam_h: int, lam_w: int) -> np.ndarray:
    return np.repeat(np.repeat(values, lam_h, axis=0), lam_w, axis=1)


def build_hint_package(src_img: np.ndarray, corr: CorrespondenceResult,
                       hit_mask: np.ndarray, tau: float = DEFAULT_TAU,
                       dilate_px: int = DEFAULT_DILATE_PX,
                       skip_threshold: float = HINT_SKIP_THRESHOLD) -> HintPackage:
    """Warp, threshold + dilate the confidence, and inpaint the gaps.

    The mask and the inpainting validity are computed at correspondence
    resolution and block-upsampled when the hint is larger.
    """
    hint = generate_hint(src_img, corr, hit_mask, skip_threshold)
    hr, wr = corr.W.shape
    _, hs, ws = hint.shape
    lam_h, lam_w = hs // hr, ws // wr

    mask = process_mask(corr.W, tau, dilate_px)
    mask_full = mask if (lam_h, lam_w) == (1, 1) else ConfidenceMask(
        upsample_mask(mask.values, lam_h, lam_w), processed=True)

    w_full = corr.W if (lam_h, lam_w) == (1, 1) else upsample_mask(corr.W, lam_h, lam_w)
    inpainted = voronoi_inpaint(hint, w_full, tau)
    return HintPackage(hint=hint, inpainted=inpainted, mask=mask_full)
