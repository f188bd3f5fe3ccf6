"""Depth and texture evaluation: scale/shift-aligned AbsRel, masked PSNR/SSIM.

AbsRel first fits scale and shift by least squares (standard practice for
affine-invariant depth), then averages |aligned - gt| / gt over valid
pixels. Residuals are evaluated in the factored form
(cov * (p - mean_p) - var * (g - mean_g)) / var, which is algebraically the
least-squares residual but stays exactly zero when the prediction is an
exact affine image of the ground truth.

PSNR uses peak 1.0 and caps identical inputs at 99 dB. SSIM uses an 11x11
Gaussian window (sigma 1.5) with the standard constants; aggregation only
counts pixels whose window lies fully inside the mask and the image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ValidationError

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class DepthAlignment:
    scale: float
    shift: float
    residual: float  # mean squared, after alignment
    degenerate: bool = False


@dataclass(frozen=True)
class TextureReport:
    psnr: float
    ssim: float
    valid_fraction: float


def align_depth(pred: np.ndarray, gt: np.ndarray, valid: np.ndarray) -> DepthAlignment:
    """Least-squares (scale, shift) minimizing sum((s*pred + t - gt)^2).

    A constant prediction cannot determine a scale; it comes back flagged
    with s = 0 and t = mean(gt).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if pred.shape != gt.shape or pred.shape != valid.shape:
        raise ValidationError("align_depth inputs must share one shape")
    p = pred[valid]
    g = gt[valid]
    if p.size < 2:
        raise ValidationError("need at least 2 valid pixels to align")
    if np.ptp(g) == 0:
        raise ValidationError("ground truth is constant over the valid mask")
    p_mean = p.mean()
    g_mean = g.mean()
    dp = p - p_mean
    dg = g - g_mean
    var = float(np.dot(dp, dp))
    if var == 0.0:
        return DepthAlignment(scale=0.0, shift=float(g_mean),
                              residual=float(np.mean(dg * dg)), degenerate=True)
    cov = float(np.dot(dp, dg))
    s = cov / var
    t = g_mean - s * p_mean
    r = (cov * dp - var * dg) / var
    return DepthAlignment(scale=float(s), shift=float(t),
                          residual=float(np.mean(r * r)))


def absrel(pred: np.ndarray, gt: np.ndarray, valid: np.ndarray) -> float:
    """Mean |aligned_pred - gt| / gt over the valid mask."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if np.any(gt[valid] <= 0):
        raise ValidationError("ground-truth depth must be positive on valid pixels")
    a = align_depth(pred, gt, valid)
    p = pred[valid]
    g = gt[valid]
    if a.degenerate:
        err = np.abs(a.shift - g)
    else:
        dp = p - p.mean()
        dg = g - g.mean()
        var = float(np.dot(dp, dp))
        cov = float(np.dot(dp, dg))
        err = np.abs((cov * dp - var * dg) / var)
    return float(np.mean(err / g))


def depth_valid_mask(render_depth: np.ndarray, estimated_depth: np.ndarray) -> np.ndarray:
    """Pixels where both the primitive render hit and the estimate is positive."""
    return (np.asarray(render_depth) > 0) & (np.asarray(estimated_depth) > 0)


# ---------------------------------------------------------------------------
# texture metrics


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("psnr inputs must share one shape")
    if mask is not None:
        sel = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
        if not sel.any():
            raise ValidationError("psnr mask selects no pixels")
        diff = a[sel] - b[sel]
    else:
        diff = (a - b).ravel()
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean SSIM over windows fully inside the mask (and the image)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("ssim inputs must share one shape")
    if a.ndim == 3:  # average the per-channel scores of a CHW image
        scores = [ssim(a[c], b[c], mask) for c in range(a.shape[0])]
        return float(np.mean(scores))

    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    half = SSIM_WINDOW // 2

    def filt(img):
        return ndimage.correlate(img, kernel, mode="constant", cval=0.0)

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    ssim_map = (((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))

    inside = np.zeros(a.shape, dtype=bool)
    inside[half:a.shape[0] - half, half:a.shape[1] - half] = True
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        full = ndimage.minimum_filter(mask, size=SSIM_WINDOW,
                                      mode="constant", cval=0.0) >= 1.0
        inside &= full
    if not inside.any():
        raise ValidationError("ssim mask leaves no fully-covered windows")
    return float(ssim_map[inside].mean())


def reprojection_report(img_src: np.ndarray, img_dst: np.ndarray,
                        corr, mask) -> TextureReport:
    """Warp img_dst into the source frame through the given correspondence
    (indexed over source pixels, pointing into img_dst) and score it against
    img_src over mask = 1 pixels."""
    from .hints import ConfidenceMask, generate_hint

    img_src = np.asarray(img_src)
    img_dst = np.asarray(img_dst)
    if img_src.shape != img_dst.shape:
        raise ValidationError("images must share one shape")
    mask_values = mask.values if isinstance(mask, ConfidenceMask) else np.asarray(mask)
    if not (mask_values > 0).any():
        raise ValidationError("empty confidence mask")

    hit_mask = np.zeros(corr.W.shape, dtype=np.int8)
    warped = generate_hint(img_dst, corr, hit_mask)
    sel = mask_values >= 1.0
    return TextureReport(
        psnr=psnr(img_src, warped, sel),
        ssim=ssim(img_src, warped, sel),
        valid_fraction=float(sel.mean()),
    )
