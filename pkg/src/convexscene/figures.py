"""Report figures and raster previews.

Every CLI report path can drop matplotlib figures next to its CSV/JSON
output: fit loss curves, the AbsRel-vs-parts sweep chart, and panel views
of the pipeline rasters. Previews here are also what the HTTP service
serves as PNG.
"""

from __future__ import annotations

import colorsys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

PALETTE_SIZE = 256


def primitive_palette(size: int = PALETTE_SIZE) -> np.ndarray:
    """Fixed id -> RGB palette (golden-ratio hue walk, s=0.65, v=0.95).

    The browser client regenerates the same table, so overlays agree with
    server-side previews byte for byte.
    """
    colors = np.zeros((size, 3))
    for i in range(size):
        h = (i * 0.61803398875) % 1.0
        colors[i] = colorsys.hsv_to_rgb(h, 0.65, 0.95)
    return colors


def depth_preview(depth: np.ndarray) -> np.ndarray:
    """Grayscale image in [0,1]; nearer is brighter, misses are black."""
    depth = np.asarray(depth, dtype=np.float64)
    out = np.zeros_like(depth)
    hit = depth > 0
    if hit.any():
        lo = depth[hit].min()
        hi = depth[hit].max()
        span = hi - lo
        out[hit] = 1.0 - 0.85 * ((depth[hit] - lo) / span if span > 0 else 0.0)
    return out


def convex_preview(convex_map: np.ndarray) -> np.ndarray:
    """RGB image coloring each primitive id; misses are black."""
    ids = np.asarray(convex_map)
    palette = primitive_palette()
    out = np.zeros(ids.shape + (3,))
    hit = ids >= 0
    out[hit] = palette[ids[hit] % PALETTE_SIZE]
    return out


def points_preview(points: np.ndarray, hit: np.ndarray) -> np.ndarray:
    """Min-max normalized XYZ mapped to RGB over hit pixels."""
    pts = np.asarray(points, dtype=np.float64)
    out = np.zeros_like(pts)
    if hit.any():
        sel = pts[hit]
        lo = sel.min(axis=0)
        span = np.maximum(sel.max(axis=0) - lo, 1e-12)
        out[hit] = (sel - lo) / span
    return out


def save_loss_curve(losses, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(len(losses)), losses, lw=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_absrel_vs_parts(ks, absrels, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ks, absrels, marker="o")
    ax.set_xlabel("primitive count")
    ax.set_ylabel("AbsRel")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_raster_panel(items, path) -> None:
    """items: list of (title, HxW or HxWx3 array in [0,1])."""
    n = len(items)
    cols = min(3, n)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 3.2 * rows),
                             squeeze=False)
    for ax in axes.ravel():
        ax.axis("off")
    for ax, (title, img) in zip(axes.ravel(), items):
        img = np.asarray(img)
        if img.ndim == 3 and img.shape[0] in (1, 3) and img.shape[0] < img.shape[2]:
            img = np.moveaxis(img, 0, -1)
        if img.ndim == 2:
            ax.imshow(img, cmap="gray", vmin=0, vmax=1, interpolation="nearest")
        else:
            ax.imshow(np.clip(img, 0, 1), interpolation="nearest")
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
