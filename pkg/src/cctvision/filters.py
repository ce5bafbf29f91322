"""Shared low-level raster filters: separable Gaussian blur and bilinear
resampling on float arrays.  Used by preprocessing, augmentation, and
heatmap upsampling."""

from __future__ import annotations

import numpy as np

from .errors import GeometryError


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian of radius ceil(3*sigma)."""
    if sigma <= 0:
        raise GeometryError(f"gaussian sigma must be positive, got {sigma}")
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur2d(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of a 2-D float array with symmetric padding."""
    k = gaussian_kernel1d(sigma)
    r = (len(k) - 1) // 2
    out = np.asarray(img, dtype=np.float64)
    # pad once per axis; symmetric extension preserves total mass exactly
    padded = np.pad(out, ((r, r), (0, 0)), mode="symmetric")
    out = np.einsum("k,khw->hw", k, _windows_axis0(padded, len(k)))
    padded = np.pad(out, ((0, 0), (r, r)), mode="symmetric")
    out = np.einsum("k,kwh->wh", k, _windows_axis0(padded.T, len(k))).T
    return out


def _windows_axis0(a: np.ndarray, width: int) -> np.ndarray:
    return np.lib.stride_tricks.sliding_window_view(a, width, axis=0).transpose(2, 0, 1)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a 2-D float array; half-pixel centers, edge clamp."""
    if out_h < 1 or out_w < 1:
        raise GeometryError(f"resize target {out_h}x{out_w} must be at least 1x1")
    h, w = img.shape
    if (out_h, out_w) == (h, w):
        return np.array(img, dtype=np.float64)
    src = np.asarray(img, dtype=np.float64)
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = src[np.ix_(y0, x0)] * (1 - fx) + src[np.ix_(y0, x1)] * fx
    bot = src[np.ix_(y1, x0)] * (1 - fx) + src[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def sample_bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray,
                    fill: float = 0.0) -> np.ndarray:
    """Sample a 2-D float array at fractional (ys, xs); ``fill`` outside."""
    h, w = img.shape
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = ys - y0
    fx = xs - x0
    out = np.zeros(ys.shape, dtype=np.float64)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            yy = y0 + dy
            xx = x0 + dx
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            vals = np.where(valid, img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)], fill)
            out += wy * wx * vals
    inside = (ys >= -0.5) & (ys <= h - 0.5) & (xs >= -0.5) & (xs <= w - 0.5)
    return np.where(inside, out, fill)
