"""Phase-1 image preprocessing: CLAHE, Ben-Graham local-average removal,
channel fusion, resizing, and PNG I/O.

CLAHE here is tile-based histogram equalization with a clip limit expressed
as a multiple of the uniform histogram height.  Clipped excess is spread
uniformly over all bins and each output pixel bilinearly blends the CDF
mappings of the four surrounding tile centers (edge tiles clamp).  When the
image size is not divisible by the tile grid, the last tile absorbs the
remainder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import GeometryError, ImageFormatError, ShapeMismatchError
from .filters import gaussian_blur2d, resize_bilinear
from .tensor import Tensor

GRAY_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass
class ImageU8:
    """H x W x C unsigned-8-bit raster; C is 1 (gray) or 3 (RGB)."""

    data: np.ndarray  # shape (H, W, C), dtype uint8

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3) or arr.dtype != np.uint8:
            raise ImageFormatError(
                f"ImageU8 needs uint8 HxWxC with C in {{1,3}}; got {arr.shape} {arr.dtype}")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class ClaheParams:
    tiles_x: int = 8
    tiles_y: int = 8
    clip_limit: float = 2.0
    bins: int = 256

    def validate(self, height: int, width: int) -> None:
        if self.tiles_x < 1 or self.tiles_y < 1:
            raise GeometryError("tile counts must be >= 1")
        if self.tiles_x > width or self.tiles_y > height:
            raise GeometryError(
                f"tile grid {self.tiles_x}x{self.tiles_y} exceeds image {width}x{height}")
        if self.clip_limit < 1:
            raise GeometryError("clip_limit must be >= 1 (multiple of uniform height)")


@dataclass
class BenGrahamParams:
    sigma: float | None = None  # None -> image_width / 30
    alpha: float = 4.0
    beta: float = 1.0
    gamma: float = 128.0


def read_png(path) -> ImageU8:
    try:
        with Image.open(path) as im:
            if im.mode in ("L", "RGB"):
                arr = np.asarray(im)
            elif im.mode in ("I", "I;16", "LA", "P"):
                arr = np.asarray(im.convert("L"))
            else:
                arr = np.asarray(im.convert("RGB"))
    except Exception as exc:
        raise ImageFormatError(f"cannot read image {path}: {exc}") from exc
    if arr.dtype != np.uint8:
        arr = np.clip(arr, 0, 255).astype(np.uint8)
    return ImageU8(arr)


def write_png(img: ImageU8, path) -> None:
    arr = img.data[:, :, 0] if img.channels == 1 else img.data
    Image.fromarray(arr).save(path, format="PNG")


def to_gray(img: ImageU8) -> ImageU8:
    if img.channels == 1:
        return img
    w = np.asarray(GRAY_WEIGHTS)
    lum = np.einsum("hwc,c->hw", img.data.astype(np.float64), w)
    return ImageU8(np.clip(np.rint(lum), 0, 255).astype(np.uint8))


def _tile_edges(n: int, tiles: int) -> np.ndarray:
    """Tile boundaries; the last tile absorbs the division remainder."""
    base = n // tiles
    edges = [i * base for i in range(tiles)]
    edges.append(n)
    return np.asarray(edges)


def _clip_histogram(hist: np.ndarray, ceiling: float) -> np.ndarray:
    """Clip bins at ``ceiling`` and spread the excess over the remaining
    headroom until no bin exceeds the ceiling (up to float slack)."""
    n = hist.sum()
    excess = np.maximum(hist - ceiling, 0.0).sum()
    hist = np.minimum(hist, ceiling)
    while excess > 1e-9 * n:
        under = hist < ceiling
        if not under.any():
            break
        hist[under] += excess / under.sum()
        excess = np.maximum(hist - ceiling, 0.0).sum()
        hist = np.minimum(hist, ceiling)
    return hist


def _clipped_cdf_lut(pixels: np.ndarray, clip_limit: float, bins: int) -> np.ndarray:
    """Equalization LUT from a clip-limited histogram of one tile.

    Midpoint convention: value v maps to the CDF evaluated at the middle of
    its own bin, which keeps near-flat histograms near the identity map.
    """
    hist = np.bincount(pixels.reshape(-1), minlength=bins).astype(np.float64)
    n = pixels.size
    ceiling = clip_limit * n / bins
    if math.isfinite(ceiling):
        hist = _clip_histogram(hist, ceiling)
    cdf = np.cumsum(hist)
    mid = cdf - hist / 2.0
    return np.clip(np.floor(mid * 255.0 / n + 0.5), 0, 255)


def clahe(img: ImageU8, p: ClaheParams | None = None) -> ImageU8:
    if p is None:
        p = ClaheParams()
    if img.channels != 1:
        raise ImageFormatError("clahe expects a single-channel image; convert to gray first")
    h, w = img.height, img.width
    p.validate(h, w)
    src = img.data[:, :, 0]

    ye = _tile_edges(h, p.tiles_y)
    xe = _tile_edges(w, p.tiles_x)
    luts = np.empty((p.tiles_y, p.tiles_x, p.bins))
    centers_y = np.empty(p.tiles_y)
    centers_x = np.empty(p.tiles_x)
    for ty in range(p.tiles_y):
        centers_y[ty] = (ye[ty] + ye[ty + 1] - 1) / 2.0
        for tx in range(p.tiles_x):
            tile = src[ye[ty]:ye[ty + 1], xe[tx]:xe[tx + 1]]
            luts[ty, tx] = _clipped_cdf_lut(tile, p.clip_limit, p.bins)
    for tx in range(p.tiles_x):
        centers_x[tx] = (xe[tx] + xe[tx + 1] - 1) / 2.0

    ty0, wy = _blend_coords(np.arange(h), centers_y)
    tx0, wx = _blend_coords(np.arange(w), centers_x)
    ty1 = np.minimum(ty0 + 1, p.tiles_y - 1)
    tx1 = np.minimum(tx0 + 1, p.tiles_x - 1)

    g = lambda ty, tx: luts[ty[:, None], tx[None, :], src]
    wy = wy[:, None]
    wx = wx[None, :]
    out = ((1 - wy) * (1 - wx) * g(ty0, tx0) + (1 - wy) * wx * g(ty0, tx1)
           + wy * (1 - wx) * g(ty1, tx0) + wy * wx * g(ty1, tx1))
    return ImageU8(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def _blend_coords(coords: np.ndarray, centers: np.ndarray):
    """Lower tile index and blend weight toward the next tile per coordinate."""
    idx = np.searchsorted(centers, coords, side="right") - 1
    idx = np.clip(idx, 0, len(centers) - 1)
    nxt = np.minimum(idx + 1, len(centers) - 1)
    span = centers[nxt] - centers[idx]
    with np.errstate(invalid="ignore", divide="ignore"):
        wgt = np.where(span > 0, (coords - centers[idx]) / np.where(span > 0, span, 1.0), 0.0)
    return idx, np.clip(wgt, 0.0, 1.0)


def global_equalize(img: ImageU8) -> ImageU8:
    """Plain global histogram equalization (the single-tile CLAHE limit)."""
    return clahe(img, ClaheParams(tiles_x=1, tiles_y=1, clip_limit=float("inf")))


def ben_graham(img: ImageU8, p: BenGrahamParams | None = None) -> ImageU8:
    """Local-average-color removal: alpha*(img - blur(img)) + gamma, clamped."""
    if p is None:
        p = BenGrahamParams()
    sigma = p.sigma if p.sigma is not None else max(img.width / 30.0, 1e-3)
    out = np.empty_like(img.data)
    for c in range(img.channels):
        chan = img.data[:, :, c].astype(np.float64)
        blurred = gaussian_blur2d(chan, sigma)
        vals = p.alpha * chan - p.alpha * p.beta * blurred + p.gamma
        out[:, :, c] = np.clip(np.rint(vals), 0, 255).astype(np.uint8)
    return ImageU8(out)


def fuse(clahe_img: ImageU8, clahe_bg_img: ImageU8) -> Tensor:
    """Stack CLAHE and CLAHE+Ben-Graham channels as a [2,H,W] float tensor."""
    if clahe_img.channels != 1 or clahe_bg_img.channels != 1:
        raise ShapeMismatchError("fuse expects single-channel inputs")
    if clahe_img.data.shape != clahe_bg_img.data.shape:
        raise ShapeMismatchError(
            f"fuse size mismatch: {clahe_img.data.shape[:2]} vs {clahe_bg_img.data.shape[:2]}")
    stack = np.stack([clahe_img.data[:, :, 0], clahe_bg_img.data[:, :, 0]]) / 255.0
    return Tensor(stack)


def resize(img: ImageU8, out_h: int, out_w: int) -> ImageU8:
    out = np.empty((out_h, out_w, img.channels), dtype=np.uint8)
    for c in range(img.channels):
        chan = resize_bilinear(img.data[:, :, c].astype(np.float64), out_h, out_w)
        out[:, :, c] = np.clip(np.rint(chan), 0, 255).astype(np.uint8)
    return ImageU8(out)


def preprocess_pipeline(img: ImageU8, cfg, clahe_params: ClaheParams | None = None,
                        bg_params: BenGrahamParams | None = None) -> Tensor:
    """gray -> CLAHE -> (Ben-Graham branch) -> resize -> [C_in, H_m, W_m] in [0,1].

    Fusion is on when ``cfg.input_channels == 2``; channel 0 is the CLAHE
    image, channel 1 the Ben-Graham pass over it.
    """
    gray = to_gray(img)
    eq = clahe(gray, clahe_params)
    size = cfg.input_size
    if cfg.input_channels == 2:
        bg = ben_graham(eq, bg_params)
        chans = [resize(eq, size, size), resize(bg, size, size)]
    elif cfg.input_channels == 1:
        chans = [resize(eq, size, size)]
    else:
        raise ShapeMismatchError(f"input_channels must be 1 or 2, got {cfg.input_channels}")
    stack = np.stack([c.data[:, :, 0] for c in chans]).astype(np.float64) / 255.0
    return Tensor(stack)
