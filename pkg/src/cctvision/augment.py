"""Seeded visual augmentation: gaussian blur, rotation, zoom, flips.

Every random decision comes from a counter-based Philox stream keyed by
(policy seed, sample stream index), so augmentation is a pure function of
its inputs regardless of thread scheduling or call order.  Transforms apply
in a fixed order: blur -> rotate -> zoom -> flip_h -> flip_v.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, ValidationError
from .filters import gaussian_blur2d, sample_bilinear
from .tensor import Tensor


@dataclass
class AugmentPolicy:
    p_blur: float = 0.5
    p_rotate: float = 0.5
    p_zoom: float = 0.5
    p_flip_h: float = 0.5
    p_flip_v: float = 0.5
    rotate_max_deg: float = 15.0
    zoom_range: tuple[float, float] = (0.9, 1.1)
    blur_sigma_range: tuple[float, float] = (0.5, 1.5)
    seed: int = 0

    def __post_init__(self):
        for nm in ("p_blur", "p_rotate", "p_zoom", "p_flip_h", "p_flip_v"):
            v = getattr(self, nm)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{nm}={v} outside [0,1]")
        self.zoom_range = tuple(self.zoom_range)
        self.blur_sigma_range = tuple(self.blur_sigma_range)
        if self.zoom_range[0] > self.zoom_range[1]:
            raise ValidationError(f"zoom_range {self.zoom_range} has min > max")
        if self.blur_sigma_range[0] <= 0 or self.blur_sigma_range[0] > self.blur_sigma_range[1]:
            raise ValidationError(f"blur_sigma_range {self.blur_sigma_range} invalid")

    def is_noop(self) -> bool:
        """True when every transform probability is zero."""
        return (self.p_blur == self.p_rotate == self.p_zoom
                == self.p_flip_h == self.p_flip_v == 0.0)


def gaussian_blur(t: Tensor, sigma: float) -> Tensor:
    """Per-channel separable Gaussian blur with reflect padding."""
    if sigma <= 0:
        raise GeometryError(f"blur sigma must be positive, got {sigma}")
    out = np.stack([gaussian_blur2d(ch, sigma) for ch in t.data])
    return Tensor(out)


def _affine_sample(chan: np.ndarray, inv_map) -> np.ndarray:
    h, w = chan.shape
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    sy, sx = inv_map(yy, xx)
    return sample_bilinear(chan, sy, sx, fill=0.0)


def rotate(t: Tensor, degrees: float) -> Tensor:
    """Rotation about the image center, bilinear, zero outside the source."""
    if degrees % 360.0 == 0.0:
        return Tensor(t.data.copy())
    rad = np.deg2rad(degrees)
    c, s = np.cos(rad), np.sin(rad)
    _, h, w = t.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0

    def inv_map(yy, xx):
        dy, dx = yy - cy, xx - cx
        return cy + c * dy - s * dx, cx + s * dy + c * dx

    return Tensor(np.stack([_affine_sample(ch, inv_map) for ch in t.data]))


def zoom(t: Tensor, scale: float) -> Tensor:
    """Center zoom back to the original size; shrink pads with zeros."""
    if scale <= 0:
        raise GeometryError(f"zoom scale must be positive, got {scale}")
    if scale == 1.0:
        return Tensor(t.data.copy())
    _, h, w = t.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0

    def inv_map(yy, xx):
        return cy + (yy - cy) / scale, cx + (xx - cx) / scale

    return Tensor(np.stack([_affine_sample(ch, inv_map) for ch in t.data]))


def flip(t: Tensor, axis: str) -> Tensor:
    """Exact index reversal along 'horizontal' (x) or 'vertical' (y)."""
    if axis == "horizontal":
        return Tensor(t.data[:, :, ::-1].copy())
    if axis == "vertical":
        return Tensor(t.data[:, ::-1, :].copy())
    raise ValidationError(f"flip axis must be 'horizontal' or 'vertical', got {axis!r}")


def _stream_rng(seed: int, stream_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=(seed & 0xFFFFFFFFFFFFFFFF, stream_index))))


def draw_decisions(policy: AugmentPolicy, stream_index: int) -> dict:
    """The per-sample random plan; a fixed number of draws per sample."""
    rng = _stream_rng(policy.seed, stream_index)
    u = rng.random(5)
    sigma = rng.uniform(*policy.blur_sigma_range)
    deg = rng.uniform(-policy.rotate_max_deg, policy.rotate_max_deg)
    scale = rng.uniform(*policy.zoom_range)
    return {
        "blur": u[0] < policy.p_blur, "sigma": sigma,
        "rotate": u[1] < policy.p_rotate, "degrees": deg,
        "zoom": u[2] < policy.p_zoom, "scale": scale,
        "flip_h": u[3] < policy.p_flip_h,
        "flip_v": u[4] < policy.p_flip_v,
    }


def sample_augment(t: Tensor, policy: AugmentPolicy, stream_index: int) -> Tensor:
    d = draw_decisions(policy, stream_index)
    out = t
    if d["blur"]:
        out = gaussian_blur(out, d["sigma"])
    if d["rotate"]:
        out = rotate(out, d["degrees"])
    if d["zoom"]:
        out = zoom(out, d["scale"])
    if d["flip_h"]:
        out = flip(out, "horizontal")
    if d["flip_v"]:
        out = flip(out, "vertical")
    return out if out is not t else Tensor(t.data.copy())
