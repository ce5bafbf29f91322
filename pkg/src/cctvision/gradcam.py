"""Gradient-weighted class activation maps over the tokenizer feature map,
plus a sequence-pooling attention view and colormap overlays.

The tap point is the last tokenizer conv block: it is the only explicitly
spatial representation in the model, so channel gradients there admit the
usual spatial-mean weighting.  The pooling-attention map reshaped to the
token grid serves as a complementary saliency view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M
from . import tensor as T
from .errors import ShapeMismatchError, ValidationError
from .filters import resize_bilinear
from .model import CctConfig, CctParams
from .preprocess import ImageU8
from .tensor import Tensor


@dataclass
class Heatmap:
    values: np.ndarray       # [H_m, W_m] floats in [0,1]
    target_class: int
    predicted_class: int
    source: str


def _normalize(cam: np.ndarray) -> np.ndarray:
    lo, hi = cam.min(), cam.max()
    if hi - lo < 1e-12:
        return np.zeros_like(cam)
    return (cam - lo) / (hi - lo)


def grad_cam(x: Tensor, params: CctParams, cfg: CctConfig, target_class: int) -> Heatmap:
    """ReLU of gradient-weighted channel sum of the tokenizer features,
    upsampled to model input size and min-max normalized."""
    if x.ndim != 4 or x.shape[0] != 1:
        raise ShapeMismatchError(f"grad_cam expects a single [1,C,H,W] input, got {x.shape}")
    if not 0 <= target_class < cfg.num_classes:
        raise ValidationError(f"target class {target_class} outside [0,{cfg.num_classes})")
    if not params.all_finite():
        raise ValidationError("parameters contain non-finite values; model untrained or corrupt")

    params.zero_grads()
    res = M.forward(x, params, cfg, training=False)
    onehot = np.zeros((1, cfg.num_classes), dtype=res.logits.data.dtype)
    onehot[0, target_class] = 1.0
    target_logit = T.mul(res.logits, Tensor(onehot)).sum()
    T.backward(target_logit)

    feats = res.tokenizer_features
    grads = feats.grad
    if grads is None:
        grads = np.zeros_like(feats.data)
    alpha = grads[0].mean(axis=(1, 2))                       # [D']
    cam = np.maximum(np.einsum("d,dhw->hw", alpha, feats.data[0]), 0.0)
    cam = resize_bilinear(cam, cfg.input_size, cfg.input_size)
    cam = np.maximum(cam, 0.0)
    return Heatmap(values=_normalize(cam), target_class=target_class,
                   predicted_class=int(M.predict(res.logits)[0]),
                   source=f"tok{cfg.conv_blocks - 1}")


def pool_attention_map(pool_weights: Tensor, cfg: CctConfig) -> Heatmap:
    """Sequence-pooling weights reshaped to the tokenizer grid and upsampled."""
    seq = pool_weights.shape[-1]
    side = cfg.grid_size()
    if side * side != seq:
        raise ShapeMismatchError(
            f"sequence length {seq} does not match the {side}x{side} tokenizer grid")
    grid = np.asarray(pool_weights.data, dtype=np.float64).reshape(side, side)
    up = resize_bilinear(grid, cfg.input_size, cfg.input_size)
    return Heatmap(values=_normalize(up), target_class=-1, predicted_class=-1,
                   source="seq_pool")


def _jet_table() -> np.ndarray:
    """Fixed 256-entry jet-style colormap (piecewise-linear RGB ramps)."""
    x = np.arange(256) / 255.0
    r = np.clip(1.5 - np.abs(4.0 * x - 3.0), 0, 1)
    g = np.clip(1.5 - np.abs(4.0 * x - 2.0), 0, 1)
    b = np.clip(1.5 - np.abs(4.0 * x - 1.0), 0, 1)
    return np.clip(np.rint(np.stack([r, g, b], axis=1) * 255), 0, 255).astype(np.uint8)


JET_TABLE = _jet_table()


def overlay(img: ImageU8, hm: Heatmap, alpha: float) -> ImageU8:
    """Alpha-blend the colormapped heatmap over the grayscale input."""
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha {alpha} outside [0,1]")
    vals = hm.values
    if vals.shape != (img.height, img.width):
        raise ShapeMismatchError(
            f"heatmap {vals.shape} does not match image {(img.height, img.width)}")
    from .preprocess import to_gray  # local import to avoid a cycle at load
    gray = to_gray(img).data[:, :, 0].astype(np.float64)
    color = JET_TABLE[np.clip(np.rint(vals * 255), 0, 255).astype(int)].astype(np.float64)
    base = np.repeat(gray[:, :, None], 3, axis=2)
    blended = (1.0 - alpha) * base + alpha * color
    return ImageU8(np.clip(np.rint(blended), 0, 255).astype(np.uint8))
