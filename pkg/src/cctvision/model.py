"""Compact Convolutional Transformer: convolutional tokenizer, pre-norm
transformer encoder, attention sequence pooling, and a linear head.

Encoder internals follow the standard pre-norm design (LN -> multi-head
self-attention -> residual; LN -> GELU MLP -> residual).  Sequence pooling
scores each token with a learned D-vector, softmaxes over the sequence, and
averages tokens under those weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .errors import GeometryError, ShapeMismatchError, ValidationError
from .tensor import Tensor


@dataclass
class CctConfig:
    input_channels: int = 2
    input_size: int = 64
    conv_blocks: int = 2
    tokenizer_kernel: int = 3
    tokenizer_stride: int = 1
    tokenizer_padding: int = 1
    pool_window: int = 3
    pool_stride: int = 2
    embed_dim: int = 128
    encoder_layers: int = 2
    heads: int = 4
    mlp_ratio: float = 2.0
    dropout: float = 0.1
    num_classes: int = 2
    positional_embedding: str = "learnable"  # "learnable" | "none"
    precision: int = 32  # 32 | 64

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ValidationError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.positional_embedding not in ("learnable", "none"):
            raise ValidationError(
                f"positional_embedding must be 'learnable' or 'none', got {self.positional_embedding!r}")
        if self.precision not in (32, 64):
            raise ValidationError(f"precision must be 32 or 64, got {self.precision}")
        if self.num_classes < 2:
            raise ValidationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.conv_blocks < 1:
            raise ValidationError("conv_blocks must be >= 1")
        if self.grid_size() < 1:
            raise GeometryError(
                f"tokenizer collapses a {self.input_size}px input below 1x1")

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    def block_channels(self) -> list[int]:
        """Output channels per conv block; earlier blocks use half widths."""
        return [max(self.embed_dim >> (self.conv_blocks - 1 - i), 1)
                for i in range(self.conv_blocks)]

    def grid_size(self) -> int:
        """Spatial side of the tokenizer output feature map."""
        s = self.input_size
        for _ in range(self.conv_blocks):
            s = (s + 2 * self.tokenizer_padding - self.tokenizer_kernel) // self.tokenizer_stride + 1
            if s < self.pool_window:
                return 0
            s = (s - self.pool_window) // self.pool_stride + 1
        return s

    @property
    def seq_len(self) -> int:
        return self.grid_size() ** 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CctConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class CctParams:
    """Named parameter tensors; shapes derive from a CctConfig."""

    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def all_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self.tensors.values())


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) with tails beyond three sigma redrawn."""
    out = rng.normal(0.0, std, size=shape)
    while True:
        mask = np.abs(out) > 3.0 * std
        if not mask.any():
            return out
        out[mask] = rng.normal(0.0, std, size=int(mask.sum()))


def init_params(cfg: CctConfig, seed: int) -> CctParams:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    dt = cfg.dtype
    p: dict[str, Tensor] = {}

    def param(name, arr):
        p[name] = Tensor(np.asarray(arr, dtype=dt), requires_grad=True)

    in_ch = cfg.input_channels
    for i, out_ch in enumerate(cfg.block_channels()):
        fan_in = in_ch * cfg.tokenizer_kernel ** 2
        limit = 1.0 / np.sqrt(fan_in)
        param(f"tok{i}.kernel",
              rng.uniform(-limit, limit, (out_ch, in_ch, cfg.tokenizer_kernel, cfg.tokenizer_kernel)))
        param(f"tok{i}.bias", np.zeros(out_ch))
        in_ch = out_ch

    d = cfg.embed_dim
    if cfg.positional_embedding == "learnable":
        param("pos_embed", _trunc_normal(rng, (1, cfg.seq_len, d), 0.02))
    for l in range(cfg.encoder_layers):
        pre = f"layer{l}."
        for nm in ("wq", "wk", "wv", "wo"):
            param(pre + f"attn.{nm}", _trunc_normal(rng, (d, d), 0.02))
            param(pre + f"attn.{nm}_bias", np.zeros(d))
        hidden = int(round(cfg.mlp_ratio * d))
        param(pre + "mlp.w1", _trunc_normal(rng, (d, hidden), 0.02))
        param(pre + "mlp.b1", np.zeros(hidden))
        param(pre + "mlp.w2", _trunc_normal(rng, (hidden, d), 0.02))
        param(pre + "mlp.b2", np.zeros(d))
        for nm in ("ln1", "ln2"):
            param(pre + nm + ".gain", np.ones(d))
            param(pre + nm + ".bias", np.zeros(d))
    param("pool.g", _trunc_normal(rng, (d, 1), 0.02))
    param("head.w", _trunc_normal(rng, (d, cfg.num_classes), 0.02))
    param("head.b", np.zeros(cfg.num_classes))
    return CctParams(p)


@dataclass
class ForwardResult:
    logits: Tensor                  # [B, n]
    pool_weights: Tensor            # [B, seq]
    attn_weights: list[Tensor]      # per layer, [B, heads, seq, seq]
    tokenizer_features: Tensor      # [B, D', H'', W''] (last conv block output)
    pooled: Tensor                  # [B, D]


def tokenize(x: Tensor, params: CctParams, cfg: CctConfig):
    """Conv->ReLU->MaxPool blocks, flattened to a [B, seq, D] token sequence.

    Returns (tokens, spatial feature map of the last block) so saliency code
    can tap the only explicitly 2-D representation.
    """
    b = x.shape[0]
    if x.shape[1] != cfg.input_channels:
        raise ShapeMismatchError(
            f"input has {x.shape[1]} channels, config expects {cfg.input_channels}")
    feat = x
    for i in range(cfg.conv_blocks):
        kern = params[f"tok{i}.kernel"]
        bias = params[f"tok{i}.bias"]
        feat = T.conv2d(feat, kern, stride=cfg.tokenizer_stride, padding=cfg.tokenizer_padding)
        feat = T.add(feat, bias.reshape((1, -1, 1, 1)))
        feat = T.relu(feat)
        if feat.shape[2] < cfg.pool_window or feat.shape[3] < cfg.pool_window:
            raise GeometryError(
                f"conv block {i} output {feat.shape[2]}x{feat.shape[3]} smaller than pool window")
        feat = T.maxpool2d(feat, cfg.pool_window, cfg.pool_stride)
    d = feat.shape[1]
    tokens = T.transpose(feat.reshape((b, d, -1)), (0, 2, 1))  # [B, seq, D]
    if cfg.positional_embedding == "learnable":
        tokens = T.add(tokens, params["pos_embed"])
    return tokens, feat


def _attention(x: Tensor, params: CctParams, pre: str, cfg: CctConfig,
               rng, training: bool):
    b, s, d = x.shape
    h = cfg.heads
    dh = d // h

    def proj(nm):
        w = params[pre + f"attn.{nm}"]
        bias = params[pre + f"attn.{nm}_bias"]
        out = T.add(T.matmul(x, w), bias)
        return T.transpose(out.reshape((b, s, h, dh)), (0, 2, 1, 3))  # [B,h,s,dh]

    q, k, v = proj("wq"), proj("wk"), proj("wv")
    scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    attn = T.softmax(scores, axis=-1)
    ctx = T.matmul(attn, v)  # [B,h,s,dh]
    ctx = T.transpose(ctx, (0, 2, 1, 3)).reshape((b, s, d))
    out = T.add(T.matmul(ctx, params[pre + "attn.wo"]), params[pre + "attn.wo_bias"])
    if training and cfg.dropout > 0:
        out = T.dropout(out, cfg.dropout, rng)
    return out, attn


def encode(tokens: Tensor, params: CctParams, cfg: CctConfig,
           rng=None, training: bool = False):
    """Stack of pre-norm encoder blocks; zero layers is the identity map."""
    x = tokens
    attn_maps = []
    for l in range(cfg.encoder_layers):
        pre = f"layer{l}."
        normed = T.layernorm(x, params[pre + "ln1.gain"], params[pre + "ln1.bias"])
        attn_out, attn = _attention(normed, params, pre, cfg, rng, training)
        attn_maps.append(attn)
        x = T.add(x, attn_out)
        normed = T.layernorm(x, params[pre + "ln2.gain"], params[pre + "ln2.bias"])
        hid = T.gelu(T.add(T.matmul(normed, params[pre + "mlp.w1"]), params[pre + "mlp.b1"]))
        mlp_out = T.add(T.matmul(hid, params[pre + "mlp.w2"]), params[pre + "mlp.b2"])
        if training and cfg.dropout > 0:
            mlp_out = T.dropout(mlp_out, cfg.dropout, rng)
        x = T.add(x, mlp_out)
    return x, attn_maps


def seq_pool(z: Tensor, g: Tensor):
    """Attention pooling over the token axis.

    scores = z @ g -> softmax over seq -> pooled = weighted token average.
    Returns (pooled [B, D], weights [B, seq]).
    """
    if z.ndim != 3 or g.shape != (z.shape[2], 1):
        raise ShapeMismatchError(f"seq_pool: tokens {z.shape} vs score vector {g.shape}")
    b, s, d = z.shape
    scores = T.matmul(z, g)                    # [B, seq, 1]
    weights = T.softmax(scores, axis=1)
    pooled = T.matmul(T.transpose(weights, (0, 2, 1)), z)   # [B, 1, D]
    return pooled.reshape((b, d)), weights.reshape((b, s))


def classify_head(pooled: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    if pooled.shape[1] != w.shape[0]:
        raise ShapeMismatchError(f"head: pooled {pooled.shape} vs weights {w.shape}")
    return T.add(T.matmul(pooled, w), bias)


def forward(x: Tensor, params: CctParams, cfg: CctConfig,
            rng=None, training: bool = False) -> ForwardResult:
    if training and cfg.dropout > 0 and rng is None:
        raise ValidationError("training-mode forward with dropout needs an rng")
    tokens, feat = tokenize(x, params, cfg)
    encoded, attn_maps = encode(tokens, params, cfg, rng, training)
    pooled, weights = seq_pool(encoded, params["pool.g"])
    logits = classify_head(pooled, params["head.w"], params["head.b"])
    return ForwardResult(logits=logits, pool_weights=weights, attn_weights=attn_maps,
                         tokenizer_features=feat, pooled=pooled)


def predict(logits: Tensor) -> np.ndarray:
    return logits.data.argmax(axis=1)
