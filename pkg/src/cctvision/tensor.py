"""Dense float tensors with reverse-mode automatic differentiation.

The graph is built define-by-run: every differentiable op links its output to
its inputs and stores a closure that maps the output gradient to input
gradients.  ``backward`` walks the recorded graph once, in reverse topological
order, accumulating additively across fan-out.

Conventions (documented, load-bearing):
  * conv2d uses the cross-correlation convention (no kernel flip).
  * maxpool2d breaks ties at the first occurrence in row-major window scan.
  * relu's subgradient at exactly 0 is 0.
  * float64 everywhere for test oracles; float32 is allowed for training speed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import erf

from .errors import ShapeMismatchError, GeometryError

_FLOAT_DTYPES = (np.float32, np.float64)
_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


class Tensor:
    """N-dimensional float array with an optional gradient buffer.

    ``data`` is immutable by convention once the tensor participates in a
    graph; only ``grad`` is mutated (by ``backward``).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backprop")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backprop: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar; all defer to the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _node(data: np.ndarray, parents: Sequence[Tensor],
          backprop: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op result; record graph edges only if a parent needs grad."""
    tracked = [p for p in parents if p.requires_grad or p._parents]
    out = Tensor(data)
    if tracked:
        out.requires_grad = True
        out._parents = tuple(tracked)
        out._backprop = backprop
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not (t.requires_grad or t._parents):
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
        if t.grad.shape != t.data.shape:
            t.grad = np.broadcast_to(g, t.data.shape).astype(t.data.dtype)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = a.data + b.data

    def backprop(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _node(out, (a, b), backprop)


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = a.data - b.data

    def backprop(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _node(out, (a, b), backprop)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = a.data * b.data

    def backprop(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node(out, (a, b), backprop)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def backprop(g):
        _accum(x, g.reshape(x.shape))

    return _node(out, (x,), backprop)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = x.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def backprop(g):
        _accum(x, g.transpose(inv))

    return _node(out, (x,), backprop)


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backprop(g):
        gg = np.asarray(g)
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _accum(x, np.broadcast_to(gg, x.shape).copy())

    return _node(out, (x,), backprop)


def tmean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    count = x.size if axis is None else np.prod(
        [x.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def backprop(g):
        gg = np.asarray(g) / count
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _accum(x, np.broadcast_to(gg, x.shape).copy())

    return _node(out, (x,), backprop)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)

    def backprop(g):
        _accum(x, g * mask)

    return _node(out, (x,), backprop)


def gelu(x: Tensor) -> Tensor:
    xd = x.data
    e = erf(xd * _INV_SQRT2)
    out = 0.5 * xd * (1.0 + e)

    def backprop(g):
        d = 0.5 * (1.0 + e) + xd * np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
        _accum(x, g * d)

    return _node(out, (x,), backprop)


def softmax(x: Tensor, axis: int) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeMismatchError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backprop(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accum(x, out * (g - dot))

    return _node(out, (x,), backprop)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatchError(
            f"layernorm expects gain/bias of shape ({d},); got {gain.shape} and {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gain.data * xhat + bias.data

    def backprop(g):
        reduce_axes = tuple(range(x.ndim - 1))
        _accum(gain, (g * xhat).sum(axis=reduce_axes))
        _accum(bias, g.sum(axis=reduce_axes))
        dxhat = g * gain.data
        dx = inv * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        _accum(x, dx)

    return _node(out, (x, gain, bias), backprop)


# ---------------------------------------------------------------------------
# linear algebra / spatial kernels
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(
            f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = a.data @ b.data

    def backprop(g):
        _accum(a, _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape))
        _accum(b, _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape))

    return _node(out, (a, b), backprop)


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    bb, cc = xp.shape[0], xp.shape[1]
    s0, s1, s2, s3 = xp.strides
    return as_strided(
        xp, shape=(bb, cc, k, k, ho, wo),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride), writeable=False)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of [B,C,H,W] with kernels [D,C,k,k]."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatchError(f"conv2d expects 4-D input and kernels; got {x.shape}, {w.shape}")
    b, c, h, wdt = x.shape
    d, ck, kh, kw = w.shape
    if ck != c or kh != kw:
        raise ShapeMismatchError(f"conv2d: kernels {w.shape} do not match input channels {c}")
    k = kh
    if stride < 1:
        raise GeometryError(f"conv2d stride must be >= 1, got {stride}")
    if k > h + 2 * padding or k > wdt + 2 * padding:
        raise GeometryError(
            f"conv2d kernel {k} larger than padded input {h + 2 * padding}x{wdt + 2 * padding}")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wdt + 2 * padding - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, k, stride, ho, wo)
    out = np.tensordot(w.data, cols, axes=([1, 2, 3], [1, 2, 3]))  # [D,B,Ho,Wo]
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))

    def backprop(g):
        dw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))
        _accum(w, dw)
        if x.requires_grad or x._parents:
            # dcols[c,i,j,b,ho,wo] = sum_d w[d,c,i,j] * g[b,d,ho,wo]
            dcols = np.tensordot(w.data, g, axes=([0], [1]))
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        dcols[:, i, j].transpose(1, 0, 2, 3)
            if padding:
                dxp = dxp[:, :, padding:padding + h, padding:padding + wdt]
            _accum(x, dxp)

    return _node(out, (x, w), backprop)


def maxpool2d(x: Tensor, window: int, stride: int) -> Tensor:
    """Per-window maximum over [B,D,H,W]; ties go to the first row-major hit."""
    if x.ndim != 4:
        raise ShapeMismatchError(f"maxpool2d expects 4-D input; got {x.shape}")
    b, d, h, w = x.shape
    if window > h or window > w:
        raise GeometryError(f"maxpool2d window {window} exceeds input {h}x{w}")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    wins = _im2col(x.data, window, stride, ho, wo)  # [B,D,k,k,Ho,Wo]
    flat = wins.transpose(0, 1, 4, 5, 2, 3).reshape(b, d, ho, wo, window * window)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backprop(g):
        iy = np.arange(ho)[:, None] * stride + idx // window
        ix = np.arange(wo)[None, :] * stride + idx % window
        plane = np.arange(b * d)[:, None] * (h * w)
        flat_idx = plane + (iy * w + ix).reshape(b * d, -1)
        dx = np.bincount(flat_idx.reshape(-1), weights=g.reshape(-1).astype(np.float64),
                         minlength=b * d * h * w)
        _accum(x, dx.reshape(x.shape).astype(x.data.dtype))

    return _node(out, (x,), backprop)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; caller supplies a deterministic generator."""
    if p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    out = x.data * keep

    def backprop(g):
        _accum(x, g * keep)

    return _node(out, (x,), backprop)


def cross_entropy_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-softmax of the true class; log-sum-exp stabilized.

    Backward uses the closed form (softmax - one_hot) / B.
    """
    labels = np.asarray(labels)
    b, n = logits.shape
    if labels.shape != (b,):
        raise ShapeMismatchError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n:
        raise ShapeMismatchError(f"labels out of range [0,{n})")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    picked = z[np.arange(b), labels]
    out = np.asarray((lse - picked).mean())

    def backprop(g):
        p = np.exp(z - m)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(b), labels] -= 1.0
        _accum(logits, g * p / b)

    return _node(out, (logits,), backprop)


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor the scalar ``loss`` depends on."""
    if loss.size != 1:
        raise ShapeMismatchError(f"backward needs a scalar loss; got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backprop is not None and node.grad is not None:
            node._backprop(node.grad)


@dataclass
class GradCheckReport:
    max_rel_err: float
    checked: int
    skipped: int

    def passed(self, tol: float) -> bool:
        return self.checked > 0 and self.max_rel_err < tol


def grad_check(f, x: Tensor, h: float = 1e-5, tol: float = 1e-4,
               kink_rel: float = 1e-2) -> GradCheckReport:
    """Compare backward gradients of scalar ``f(x)`` to central differences.

    Coordinates where forward and backward one-sided differences disagree by
    more than ``kink_rel`` (relative) sit next to a non-differentiable point
    and are excluded, as is a coordinate whose gradient is negligibly small
    in both estimates.
    """
    assert x.data.dtype == np.float64, "grad_check requires float64 inputs"
    x.grad = None
    y = f(x)
    backward(y)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    f0 = float(f(x).data)

    flat = x.data.reshape(-1)
    a_flat = analytic.reshape(-1)
    max_err, checked, skipped = 0.0, 0, 0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x).data)
        flat[i] = orig - h
        fm = float(f(x).data)
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * h)
        d_plus = (fp - f0) / h
        d_minus = (f0 - fm) / h
        scale = max(abs(d_plus), abs(d_minus), 1.0)
        if abs(d_plus - d_minus) > kink_rel * scale:
            skipped += 1
            continue
        a = a_flat[i]
        denom = max(abs(a), abs(numeric))
        if denom < 1e-6:
            checked += 1
            continue
        max_err = max(max_err, abs(a - numeric) / denom)
        checked += 1
    return GradCheckReport(max_rel_err=max_err, checked=checked, skipped=skipped)


# ---------------------------------------------------------------------------
# serialization: rank + shape as little-endian uint32, payload float32 LE
# ---------------------------------------------------------------------------

def write_array(fh, arr: np.ndarray) -> None:
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_array(fh) -> np.ndarray:
    raw = fh.read(4)
    if len(raw) != 4:
        raise EOFError("truncated tensor header")
    (rank,) = struct.unpack("<I", raw)
    raw = fh.read(4 * rank)
    if len(raw) != 4 * rank:
        raise EOFError("truncated tensor shape")
    shape = struct.unpack(f"<{rank}I", raw)
    count = int(np.prod(shape)) if rank else 1
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise EOFError("truncated tensor payload")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
