"""Training loop: cross-entropy loss, Adam updates, epoch bookkeeping,
checkpointing, and learning-curve export.

Checkpoint file layout: magic ``CCT1``, a little-endian uint32 header
length, a JSON header (model config, optimizer state scalars, history, and
a named-tensor directory with payload offsets), then raw tensor payloads in
directory order, each serialized as rank + shape (uint32) + float32 data.
Round-trips are bit-exact at 32-bit training precision.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from . import tensor as T
from .augment import AugmentPolicy, sample_augment
from .data import batches
from .errors import CheckpointError, ShapeMismatchError, ValidationError
from .model import CctConfig, CctParams
from .tensor import Tensor

_MAGIC = b"CCT1"


@dataclass
class OptimizerConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 150
    early_stop_patience: int | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown optimizer config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainState:
    params: CctParams
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    epoch: int = 0
    seed: int = 0
    history: list[list[float]] = field(default_factory=list)

    @classmethod
    def fresh(cls, cfg: CctConfig, seed: int) -> "TrainState":
        params = M.init_params(cfg, seed)
        m = {n: np.zeros_like(params[n].data) for n in params.names()}
        v = {n: np.zeros_like(params[n].data) for n in params.names()}
        return cls(params=params, m=m, v=v, seed=seed)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean -log softmax(logits)[label], log-sum-exp stabilized."""
    return T.cross_entropy_with_logits(logits, np.asarray(labels))


def adam_step(state: TrainState, grads: dict[str, np.ndarray], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> TrainState:
    """Bias-corrected adaptive moment update, in place, deterministic."""
    state.step += 1
    t = state.step
    for name in state.params.names():
        g = grads.get(name)
        if g is None:
            continue
        p = state.params[name]
        if g.shape != p.data.shape:
            raise ShapeMismatchError(
                f"gradient for {name} has shape {g.shape}, parameter {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        p.data = p.data - (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype)
    return state


def _batch_rng(seed: int, epoch: int, batch_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence((seed, 0xD0, epoch, batch_index))))


def train_epoch(state: TrainState, images: np.ndarray, labels: np.ndarray,
                policy: AugmentPolicy | None, cfg: CctConfig,
                opt: OptimizerConfig,
                val_images: np.ndarray | None = None,
                val_labels: np.ndarray | None = None) -> TrainState:
    """One pass over the training split: augment, forward, loss, backward,
    Adam.  Appends (train_loss, train_acc, val_loss, val_acc) to history."""
    n = len(labels)
    if n == 0:
        raise ValidationError("train_epoch on an empty split")
    epoch = state.epoch
    dt = cfg.dtype
    losses, correct = [], 0
    for bi, (xb, yb, idx) in enumerate(
            batches(images, labels, opt.batch_size, state.seed, epoch,
                    shuffle=True, return_indices=True)):
        if policy is not None:
            augmented = [sample_augment(Tensor(xb.data[j]), policy,
                                        epoch * n + int(idx[j])).data
                         for j in range(len(idx))]
            xb = Tensor(np.stack(augmented))
        x = Tensor(np.asarray(xb.data, dtype=dt))
        rng = _batch_rng(state.seed, epoch, bi)
        res = M.forward(x, state.params, cfg, rng=rng, training=True)
        loss = cross_entropy(res.logits, yb)
        state.params.zero_grads()
        T.backward(loss)
        grads = {nm: state.params[nm].grad for nm in state.params.names()
                 if state.params[nm].grad is not None}
        adam_step(state, grads, opt.lr, opt.beta1, opt.beta2, opt.eps)
        losses.append(loss.item() * len(yb))
        correct += int((M.predict(res.logits) == yb).sum())
    train_loss = float(np.sum(losses) / n)
    train_acc = correct / n
    if val_images is not None and len(val_labels):
        val_loss, val_acc, _ = evaluate_split(state.params, val_images, val_labels, cfg,
                                              batch_size=opt.batch_size)
    else:
        val_loss, val_acc = float("nan"), float("nan")
    state.history.append([train_loss, train_acc, val_loss, val_acc])
    state.epoch += 1
    return state


def evaluate_split(params: CctParams, images: np.ndarray, labels: np.ndarray,
                   cfg: CctConfig, batch_size: int = 32):
    """No augmentation, dropout off.  Returns (loss, accuracy, predictions)."""
    n = len(labels)
    if n == 0:
        raise ValidationError("evaluate_split on an empty split")
    dt = cfg.dtype
    total_loss, preds = 0.0, []
    for xb, yb in batches(images, labels, batch_size, 0, 0, shuffle=False):
        x = Tensor(np.asarray(xb.data, dtype=dt))
        res = M.forward(x, params, cfg, training=False)
        total_loss += cross_entropy(res.logits, yb).item() * len(yb)
        preds.append(M.predict(res.logits))
    preds = np.concatenate(preds)
    acc = float(np.mean(preds == labels))
    return total_loss / n, acc, preds


def save_checkpoint(state: TrainState, cfg: CctConfig, path) -> None:
    names = state.params.names()
    directory = []
    offset = 0
    arrays = []
    for prefix, table in (("p.", {n: state.params[n].data for n in names}),
                          ("m.", state.m), ("v.", state.v)):
        for n in names:
            arr = table[n]
            size = 4 + 4 * arr.ndim + 4 * arr.size
            directory.append({"name": prefix + n, "offset": offset,
                              "shape": list(arr.shape)})
            arrays.append(arr)
            offset += size
    header = json.dumps({
        "config": cfg.to_dict(),
        "step": state.step,
        "epoch": state.epoch,
        "seed": state.seed,
        "history": state.history,
        "tensors": directory,
    }).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for arr in arrays:
            T.write_array(fh, arr)


def load_checkpoint(path) -> tuple[TrainState, CctConfig]:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != _MAGIC:
                raise CheckpointError(f"{path}: bad magic {magic!r}")
            raw = fh.read(4)
            if len(raw) != 4:
                raise CheckpointError(f"{path}: truncated header length")
            (hlen,) = struct.unpack("<I", raw)
            raw = fh.read(hlen)
            if len(raw) != hlen:
                raise CheckpointError(f"{path}: truncated header")
            try:
                header = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CheckpointError(f"{path}: corrupt JSON header: {exc}") from exc
            cfg = CctConfig.from_dict(header["config"])
            dt = cfg.dtype
            tables: dict[str, dict[str, np.ndarray]] = {"p.": {}, "m.": {}, "v.": {}}
            for entry in header["tensors"]:
                try:
                    arr = T.read_array(fh)
                except EOFError as exc:
                    raise CheckpointError(f"{path}: truncated payload at "
                                          f"{entry['name']}: {exc}") from exc
                if list(arr.shape) != entry["shape"]:
                    raise CheckpointError(
                        f"{path}: tensor {entry['name']} shape {list(arr.shape)} "
                        f"does not match directory {entry['shape']}")
                prefix, name = entry["name"][:2], entry["name"][2:]
                tables[prefix][name] = arr.astype(dt)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    params = CctParams({n: Tensor(a, requires_grad=True)
                        for n, a in tables["p."].items()})
    state = TrainState(params=params, m=tables["m."], v=tables["v."],
                       step=header["step"], epoch=header["epoch"],
                       seed=header["seed"],
                       history=[list(map(float, h)) for h in header["history"]])
    return state, cfg


def export_curves(state: TrainState, path) -> None:
    if not state.history:
        raise ValidationError("export_curves with empty history")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        for i, row in enumerate(state.history, start=1):
            w.writerow([i] + [repr(float(x)) for x in row])
