"""End-to-end orchestration shared by the CLI subcommands: dataset assembly
with preprocessing, the epoch loop with checkpointing and curve export,
evaluation reports, pixel statistics, and explanation artifacts."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as D
from . import metrics as ME
from . import model as M
from . import training as TR
from .config import RunConfig
from .errors import ValidationError
from .gradcam import grad_cam, overlay, pool_attention_map
from .preprocess import ImageU8, preprocess_pipeline, read_png, to_gray
from .tensor import Tensor

log = logging.getLogger("cctvision")


@dataclass
class PreparedSplit:
    images: np.ndarray          # preprocessed [N, C, H, W] floats
    labels: np.ndarray
    raw: list[np.ndarray]       # original uint8 [H, W] rasters
    blobs: list                 # BlobInfo | None per sample (synthetic only)
    paths: list[str]


@dataclass
class PreparedData:
    splits: dict[str, PreparedSplit]
    class_names: list[str]

    def split(self, name: str) -> PreparedSplit:
        return self.splits[name]


def _preprocess_stack(run: RunConfig, rasters: list[np.ndarray]) -> np.ndarray:
    dt = run.model.dtype
    out = [preprocess_pipeline(ImageU8(r[:, :, None] if r.ndim == 2 else r),
                               run.model, run.clahe, run.ben_graham).data.astype(dt)
           for r in rasters]
    return np.stack(out)


def prepare_data(run: RunConfig) -> PreparedData:
    """Build preprocessed train/val/test arrays per the run configuration."""
    if run.data.kind == "synthetic":
        ds = D.synth_generate(run.data.n_per_class, run.data.synth_size, run.seed)
        assign = D.stratified_assignments(ds.labels, run.data.split, run.seed)
        splits = {}
        for name in ("train", "val", "test"):
            sel = np.flatnonzero(assign == name)
            rasters = [ds.images[i] for i in sel]
            splits[name] = PreparedSplit(
                images=_preprocess_stack(run, rasters) if len(sel) else
                np.zeros((0, run.model.input_channels, run.model.input_size,
                          run.model.input_size), dtype=run.model.dtype),
                labels=ds.labels[sel],
                raw=rasters,
                blobs=[ds.blobs[i] for i in sel],
                paths=[f"synthetic/{i}" for i in sel])
        return PreparedData(splits=splits, class_names=ds.class_names)

    class_map, class_names = ((D.BINARY_CLASS_MAP, D.BINARY_CLASS_NAMES)
                              if run.data.class_map == "binary"
                              else (D.FOUR_CLASS_MAP, D.FOUR_CLASS_NAMES))
    if run.model.num_classes != len(class_names):
        raise ValidationError(
            f"model.num_classes={run.model.num_classes} does not match "
            f"{run.data.class_map} class map ({len(class_names)} classes)")
    manifest = D.scan_folder(run.data.root, class_map, class_names)
    D.split(manifest, run.data.split, run.seed)
    splits = {}
    for name in ("train", "val", "test"):
        entries = manifest.split_entries(name)
        rasters = [to_gray(read_png(e.path)).data[:, :, 0] for e in entries]
        splits[name] = PreparedSplit(
            images=_preprocess_stack(run, rasters) if entries else
            np.zeros((0, run.model.input_channels, run.model.input_size,
                      run.model.input_size), dtype=run.model.dtype),
            labels=np.asarray([e.label for e in entries], dtype=int),
            raw=rasters,
            blobs=[None] * len(entries),
            paths=[e.path for e in entries])
    return PreparedData(splits=splits, class_names=class_names)


def write_report(truth, preds, n, class_names, out_dir: Path) -> ME.EvalReport:
    rep = ME.evaluate(truth, preds, n, class_names)
    (out_dir / "report.json").write_text(json.dumps(rep.to_dict(), indent=2))
    with open(out_dir / "confusion.csv", "w") as fh:
        fh.write("," + ",".join(class_names) + "\n")
        for i, row in enumerate(rep.confusion):
            fh.write(class_names[i] + "," + ",".join(str(int(v)) for v in row) + "\n")
    return rep


def run_training(run: RunConfig, out_dir, resume=None, prepared: PreparedData | None = None,
                 stop_when=None) -> TR.TrainState:
    """Full training run: writes ckpt_best.cct, ckpt_last.cct, curves.csv,
    report.json, and confusion.csv under ``out_dir``.

    ``stop_when(state)`` may end the loop early (used by acceptance tests);
    early stopping on validation loss applies when the optimizer config sets
    a patience.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = prepared if prepared is not None else prepare_data(run)
    train = data.split("train")
    val = data.split("val")
    if len(train.labels) == 0:
        raise ValidationError("training split is empty")

    cfg = run.model
    opt = run.optimizer
    if resume is not None:
        state, ck_cfg = TR.load_checkpoint(resume)
        if ck_cfg != cfg:
            raise ValidationError("checkpoint model config does not match run config")
    else:
        state = TR.TrainState.fresh(cfg, run.seed)

    best_val, best_loss, since_best = -1.0, float("inf"), 0
    policy = None if run.augment.is_noop() else run.augment
    while state.epoch < opt.epochs:
        TR.train_epoch(state, train.images, train.labels, policy, cfg, opt,
                       val.images if len(val.labels) else None,
                       val.labels if len(val.labels) else None)
        tl, ta, vl, va = state.history[-1]
        log.info("epoch %d: train loss %.4f acc %.3f | val loss %.4f acc %.3f",
                 state.epoch, tl, ta, vl, va)
        if len(val.labels) and va > best_val:
            best_val = va
            TR.save_checkpoint(state, cfg, out_dir / "ckpt_best.cct")
        if len(val.labels):
            if vl < best_loss - 1e-12:
                best_loss, since_best = vl, 0
            else:
                since_best += 1
                if opt.early_stop_patience is not None and since_best >= opt.early_stop_patience:
                    log.info("early stop: no val-loss improvement in %d epochs", since_best)
                    break
        if stop_when is not None and stop_when(state):
            break

    TR.save_checkpoint(state, cfg, out_dir / "ckpt_last.cct")
    if not (out_dir / "ckpt_best.cct").exists():
        TR.save_checkpoint(state, cfg, out_dir / "ckpt_best.cct")
    TR.export_curves(state, out_dir / "curves.csv")
    eval_split = val if len(val.labels) else train
    _, _, preds = TR.evaluate_split(state.params, eval_split.images, eval_split.labels,
                                    cfg, batch_size=opt.batch_size)
    write_report(eval_split.labels, preds, cfg.num_classes, data.class_names, out_dir)
    return state


def run_eval(run: RunConfig, ckpt, split_name: str, out_dir) -> ME.EvalReport:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state, cfg = TR.load_checkpoint(ckpt)
    data = prepare_data(run)
    sp = data.split(split_name)
    if len(sp.labels) == 0:
        raise ValidationError(f"split {split_name!r} is empty")
    _, _, preds = TR.evaluate_split(state.params, sp.images, sp.labels, cfg)
    return write_report(sp.labels, preds, cfg.num_classes, data.class_names, out_dir)


def run_stats(run: RunConfig, out_dir) -> list[ME.PixelStats]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = prepare_data(run)
    rasters, labels, paths = [], [], []
    for name in ("train", "val", "test"):
        sp = data.split(name)
        rasters.extend(sp.raw)
        labels.extend(sp.labels.tolist())
        paths.extend(sp.paths)
    stats = ME.pixel_stats(rasters, labels, paths)
    ME.write_pixel_stats_csv(stats, out_dir / "pixel_stats.csv")
    ME.write_pixel_kde_csv(stats, out_dir / "pixel_kde.csv")
    return stats


def run_explain(run: RunConfig, image_path, ckpt, target: int | None, out_png) -> dict:
    """Write heatmap PNG, overlay PNG, and a JSON sidecar next to ``out_png``."""
    state, cfg = TR.load_checkpoint(ckpt)
    img = read_png(image_path)
    x = Tensor(np.asarray(
        preprocess_pipeline(img, cfg, run.clahe, run.ben_graham).data[None],
        dtype=cfg.dtype))
    res = M.forward(x, state.params, cfg, training=False)
    probs = np.exp(res.logits.data[0] - res.logits.data[0].max())
    probs = probs / probs.sum()
    predicted = int(np.argmax(probs))
    target_class = predicted if target is None else target
    hm = grad_cam(x, state.params, cfg, target_class)
    pool_hm = pool_attention_map(Tensor(res.pool_weights.data[:1]), cfg)

    out_png = Path(out_png)
    gray255 = np.clip(np.rint(hm.values * 255), 0, 255).astype(np.uint8)
    from .preprocess import resize, write_png
    heat_img = ImageU8(gray255[:, :, None])
    write_png(heat_img, out_png)
    base = resize(img, cfg.input_size, cfg.input_size)
    write_png(overlay(base, hm, alpha=0.5), out_png.with_suffix(".overlay.png"))
    sidecar = {
        "image": str(image_path),
        "predicted_class": predicted,
        "probabilities": [float(p) for p in probs],
        "target_class": target_class,
        "tap": hm.source,
        "pool_attention_max": float(pool_hm.values.max()),
    }
    out_png.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))
    return sidecar
