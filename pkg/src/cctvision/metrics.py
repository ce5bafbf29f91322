"""Classification metrics (confusion matrix, precision/recall/F1, accuracy,
hamming loss) and per-image pixel-distribution statistics with a Gaussian
KDE export for plotting."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import gaussian_kde

from .errors import ValidationError


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    degenerate: bool = False  # a zero-denominator metric was reported as 0


@dataclass
class EvalReport:
    confusion: np.ndarray             # rows = truth, cols = predicted
    per_class: list[ClassMetrics]
    macro_avg: tuple[float, float, float]
    weighted_avg: tuple[float, float, float]
    accuracy: float
    hamming_loss: float
    class_names: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "per_class": [vars(c) for c in self.per_class],
            "macro_avg": list(self.macro_avg),
            "weighted_avg": list(self.weighted_avg),
            "accuracy": self.accuracy,
            "hamming_loss": self.hamming_loss,
            "class_names": self.class_names,
        }


def confusion_matrix(truth, pred, n: int) -> np.ndarray:
    truth = np.asarray(truth, dtype=int)
    pred = np.asarray(pred, dtype=int)
    if truth.shape != pred.shape:
        raise ValidationError(f"length mismatch: {truth.shape} vs {pred.shape}")
    if truth.size and (min(truth.min(), pred.min()) < 0
                       or max(truth.max(), pred.max()) >= n):
        raise ValidationError(f"labels outside [0,{n})")
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    return counts


def hamming_loss(truth, pred) -> float:
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.shape != pred.shape:
        raise ValidationError(f"length mismatch: {truth.shape} vs {pred.shape}")
    if truth.size == 0:
        raise ValidationError("hamming_loss of empty input")
    return float(np.mean(truth != pred))


def prf1_report(confusion: np.ndarray, class_names: list[str] | None = None) -> EvalReport:
    confusion = np.asarray(confusion)
    n = confusion.shape[0]
    total = confusion.sum()
    per_class: list[ClassMetrics] = []
    for c in range(n):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        support = int(confusion[c, :].sum())
        degenerate = False
        if tp + fp == 0:
            precision, degenerate = 0.0, True
        else:
            precision = tp / (tp + fp)
        if tp + fn == 0:
            recall, degenerate = 0.0, True
        else:
            recall = tp / (tp + fn)
        if precision + recall == 0:
            f1, degenerate = 0.0, True
        else:
            f1 = 2 * precision * recall / (precision + recall)
        if degenerate:
            warnings.warn(f"class {c}: zero-denominator metric reported as 0")
        per_class.append(ClassMetrics(float(precision), float(recall), float(f1),
                                      support, degenerate))

    macro = tuple(float(np.mean([getattr(c, k) for c in per_class]))
                  for k in ("precision", "recall", "f1"))
    if total > 0:
        weighted = tuple(float(sum(getattr(c, k) * c.support for c in per_class) / total)
                         for k in ("precision", "recall", "f1"))
        accuracy = float(np.trace(confusion) / total)
    else:
        weighted = (0.0, 0.0, 0.0)
        accuracy = 0.0
    return EvalReport(confusion=confusion, per_class=per_class, macro_avg=macro,
                      weighted_avg=weighted, accuracy=accuracy,
                      hamming_loss=1.0 - accuracy,
                      class_names=class_names or [str(i) for i in range(n)])


def evaluate(truth, pred, n: int, class_names: list[str] | None = None) -> EvalReport:
    rep = prf1_report(confusion_matrix(truth, pred, n), class_names)
    if len(np.asarray(truth)):
        rep.hamming_loss = hamming_loss(truth, pred)
    return rep


@dataclass
class PixelStats:
    path: str
    label: int
    mean: float
    max: float
    min: float


def pixel_stats(images, labels, paths=None) -> list[PixelStats]:
    """Per-image mean/max/min of [0,1]-normalized pixels."""
    out = []
    for i, img in enumerate(images):
        arr = np.asarray(img, dtype=np.float64)
        if arr.max() > 1.0:
            arr = arr / 255.0
        path = paths[i] if paths is not None else f"image_{i}"
        out.append(PixelStats(path=path, label=int(labels[i]),
                              mean=float(arr.mean()), max=float(arr.max()),
                              min=float(arr.min())))
    return out


def write_pixel_stats_csv(stats: list[PixelStats], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "label", "mean", "max", "min"])
        for s in stats:
            w.writerow([s.path, s.label, repr(s.mean), repr(s.max), repr(s.min)])


def write_pixel_kde_csv(stats: list[PixelStats], path, grid_points: int = 256) -> None:
    """Per class and statistic, a Silverman-bandwidth Gaussian KDE sampled on
    a uniform [0,1] grid; lets any plotting tool redraw the density figures."""
    grid = np.linspace(0.0, 1.0, grid_points)
    rows = []
    labels = sorted({s.label for s in stats})
    for label in labels:
        for stat in ("mean", "max", "min"):
            vals = np.asarray([getattr(s, stat) for s in stats if s.label == label])
            if len(vals) < 2 or np.ptp(vals) < 1e-12:
                density = np.zeros_like(grid)
                if len(vals):  # degenerate: all mass at one point
                    density[np.argmin(np.abs(grid - vals.mean()))] = float(len(vals))
            else:
                density = gaussian_kde(vals, bw_method="silverman")(grid)
            rows.extend((stat, label, x, d) for x, d in zip(grid, density))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stat", "label", "x", "density"])
        for r in rows:
            w.writerow(r)
