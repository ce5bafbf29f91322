"""Dataset handling: labeled-folder ingestion, deterministic stratified
splits, a synthetic desk-scale dataset with a localizable bright-blob signal,
and seeded batching over preprocessed tensors."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetError, ValidationError
from .filters import resize_bilinear
from .preprocess import read_png
from .tensor import Tensor

# COVID-19 Radiography folder names -> (class name, label)
BINARY_CLASS_MAP = {
    "Normal": "healthy",
    "COVID": "diseased",
    "Viral Pneumonia": "diseased",
    "Lung_Opacity": "diseased",
}
BINARY_CLASS_NAMES = ["healthy", "diseased"]

FOUR_CLASS_MAP = {
    "Normal": "normal",
    "COVID": "covid",
    "Viral Pneumonia": "viral_pneumonia",
    "Lung_Opacity": "lung_opacity",
}
FOUR_CLASS_NAMES = ["normal", "covid", "viral_pneumonia", "lung_opacity"]


@dataclass
class ManifestEntry:
    path: str
    label: int
    class_name: str
    split: str = "train"  # train | val | test


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    class_names: list[str]
    seed: int = 0
    skipped: list[str] = field(default_factory=list)

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def to_json(self) -> str:
        return json.dumps({
            "class_names": self.class_names,
            "seed": self.seed,
            "skipped": self.skipped,
            "entries": [vars(e) for e in self.entries],
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        return cls(entries=[ManifestEntry(**e) for e in d["entries"]],
                   class_names=d["class_names"], seed=d.get("seed", 0),
                   skipped=d.get("skipped", []))


def scan_folder(root, class_map: dict[str, str] | None = None,
                class_names: list[str] | None = None) -> DatasetManifest:
    """Enumerate `<root>/<Folder>/*.png` with labels from ``class_map``.

    Unreadable files are skipped with a warning and recorded in the manifest.
    """
    root = Path(root)
    if class_map is None:
        class_map, class_names = BINARY_CLASS_MAP, BINARY_CLASS_NAMES
    if class_names is None:
        class_names = sorted(set(class_map.values()))
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    present = [d for d in class_map if (root / d).is_dir()]
    if not present:
        raise DatasetError(
            f"no class folders found under {root}; expected any of {sorted(class_map)}")

    entries: list[ManifestEntry] = []
    skipped: list[str] = []
    for folder in sorted(present):
        cname = class_map[folder]
        label = class_names.index(cname)
        paths = sorted((root / folder).rglob("*.png"))
        if not paths:
            raise DatasetError(f"class folder {root / folder} contains no PNG files")
        for p in paths:
            try:
                read_png(p)
            except Exception:
                warnings.warn(f"skipping unreadable image {p}")
                skipped.append(str(p))
                continue
            entries.append(ManifestEntry(path=str(p), label=label, class_name=cname))
    entries.sort(key=lambda e: e.path)
    return DatasetManifest(entries=entries, class_names=class_names, skipped=skipped)


def stratified_assignments(labels: np.ndarray, fractions: tuple[float, float, float],
                           seed: int, class_names: list[str] | None = None) -> np.ndarray:
    """Per-class seeded permutation into train/val/test; remainder samples go
    to train.  Returns an array of split names aligned with ``labels``."""
    ftr, fva, fte = fractions
    if min(fractions) < 0 or abs(ftr + fva + fte - 1.0) > 1e-9:
        raise ValidationError(f"split fractions {fractions} must be >= 0 and sum to 1")
    labels = np.asarray(labels)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    assign = np.full(len(labels), "train", dtype=object)
    for label in sorted(set(labels.tolist())):
        idxs = np.flatnonzero(labels == label)
        order = rng.permutation(len(idxs))
        n = len(idxs)
        n_val = int(n * fva)
        n_test = int(n * fte)
        n_train = n - n_val - n_test
        if fva > 0 and n_val == 0:
            cname = class_names[label] if class_names else str(label)
            warnings.warn(f"class {cname} has no validation samples")
        for rank, pos in enumerate(order):
            if rank < n_train:
                s = "train"
            elif rank < n_train + n_val:
                s = "val"
            else:
                s = "test"
            assign[idxs[pos]] = s
    return assign


def split(manifest: DatasetManifest, fractions: tuple[float, float, float],
          seed: int) -> DatasetManifest:
    """Stratified train/val/test assignment; remainder samples go to train."""
    labels = np.asarray([e.label for e in manifest.entries])
    assign = stratified_assignments(labels, fractions, seed, manifest.class_names)
    for e, s in zip(manifest.entries, assign):
        e.split = s
    manifest.seed = seed
    return manifest


@dataclass
class BlobInfo:
    quadrant: int      # 0=TL, 1=TR, 2=BL, 3=BR
    center: tuple[int, int]


@dataclass
class SyntheticDataset:
    """In-memory stand-in for the radiography data at desk scale."""

    images: np.ndarray          # [N, size, size] uint8
    labels: np.ndarray          # [N] int
    blobs: list[BlobInfo | None]
    class_names: list[str]
    seed: int

    def __len__(self) -> int:
        return len(self.labels)


def _low_freq_field(rng: np.random.Generator, size: int) -> np.ndarray:
    coarse = rng.normal(0.0, 1.0, (max(size // 8, 2), max(size // 8, 2)))
    field_ = resize_bilinear(coarse, size, size)
    field_ = (field_ - field_.min()) / max(np.ptp(field_), 1e-9)
    return 70.0 + 80.0 * field_  # mid-gray texture


def synth_generate(n_per_class: int, size: int, seed: int) -> SyntheticDataset:
    """Class 0: smooth noise field; class 1: same field plus a bright Gaussian
    blob confined to one random quadrant (the Grad-CAM ground truth)."""
    if n_per_class < 1 or size < 16:
        raise ValidationError("need n_per_class >= 1 and size >= 16")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    images, labels, blobs = [], [], []
    half = size // 2
    for label in (0, 1):
        for _ in range(n_per_class):
            img = _low_freq_field(rng, size)
            if label == 1:
                quad = int(rng.integers(0, 4))
                margin = size // 8
                y0 = 0 if quad in (0, 1) else half
                x0 = 0 if quad in (0, 2) else half
                cy = int(rng.integers(y0 + margin, y0 + half - margin))
                cx = int(rng.integers(x0 + margin, x0 + half - margin))
                sig = size / 10.0
                yy, xx = np.mgrid[0:size, 0:size]
                img = img + 110.0 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig * sig))
                blobs.append(BlobInfo(quadrant=quad, center=(cy, cx)))
            else:
                blobs.append(None)
            images.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
            labels.append(label)
    return SyntheticDataset(images=np.stack(images), labels=np.asarray(labels),
                            blobs=blobs, class_names=list(BINARY_CLASS_NAMES), seed=seed)


def batches(images: np.ndarray, labels: np.ndarray, batch_size: int,
            seed: int, epoch: int, shuffle: bool = True,
            return_indices: bool = False):
    """Yield (Tensor [B,C,H,W], labels int[B]) under a seeded permutation.

    ``images`` is the preprocessed float array [N,C,H,W]; the final partial
    batch is emitted.  ``return_indices`` adds the original dataset indices
    so callers can key per-sample augmentation streams.
    """
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    n = len(labels)
    if shuffle:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, epoch))))
        order = rng.permutation(n)
    else:
        order = np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if return_indices:
            yield Tensor(images[idx]), labels[idx], idx
        else:
            yield Tensor(images[idx]), labels[idx]
