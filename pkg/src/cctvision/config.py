"""Run configuration: a single JSON document aggregating model, preprocessing,
augmentation, optimizer, and dataset settings.  Validation is strict — unknown
keys anywhere are rejected before any work starts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .augment import AugmentPolicy
from .errors import ValidationError
from .model import CctConfig
from .preprocess import BenGrahamParams, ClaheParams
from .training import OptimizerConfig


@dataclass
class DataConfig:
    kind: str = "synthetic"            # "synthetic" | "folder"
    root: str | None = None            # folder root for kind="folder"
    class_map: str = "binary"          # "binary" | "four"
    n_per_class: int = 250             # synthetic only
    synth_size: int = 64               # synthetic raw image side
    split: tuple[float, float, float] = (0.8, 0.2, 0.0)

    def __post_init__(self):
        if self.kind not in ("synthetic", "folder"):
            raise ValidationError(f"data.kind must be 'synthetic' or 'folder', got {self.kind!r}")
        if self.kind == "folder" and not self.root:
            raise ValidationError("data.kind='folder' requires data.root")
        if self.class_map not in ("binary", "four"):
            raise ValidationError(f"data.class_map must be 'binary' or 'four', got {self.class_map!r}")
        self.split = tuple(self.split)
        if len(self.split) != 3:
            raise ValidationError("data.split must be [train, val, test]")


def _from_dict(cls, d: dict, section: str):
    known = set(cls.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ValidationError(f"unknown {section} config keys: {sorted(unknown)}")
    return cls(**d)


@dataclass
class RunConfig:
    seed: int = 42
    model: CctConfig = field(default_factory=CctConfig)
    clahe: ClaheParams = field(default_factory=ClaheParams)
    ben_graham: BenGrahamParams = field(default_factory=BenGrahamParams)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        if "seed" in d:
            kw["seed"] = int(d["seed"])
        for name, sub in (("model", CctConfig), ("clahe", ClaheParams),
                          ("ben_graham", BenGrahamParams), ("augment", AugmentPolicy),
                          ("optimizer", OptimizerConfig), ("data", DataConfig)):
            if name in d:
                kw[name] = _from_dict(sub, d[name], name)
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ValidationError(f"config {path} must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)
