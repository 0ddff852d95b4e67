"""Plain-text ``key = value`` run configuration with strict key checking."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .augment import WarpRanges
from .channels import PipelineConfig, TrainConfig
from .errors import ConfigError


@dataclass
class RunConfig:
    seed: int = 0
    strategy: str = "I"
    warp_count: int = 3
    crop: int = 400
    edge_radius: float = 0.0
    seg_width: int = 8
    edge_sides: int = 3
    fusion_width: int = 16
    fusion_dilations: tuple[int, ...] = (1, 2, 4, 8, 4, 2)
    min_area: int = 16
    separation_weight: float = 4.0
    detection_source: str = "file"
    box_jitter: int = 0
    epochs_seg: int = 3
    epochs_edge: int = 3
    epochs_fusion: int = 3
    lr: float = 0.05
    momentum: float = 0.9
    lr_decay: float = 1.0
    weight_testA: float = 0.75
    weight_testB: float = 0.25
    unmatched_rule: str = "hausdorff"

    def validate(self) -> "RunConfig":
        if self.strategy not in ("I", "II"):
            raise ConfigError(f"strategy must be I or II, got {self.strategy!r}")
        if self.detection_source not in ("file", "gt"):
            raise ConfigError(f"detection_source must be 'file' or 'gt', got {self.detection_source!r}")
        if self.unmatched_rule not in ("hausdorff", "centroid"):
            raise ConfigError(f"unmatched_rule must be 'hausdorff' or 'centroid', got {self.unmatched_rule!r}")
        if min(self.epochs_seg, self.epochs_edge, self.epochs_fusion) < 0 or self.lr < 0:
            raise ConfigError("epochs and lr must be non-negative")
        self.pipeline().validate()
        return self

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(
            seg_width=self.seg_width,
            edge_sides=self.edge_sides,
            fusion_width=self.fusion_width,
            fusion_dilations=tuple(self.fusion_dilations),
            edge_radius=self.edge_radius,
            detection_source=self.detection_source,
            box_jitter=self.box_jitter,
            min_area=self.min_area,
            separation_weight=self.separation_weight,
        )

    def training(self, which: str) -> TrainConfig:
        epochs = {"seg": self.epochs_seg, "edge": self.epochs_edge, "fusion": self.epochs_fusion}[which]
        return TrainConfig(epochs=epochs, lr=self.lr, momentum=self.momentum, lr_decay=self.lr_decay)

    def warp_ranges(self) -> WarpRanges:
        return WarpRanges(warp_count=self.warp_count, crop=self.crop)

    def split_weights(self) -> dict[str, float]:
        return {"testA": self.weight_testA, "testB": self.weight_testB}

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _convert(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from None


def parse_config(text: str, source: str = "<config>", overrides: dict | None = None) -> RunConfig:
    defaults = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate config key {key!r}")
        values[key] = _convert(raw, getattr(defaults, key), key)
    for key, v in (overrides or {}).items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = v
    return dataclasses.replace(defaults, **values).validate()


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    if path is None:
        return parse_config("", overrides=overrides)
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path), overrides)
