"""Wiring of the three channels and the fusion network for training and inference."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import channels as ch
from .augment import derive_seed
from .config import RunConfig
from .diffnet import NetworkParams
from .errors import DataError
from .labelops import Box, boxes_from_labels, fill_boxes
from .manifest import Manifest, Record

log = logging.getLogger(__name__)

NETWORKS = ("seg", "edge", "fusion")


@dataclass
class Models:
    seg: NetworkParams
    edge: NetworkParams
    fusion: NetworkParams

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        for name in NETWORKS:
            getattr(self, name).save(out_dir / f"{name}.gmcn")

    @classmethod
    def load(cls, model_dir) -> "Models":
        model_dir = Path(model_dir)
        loaded = {}
        for name in NETWORKS:
            path = model_dir / f"{name}.gmcn"
            if not path.exists():
                raise DataError(f"missing model file {path}; run 'glandnet train' first")
            loaded[name] = NetworkParams.load(path)
        return cls(**loaded)


def record_boxes(rec: Record, labels: np.ndarray | None, cfg: RunConfig) -> list[Box]:
    """Boxes from the record's file, or derived from its labels when configured to."""
    boxes = rec.load_boxes()
    if boxes is not None:
        return boxes
    if cfg.detection_source == "gt" and labels is not None:
        rng = np.random.default_rng(derive_seed(cfg.seed, rec.id)) if cfg.box_jitter else None
        return boxes_from_labels(labels, cfg.box_jitter, rng)
    raise DataError(
        f"record {rec.id!r} has no boxes file; add one to the manifest or set detection_source = gt"
    )


def load_items(manifest: Manifest, cfg: RunConfig, need_labels: bool = True) -> list[ch.TrainItem]:
    items = []
    for rec in manifest.records:
        image = rec.load_image()
        labels = rec.load_labels() if (need_labels or rec.labels is not None) else None
        if labels is not None and labels.shape != image.shape[:2]:
            raise DataError(f"record {rec.id!r}: label map size differs from image")
        items.append(ch.TrainItem(image, labels, record_boxes(rec, labels, cfg), name=rec.id))
    return items


def coverage(item: ch.TrainItem) -> np.ndarray:
    h, w = item.image.shape[:2]
    return fill_boxes(item.boxes or [], w, h)


def train_pipeline(
    items: list[ch.TrainItem],
    cfg: RunConfig,
    curve_dir=None,
    networks: tuple[str, ...] = NETWORKS,
    models: Models | None = None,
) -> Models:
    """Train seg and edge channels, then the fusion net on their outputs."""
    pcfg = cfg.pipeline()
    trained = {} if models is None else {n: getattr(models, n) for n in NETWORKS}

    def curve(name):
        if curve_dir is None:
            return None
        path = Path(curve_dir) / f"loss_{name}.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("")
        return path

    for offset, name in enumerate(("seg", "edge")):
        if name in networks or name not in trained:
            trained[name] = ch.train_channel(items, pcfg, name, cfg.seed + offset, cfg.training(name), curve(name))
    if "fusion" in networks or "fusion" not in trained:
        for item in items:
            item.bundle = ch.channel_bundle(trained["seg"], trained["edge"], item.image, coverage(item), pcfg)
        trained["fusion"] = ch.train_channel(items, pcfg, "fusion", cfg.seed + 2, cfg.training("fusion"), curve("fusion"))
    return Models(**trained)


def predict(models: Models, item: ch.TrainItem, cfg: RunConfig) -> tuple[np.ndarray, ch.ChannelBundle, np.ndarray]:
    """Returns (fused instance map, channel bundle, segmentation-only instance map)."""
    pcfg = cfg.pipeline()
    bundle = ch.channel_bundle(models.seg, models.edge, item.image, coverage(item), pcfg)
    fused = ch.instantiate(ch.fuse_forward(models.fusion, bundle, pcfg), pcfg.min_area)
    seg_only = ch.instantiate(bundle.seg, pcfg.min_area)
    return fused, bundle, seg_only
