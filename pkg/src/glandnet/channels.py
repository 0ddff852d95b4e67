"""The segmentation, detection and edge channels and the fusion network, at toy scale."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import diffnet as dn
from .augment import per_channel_zero_mean
from .diffnet import LayerSpec, NetworkParams, Tensor, conv
from .errors import ConfigError, DataError
from .labelops import Box, connected_components, dilate, extract_edges, fill_boxes, instance_boundaries, read_boxes, relabel_sequential

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    seg_width: int = 8
    edge_widths: tuple[int, ...] = (8, 16, 16, 16, 16)
    edge_sides: int = 3
    fusion_width: int = 16
    fusion_dilations: tuple[int, ...] = (1, 2, 4, 8, 4, 2)
    edge_radius: float = 0.0  # 0 -> EDGE1, 3 -> EDGE3
    detection_source: str = "gt"
    box_jitter: int = 0
    min_area: int = 16
    # fusion target: foreground minus the pixels where two instances touch,
    # with those separating pixels up-weighted in the loss
    separation_weight: float = 4.0

    def validate(self) -> None:
        if not 1 <= self.edge_sides <= len(self.edge_widths):
            raise ConfigError(f"edge_sides must be in 1..{len(self.edge_widths)}, got {self.edge_sides}")
        if len(self.fusion_dilations) != 6:
            raise ConfigError("the fusion network has six dilated layers before its 1x1 classifier")
        if self.edge_radius < 0 or self.min_area < 0:
            raise ConfigError("edge_radius and min_area must be non-negative")


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 0.05
    momentum: float = 0.9
    lr_decay: float = 1.0  # multiplied into lr after every epoch


# --- network schedules -----------------------------------------------------------

def seg_schedule(cfg: PipelineConfig) -> list[LayerSpec]:
    """Two 3x3 convs, one stride-2 pool, then stride-1 pools with dilated convs."""
    w = cfg.seg_width
    return [
        conv("conv1", 3, w), LayerSpec("relu"),
        conv("conv2", w, w), LayerSpec("relu"),
        LayerSpec("maxpool", kernel=2, stride=2),
        conv("conv3", w, 2 * w), LayerSpec("relu"),
        LayerSpec("maxpool", kernel=3, stride=1, padding=1),
        conv("conv4", 2 * w, 2 * w, dilation=2), LayerSpec("relu"),
        LayerSpec("maxpool", kernel=3, stride=1, padding=1),
        conv("conv5", 2 * w, 2 * w, dilation=4), LayerSpec("relu"),
        conv("score", 2 * w, 2, kernel=1),
        LayerSpec("upsample", factor=2),
    ]


def edge_stages(cfg: PipelineConfig) -> list[list[LayerSpec]]:
    stages = []
    in_ch = 3
    for m in range(cfg.edge_sides):
        w = cfg.edge_widths[m]
        layers = [] if m == 0 else [LayerSpec("maxpool", kernel=2, stride=2)]
        layers += [conv(f"s{m + 1}a", in_ch, w), LayerSpec("relu"), conv(f"s{m + 1}b", w, w), LayerSpec("relu")]
        stages.append(layers)
        in_ch = w
    return stages


def edge_side_heads(cfg: PipelineConfig) -> list[list[LayerSpec]]:
    return [
        [conv(f"side{m + 1}", cfg.edge_widths[m], 1, kernel=1), LayerSpec("upsample", factor=2**m)]
        for m in range(cfg.edge_sides)
    ]


def edge_fuse_layer(cfg: PipelineConfig) -> LayerSpec:
    return conv("fuse", cfg.edge_sides, 1, kernel=1, bias=False)


def fusion_schedule(cfg: PipelineConfig) -> list[LayerSpec]:
    """Seven convolutions, no downsampling."""
    w = cfg.fusion_width
    layers: list[LayerSpec] = []
    in_ch = 3
    for i, d in enumerate(cfg.fusion_dilations):
        layers += [conv(f"f{i + 1}", in_ch, w, dilation=d), LayerSpec("relu")]
        in_ch = w
    layers.append(conv("f7", w, 2, kernel=1))
    return layers


def init_network(which: str, cfg: PipelineConfig, seed: int) -> NetworkParams:
    cfg.validate()
    rng = np.random.default_rng(seed)
    if which == "seg":
        return dn.init_params(seg_schedule(cfg), rng)
    if which == "edge":
        params = NetworkParams()
        for stage, head in zip(edge_stages(cfg), edge_side_heads(cfg)):
            params.update(dn.init_params(stage + head, rng))
        # equal initial weighting of the side outputs
        params.add("fuse.weight", Tensor(np.full((1, cfg.edge_sides, 1, 1), 1.0 / cfg.edge_sides), requires_grad=True))
        return params
    if which == "fusion":
        return dn.init_params(fusion_schedule(cfg), rng)
    raise ConfigError(f"unknown network {which!r}")


def _check_divisible(shape, factor: int, what: str) -> None:
    h, w = shape
    if h % factor or w % factor:
        raise ConfigError(f"{what} needs image sides divisible by {factor}, got {w}x{h}")


def image_tensor(image: np.ndarray) -> Tensor:
    """H x W x 3 image -> zero-mean (3, H, W) constant tensor."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"expected an H x W x 3 image, got shape {image.shape}")
    return Tensor(np.ascontiguousarray(per_channel_zero_mean(image).transpose(2, 0, 1)))


# --- forward passes ----------------------------------------------------------------

def seg_logits(params: NetworkParams, x: Tensor, cfg: PipelineConfig) -> Tensor:
    _check_divisible(x.shape[1:], 2, "the segmentation channel")
    return dn.forward_layers(seg_schedule(cfg), x, params)


def seg_forward(params: NetworkParams, image: np.ndarray, cfg: PipelineConfig | None = None) -> np.ndarray:
    """(2, H, W) foreground/background posterior."""
    cfg = cfg or PipelineConfig()
    return dn.softmax(seg_logits(params, image_tensor(image), cfg)).values


def edge_logits(params: NetworkParams, x: Tensor, cfg: PipelineConfig) -> tuple[list[Tensor], Tensor]:
    if cfg.edge_sides < 1:
        raise ConfigError("the edge channel needs at least one side output")
    _check_divisible(x.shape[1:], 2 ** (cfg.edge_sides - 1), "the edge channel")
    sides = []
    h = x
    for stage, head in zip(edge_stages(cfg), edge_side_heads(cfg)):
        h = dn.forward_layers(stage, h, params)
        sides.append(dn.forward_layers(head, h, params))
    fused = dn.apply_layer(edge_fuse_layer(cfg), dn.concat(sides), params)
    return sides, fused


def edge_forward(
    params: NetworkParams, image: np.ndarray, cfg: PipelineConfig | None = None
) -> tuple[list[np.ndarray], np.ndarray]:
    """Side-output probabilities and their learned weighted fusion, each (1, H, W)."""
    cfg = cfg or PipelineConfig()
    sides, fused = edge_logits(params, image_tensor(image), cfg)
    return [dn.sigmoid(s).values for s in sides], dn.sigmoid(fused).values


def normalize_coverage(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    return counts / max(1.0, float(counts.max(initial=0)))


def detection_ingest(path, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Fill the boxes of a JSON box file; returns (raw counts, counts scaled to max 1)."""
    counts = fill_boxes(read_boxes(path), width, height)
    return counts, normalize_coverage(counts)


@dataclass
class ChannelBundle:
    seg: np.ndarray  # (2, H, W)
    det: np.ndarray  # (H, W) raw box counts
    edge: np.ndarray  # (1, H, W)

    def __post_init__(self):
        shapes = {self.seg.shape[1:], self.det.shape, self.edge.shape[1:]}
        if len(shapes) != 1:
            raise DataError(f"channel outputs disagree in size: {sorted(shapes)}")

    def fusion_input(self) -> np.ndarray:
        """(3, H, W): foreground probability, normalised coverage, edge probability."""
        return np.stack([self.seg[1], normalize_coverage(self.det), self.edge[0]])


def fusion_logits(params: NetworkParams, x: Tensor, cfg: PipelineConfig) -> Tensor:
    if x.shape[0] != 3:
        raise DataError(f"fusion input must have 3 channels, got {x.shape[0]}")
    return dn.forward_layers(fusion_schedule(cfg), x, params)


def fuse_forward(params: NetworkParams, bundle: ChannelBundle, cfg: PipelineConfig | None = None) -> np.ndarray:
    cfg = cfg or PipelineConfig()
    return dn.softmax(fusion_logits(params, Tensor(bundle.fusion_input()), cfg)).values


def instantiate(prob: np.ndarray, min_area: int = 16) -> np.ndarray:
    """Argmax -> 4-connected components -> drop those smaller than ``min_area``."""
    prob = np.asarray(prob)
    if prob.ndim != 3 or prob.shape[0] != 2:
        raise DataError(f"instantiate needs a 2-class probability map, got shape {prob.shape}")
    labels = connected_components(prob[1] > prob[0], connectivity=4)
    if min_area > 0 and labels.max() > 0:
        areas = np.bincount(labels.ravel())
        small = areas < min_area
        small[0] = False
        labels[small[labels]] = 0
        labels = relabel_sequential(labels)
    return labels


def mask_to_prob(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    return np.stack([~mask, mask]).astype(np.float64)


# --- training ----------------------------------------------------------------------

@dataclass
class TrainItem:
    image: np.ndarray
    labels: np.ndarray
    boxes: list[Box] | None = None
    bundle: ChannelBundle | None = None
    name: str = ""


def edge_target(labels: np.ndarray, radius: float) -> np.ndarray:
    edges = extract_edges(labels)
    return dilate(edges, radius) if radius > 0 else edges


def fusion_target(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Class map (foreground minus inter-instance border) and per-pixel loss weights."""
    border = instance_boundaries(labels)
    target = ((labels > 0) & ~border).astype(np.int64)
    return target, border


def seg_loss(params: NetworkParams, item: TrainItem, cfg: PipelineConfig) -> Tensor:
    return dn.softmax_cross_entropy(seg_logits(params, image_tensor(item.image), cfg), (item.labels > 0).astype(np.int64))


def edge_loss(params: NetworkParams, item: TrainItem, cfg: PipelineConfig, side_terms: bool = True) -> Tensor:
    """Balanced loss of the fused output plus (by default) every side output, pixel-averaged."""
    target = edge_target(item.labels, cfg.edge_radius)
    sides, fused = edge_logits(params, image_tensor(item.image), cfg)
    terms = [dn.balanced_sigmoid_cross_entropy(fused, target, reduction="mean")]
    if side_terms:
        terms += [dn.balanced_sigmoid_cross_entropy(s, target, reduction="mean") for s in sides]
    return dn.add(*terms)


def fusion_loss(params: NetworkParams, item: TrainItem, cfg: PipelineConfig) -> Tensor:
    if item.bundle is None:
        raise DataError(f"fusion training item {item.name!r} has no precomputed channel outputs")
    target, border = fusion_target(item.labels)
    weights = np.where(border, cfg.separation_weight, 1.0)
    return dn.softmax_cross_entropy(fusion_logits(params, Tensor(item.bundle.fusion_input()), cfg), target, weights)


LOSSES: dict[str, Callable[[NetworkParams, TrainItem, PipelineConfig], Tensor]] = {
    "seg": seg_loss,
    "edge": edge_loss,
    "fusion": fusion_loss,
}


class TrainingDiverged(DataError):
    pass


def train_channel(
    dataset: Sequence[TrainItem],
    config: PipelineConfig,
    which: str,
    seed: int,
    train: TrainConfig | None = None,
    curve_path=None,
    init: NetworkParams | None = None,
) -> NetworkParams:
    """Per-sample SGD with momentum in a seeded shuffled order.

    Appends one JSON line per epoch (mean loss) to ``curve_path`` if given.
    """
    if which not in LOSSES:
        raise ConfigError(f"unknown network {which!r}")
    if not dataset:
        raise DataError("training set is empty")
    train = train or TrainConfig()
    params = init if init is not None else init_network(which, config, seed)
    loss_fn = LOSSES[which]
    rng = np.random.default_rng(seed)
    lr = train.lr
    curve = []
    for epoch in range(train.epochs):
        total = 0.0
        for idx in rng.permutation(len(dataset)):
            params.zero_grad()
            loss = loss_fn(params, dataset[idx], config)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"{which} training diverged at epoch {epoch}, item {dataset[idx].name or idx}: loss {value}"
                )
            dn.backward(loss)
            dn.sgd_step(params, lr, train.momentum)
            total += value
        record = {"net": which, "epoch": epoch, "loss": total / len(dataset), "lr": lr}
        curve.append(record)
        log.info("%s epoch %d loss %.5f", which, epoch, record["loss"])
        if curve_path is not None:
            with open(curve_path, "a") as fh:
                fh.write(json.dumps(record) + "\n")
        lr *= train.lr_decay
    return params


def channel_bundle(
    seg_params: NetworkParams,
    edge_params: NetworkParams,
    image: np.ndarray,
    counts: np.ndarray,
    cfg: PipelineConfig,
) -> ChannelBundle:
    _, fused = edge_forward(edge_params, image, cfg)
    return ChannelBundle(seg_forward(seg_params, image, cfg), np.asarray(counts), fused)
