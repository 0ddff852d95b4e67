"""Central-difference gradient checks over every layer kind, both losses and the toy networks."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import channels as ch
from . import diffnet as dn
from .diffnet import NetworkParams, Tensor
from .labelops import fill_boxes, boxes_from_labels

CheckCase = Callable[[np.random.Generator], tuple[Callable[[], Tensor], NetworkParams]]


def _param(rng, *shape, scale=0.5) -> Tensor:
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


def _layer_case(op: Callable[[Tensor], Tensor], c=2, hw=8):
    """conv (parameters under test) -> op -> random linear probe."""

    def build(rng):
        x = Tensor(rng.normal(size=(c, hw, hw)))
        params = NetworkParams({"k": _param(rng, 3, c, 3, 3), "b": _param(rng, 3)})
        probe = {}

        def loss():
            out = op(dn.conv2d(x, params["k"], params["b"], padding=1))
            if "w" not in probe:
                probe["w"] = np.random.default_rng(99).normal(size=out.shape)
            return dn.dot(out, probe["w"])

        return loss, params

    return build


def _conv_case(stride=1, dilation=1, padding=0, hw=9):
    def build(rng):
        x = _param(rng, 2, hw, hw, scale=1.0)
        params = NetworkParams({"x": x, "k": _param(rng, 3, 2, 3, 3), "b": _param(rng, 3)})
        ho = dn.conv_output_size(hw, 3, stride, dilation, padding)
        probe = rng.normal(size=(3, ho, ho))
        return (
            lambda: dn.dot(dn.conv2d(params["x"], params["k"], params["b"], stride, dilation, padding), probe),
            params,
        )

    return build


def _ce_case(rng):
    params = NetworkParams({"logits": _param(rng, 3, 4, 4, scale=1.5)})
    labels = rng.integers(0, 3, size=(4, 4))
    return lambda: dn.softmax_cross_entropy(params["logits"], labels), params


def _balanced_case(rng):
    params = NetworkParams({"logits": _param(rng, 1, 4, 4, scale=1.5)})
    edges = rng.random((4, 4)) < 0.3
    return lambda: dn.balanced_sigmoid_cross_entropy(params["logits"], edges), params


def _toy_item(rng, size=8):
    labels = np.zeros((size, size), dtype=np.int32)
    labels[1:4, 1:6] = 1
    labels[4:7, 2:7] = 2
    image = rng.random((size, size, 3))
    return ch.TrainItem(image, labels, boxes_from_labels(labels))


def _tiny_cfg() -> ch.PipelineConfig:
    return ch.PipelineConfig(seg_width=2, edge_widths=(2, 3, 3), edge_sides=3, fusion_width=3)


def _net_case(which: str):
    def build(rng):
        cfg = _tiny_cfg()
        size = 8
        item = _toy_item(rng, size)
        params = ch.init_network(which, cfg, int(rng.integers(1 << 30)))
        if which == "fusion":
            seg = ch.init_network("seg", cfg, 1)
            edge = ch.init_network("edge", cfg, 2)
            item.bundle = ch.channel_bundle(seg, edge, item.image, fill_boxes(item.boxes, size, size), cfg)
        # He-scaled weights keep pre-activations O(1): clear of ReLU kinks
        # without saturating the output (which leaves gradients below
        # central-difference resolution); non-zero biases exercise every bias
        for name, t in params.items():
            if name.endswith(".bias"):
                t.values[...] = rng.normal(scale=0.1, size=t.shape)
            elif t.values.ndim == 4 and name != "fuse.weight":
                fan_in = t.shape[1] * t.shape[2] * t.shape[3]
                t.values[...] = rng.normal(scale=np.sqrt(2.0 / fan_in), size=t.shape)
        return (lambda: ch.LOSSES[which](params, item, cfg)), params

    return build


CASES: dict[str, CheckCase] = {
    "conv": _conv_case(),
    "conv_dilated": _conv_case(dilation=2, padding=2),
    "conv_strided": _conv_case(stride=2, padding=1),
    "relu": _layer_case(dn.relu),
    "sigmoid": _layer_case(dn.sigmoid),
    "softmax": _layer_case(dn.softmax),
    "maxpool_stride2": _layer_case(lambda t: dn.maxpool(t, 2, 2)),
    "maxpool_stride1": _layer_case(lambda t: dn.maxpool(t, 3, 1, padding=1)),
    "upsample_bilinear": _layer_case(lambda t: dn.upsample_bilinear(t, 2)),
    "softmax_cross_entropy": _ce_case,
    "balanced_sigmoid_cross_entropy": _balanced_case,
    "seg_net": _net_case("seg"),
    "edge_net": _net_case("edge"),
    "fusion_net": _net_case("fusion"),
}


def run_gradchecks(eps: float = 1e-5, seed: int = 0, names=None, max_entries: int | None = 40) -> dict[str, float]:
    results = {}
    for name, build in CASES.items():
        if names and name not in names:
            continue
        loss_fn, params = build(np.random.default_rng(seed))
        results[name] = dn.grad_check(loss_fn, params, eps=eps, max_entries=max_entries, seed=seed)
    return results
