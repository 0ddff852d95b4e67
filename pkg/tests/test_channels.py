import json

import numpy as np
import pytest

from glandnet import channels as ch
from glandnet import diffnet as dn
from glandnet.diffnet import NetworkParams, Tensor
from glandnet.errors import ConfigError, DataError
from glandnet.labelops import Box, boxes_to_json, fill_boxes
from glandnet.synth import synth_dataset, synth_image

CFG = ch.PipelineConfig()
SMALL = ch.PipelineConfig(seg_width=4, edge_widths=(4, 6, 6), edge_sides=3, fusion_width=6)


def image(seed=0, size=32):
    return np.random.default_rng(seed).random((size, size, 3))


def bundle_for(seed=0, size=32):
    rng = np.random.default_rng(seed)
    seg = rng.random((size, size))
    return ch.ChannelBundle(np.stack([1 - seg, seg]), rng.integers(0, 4, (size, size)), rng.random((1, size, size)))


# --- forward passes --------------------------------------------------------------

def test_seg_forward_shape_and_sums():
    p = ch.init_network("seg", SMALL, 0)
    prob = ch.seg_forward(p, image(), SMALL)
    assert prob.shape == (2, 32, 32)
    assert np.max(np.abs(prob.sum(axis=0) - 1)) < 1e-9
    assert prob.min() >= 0 and prob.max() <= 1


def test_seg_zeroed_final_layer_uniform():
    p = ch.init_network("seg", SMALL, 0)
    p["score.weight"].values[...] = 0
    p["score.bias"].values[...] = 0
    assert np.array_equal(ch.seg_forward(p, image(), SMALL), np.full((2, 32, 32), 0.5))


def test_seg_rejects_odd_size():
    p = ch.init_network("seg", SMALL, 0)
    with pytest.raises(ConfigError):
        ch.seg_forward(p, image(size=31), SMALL)


def test_edge_forward_sides_and_range():
    p = ch.init_network("edge", SMALL, 1)
    sides, fused = ch.edge_forward(p, image(), SMALL)
    assert len(sides) == 3
    assert all(s.shape == (1, 32, 32) for s in sides) and fused.shape == (1, 32, 32)
    assert all(((s > 0) & (s < 1)).all() for s in sides)


def test_edge_single_side_unit_alpha():
    cfg = ch.PipelineConfig(edge_widths=(4,), edge_sides=1)
    p = ch.init_network("edge", cfg, 2)
    assert p["fuse.weight"].values.ravel().tolist() == [1.0]
    sides, fused = ch.edge_forward(p, image(), cfg)
    assert np.max(np.abs(sides[0] - fused)) <= 1e-12


def test_edge_zero_responses_give_half():
    p = ch.init_network("edge", SMALL, 3)
    for m in range(1, 4):
        p[f"side{m}.weight"].values[...] = 0
        p[f"side{m}.bias"].values[...] = 0
    sides, fused = ch.edge_forward(p, image(), SMALL)
    assert np.array_equal(fused, np.full((1, 32, 32), 0.5))


def test_edge_zero_sides_is_config_error():
    with pytest.raises(ConfigError):
        ch.init_network("edge", ch.PipelineConfig(edge_sides=0), 0)


def test_default_edge_net_has_five_side_capacity():
    cfg = ch.PipelineConfig(edge_sides=5)
    p = ch.init_network("edge", cfg, 0)
    assert p["fuse.weight"].shape == (1, 5, 1, 1)
    sides, _ = ch.edge_forward(p, image(size=32), cfg)
    assert len(sides) == 5


def test_fusion_schedule_seven_convs_no_downsampling():
    specs = ch.fusion_schedule(CFG)
    assert sum(s.kind == "conv" for s in specs) == 7
    assert not any(s.kind == "maxpool" for s in specs)
    assert [s.dilation for s in specs if s.kind == "conv"][:6] == list(CFG.fusion_dilations)
    assert dn.check_schedule(specs, (3, 20, 20)) == (2, 20, 20)


def test_fuse_forward_sums_and_zeroed_output():
    p = ch.init_network("fusion", SMALL, 4)
    b = bundle_for()
    prob = ch.fuse_forward(p, b, SMALL)
    assert np.max(np.abs(prob.sum(axis=0) - 1)) < 1e-9
    p["f7.weight"].values[...] = 0
    p["f7.bias"].values[...] = 0
    assert np.array_equal(ch.fuse_forward(p, b, SMALL), np.full((2, 32, 32), 0.5))


def test_fusion_input_order_and_permutation_equivariance():
    b = bundle_for(5)
    x = b.fusion_input()
    assert np.array_equal(x[0], b.seg[1])
    assert np.array_equal(x[1], b.det / max(1, b.det.max()))
    assert np.array_equal(x[2], b.edge[0])
    p = ch.init_network("fusion", SMALL, 6)
    perm = [2, 0, 1]
    q = p.copy()
    q["f1.weight"].values[...] = p["f1.weight"].values[:, perm]
    a = ch.fusion_logits(p, Tensor(x), SMALL).values
    z = ch.fusion_logits(q, Tensor(x[perm]), SMALL).values
    assert np.max(np.abs(a - z)) < 1e-12


def test_bundle_dimension_mismatch():
    with pytest.raises(DataError):
        ch.ChannelBundle(np.zeros((2, 4, 4)), np.zeros((4, 5)), np.zeros((1, 4, 4)))


# --- detection channel --------------------------------------------------------------

def test_detection_ingest(tmp_path):
    p = tmp_path / "b.json"
    p.write_text("")
    counts, norm = ch.detection_ingest(p, 6, 5)
    assert counts.shape == (5, 6) and not counts.any() and not norm.any()
    p.write_text(boxes_to_json([Box(0, 0, 4, 4), Box(1, 1, 5, 5), Box(2, 0, 6, 3)]))
    counts, norm = ch.detection_ingest(p, 6, 5)
    assert counts.max() == 3 and norm.max() == 1.0
    np.testing.assert_array_equal(norm * 3, counts)
    p.write_text(json.dumps([{"x0": 0, "y0": 0, "x1": 9, "y1": 2}]))
    with pytest.raises(DataError, match="#0"):
        ch.detection_ingest(p, 6, 5)


# --- instantiation -------------------------------------------------------------------------

def test_instantiate_examples():
    assert not ch.instantiate(np.stack([np.ones((8, 8)), np.zeros((8, 8))])).any()
    m = np.zeros((20, 20), bool)
    m[1:6, 1:6] = True
    m[10:18, 10:18] = True
    m[0, 19] = True
    lab = ch.instantiate(ch.mask_to_prob(m), min_area=10)
    assert lab.max() == 2 and lab[0, 19] == 0
    five = np.zeros((10, 10), bool)
    five[2, 2:7] = True
    assert ch.instantiate(ch.mask_to_prob(five), min_area=10).max() == 0


def test_instantiate_idempotent():
    rng = np.random.default_rng(7)
    for _ in range(10):
        p = rng.random((24, 24))
        lab = ch.instantiate(np.stack([1 - p, p]), min_area=3)
        again = ch.instantiate(ch.mask_to_prob(lab > 0), min_area=3)
        assert np.array_equal(again, lab)


def test_instantiate_rejects_wrong_k():
    with pytest.raises(DataError):
        ch.instantiate(np.zeros((3, 4, 4)))


# --- losses and training ----------------------------------------------------------------------

def _item(seed=0, size=32):
    s = synth_image(np.random.default_rng(seed), size=size, radius=(5, 8))
    return ch.TrainItem(s.image, s.labels, s.boxes, name=f"i{seed}")


def test_fusion_target_splits_touching_instances():
    lab = np.zeros((6, 10), int)
    lab[1:5, 1:5] = 1
    lab[1:5, 5:9] = 2
    target, border = ch.fusion_target(lab)
    assert border[:, 4].sum() == 4 and border[:, 5].sum() == 4
    assert not target[:, 4:6].any()
    assert target.sum() == 32 - 8


def test_side_terms_change_edge_gradients():
    item = _item(1)
    grads = []
    for side_terms in (True, False):
        p = ch.init_network("edge", SMALL, 9)
        dn.backward(ch.edge_loss(p, item, SMALL, side_terms=side_terms))
        grads.append(np.concatenate([t.grad.ravel() for t in p.values()]))
    assert not np.allclose(grads[0], grads[1])


def test_edge_loss_counts_all_sides():
    item = _item(2)
    p = ch.init_network("edge", SMALL, 3)
    x = ch.image_tensor(item.image)
    sides, fused = ch.edge_logits(p, x, SMALL)
    target = ch.edge_target(item.labels, SMALL.edge_radius)
    manual = sum(dn.balanced_sigmoid_cross_entropy(t, target, reduction="mean").item() for t in [fused] + sides)
    assert abs(ch.edge_loss(p, item, SMALL).item() - manual) < 1e-12


def test_fusion_loss_needs_bundle():
    p = ch.init_network("fusion", SMALL, 0)
    with pytest.raises(DataError):
        ch.fusion_loss(p, _item(), SMALL)


def test_train_lr_zero_keeps_init():
    data = [_item(3)]
    init = ch.init_network("seg", SMALL, 5).to_bytes()
    p = ch.train_channel(data, SMALL, "seg", 5, ch.TrainConfig(epochs=2, lr=0.0))
    assert p.to_bytes() == init


def test_train_deterministic_and_curve(tmp_path):
    data = [_item(4), _item(5)]
    curve = tmp_path / "c.jsonl"
    a = ch.train_channel(data, SMALL, "edge", 3, ch.TrainConfig(epochs=2), curve_path=curve)
    b = ch.train_channel(data, SMALL, "edge", 3, ch.TrainConfig(epochs=2))
    assert a.to_bytes() == b.to_bytes()
    lines = [json.loads(l) for l in curve.read_text().splitlines()]
    assert [l["epoch"] for l in lines] == [0, 1] and all(np.isfinite(l["loss"]) for l in lines)


def test_train_divergence_aborts():
    data = [_item(6)]
    init = ch.init_network("seg", SMALL, 0)
    init["conv1.weight"].values[0, 0, 1, 1] = np.nan
    with pytest.raises(ch.TrainingDiverged, match="diverged at epoch 0"):
        ch.train_channel(data, SMALL, "seg", 0, ch.TrainConfig(epochs=3), init=init)


def test_train_rejects_empty_and_unknown():
    with pytest.raises(DataError):
        ch.train_channel([], SMALL, "seg", 0)
    with pytest.raises(ConfigError):
        ch.train_channel([_item()], SMALL, "rpn", 0)


def test_seg_overfits_one_image():
    s = synth_image(np.random.default_rng(3))
    item = ch.TrainItem(s.image, s.labels)
    p = ch.train_channel([item], CFG, "seg", 0, ch.TrainConfig(epochs=60, lr=0.05, momentum=0.9))
    prob = ch.seg_forward(p, s.image, CFG)
    assert np.mean((prob[1] > prob[0]) == (s.labels > 0)) >= 0.99


def test_seg_fits_ten_image_set():
    data = [ch.TrainItem(s.image, s.labels) for s in synth_dataset(10, seed=11)]
    p = ch.train_channel(data, CFG, "seg", 0, ch.TrainConfig(epochs=15, lr=0.05, momentum=0.9))
    correct = total = 0
    for item in data:
        prob = ch.seg_forward(p, item.image, CFG)
        correct += int(((prob[1] > prob[0]) == (item.labels > 0)).sum())
        total += item.labels.size
    assert correct / total >= 0.99


def test_channel_bundle_consistent():
    item = _item(7)
    seg = ch.init_network("seg", SMALL, 0)
    edge = ch.init_network("edge", SMALL, 1)
    counts = fill_boxes(item.boxes, 32, 32)
    b = ch.channel_bundle(seg, edge, item.image, counts, SMALL)
    assert b.seg.shape == (2, 32, 32) and b.edge.shape == (1, 32, 32)
    assert np.array_equal(b.det, counts)
