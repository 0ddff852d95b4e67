import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glandnet.errors import DataError
from glandnet.labelops import (
    Box,
    boxes_from_labels,
    connected_components,
    dilate,
    extract_edges,
    fill_boxes,
    instance_boundaries,
    overlap_matrix,
    parse_boxes,
    read_boxes,
    relabel_sequential,
)

from oracles import edges_by_enumeration, flood_fill_labels, overlap_brute, random_instance_map


def random_boxes(rng, w, h, n):
    out = []
    for _ in range(n):
        x0 = int(rng.integers(0, w - 1))
        y0 = int(rng.integers(0, h - 1))
        out.append(Box(x0, y0, int(rng.integers(x0 + 1, w + 1)), int(rng.integers(y0 + 1, h + 1))))
    return out


# --- connected components ----------------------------------------------------

def test_cc_empty():
    lab = connected_components(np.zeros((5, 5), bool))
    assert lab.max() == 0


def test_cc_diagonal_blobs():
    m = np.zeros((4, 4), bool)
    m[0:2, 0:2] = True
    m[2:4, 2:4] = True
    assert connected_components(m, 4).max() == 2
    assert connected_components(m, 8).max() == 1


def test_cc_bad_connectivity():
    with pytest.raises(DataError):
        connected_components(np.zeros((2, 2), bool), 6)


@pytest.mark.parametrize("connectivity", [4, 8])
def test_cc_matches_flood_fill(connectivity):
    rng = np.random.default_rng(connectivity)
    for _ in range(100):
        m = rng.random((32, 32)) < rng.uniform(0.2, 0.7)
        assert np.array_equal(connected_components(m, connectivity), flood_fill_labels(m, connectivity))


def test_cc_idempotent_partition():
    rng = np.random.default_rng(11)
    for _ in range(20):
        lab = connected_components(rng.random((24, 24)) < 0.5)
        assert np.array_equal(connected_components(lab > 0), lab)


def test_relabel_first_appearance():
    lab = np.array([[0, 7, 7], [3, 0, 9], [3, 9, 9]])
    assert relabel_sequential(lab).tolist() == [[0, 1, 1], [2, 0, 3], [2, 3, 3]]


# --- edges -----------------------------------------------------------------------

def test_edges_constant_map_empty():
    assert not extract_edges(np.full((6, 6), 3)).any()
    assert not extract_edges(np.zeros((6, 6), int)).any()


def test_edges_single_pixel_plus():
    lab = np.zeros((3, 3), int)
    lab[1, 1] = 1
    expected = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], bool)
    assert np.array_equal(extract_edges(lab), expected)


def test_edges_shared_vertical_border():
    lab = np.zeros((4, 6), int)
    lab[:, :3] = 1
    lab[:, 3:] = 2
    e = extract_edges(lab)
    assert e[:, 2].all() and e[:, 3].all()
    assert e.sum() == 8


def test_edges_match_enumeration():
    rng = np.random.default_rng(5)
    for _ in range(40):
        lab = random_instance_map(rng, size=20)
        assert np.array_equal(extract_edges(lab), edges_by_enumeration(lab))


def test_edge_pixels_have_differing_neighbour():
    rng = np.random.default_rng(6)
    lab = random_instance_map(rng, size=24, allow_empty=False)
    e = extract_edges(lab)
    p = np.pad(lab, 1, mode="edge")
    for y, x in np.argwhere(e):
        c = lab[y, x]
        nbs = [p[y, x + 1], p[y + 2, x + 1], p[y + 1, x], p[y + 1, x + 2]]
        assert any(n != c for n in nbs)


def test_instance_boundaries_only_between_instances():
    lab = np.zeros((5, 8), int)
    lab[1:4, 1:4] = 1
    lab[1:4, 4:7] = 2
    b = instance_boundaries(lab)
    assert set(map(tuple, np.argwhere(b)[:, 1:].tolist())) == {(3,), (4,)}
    single = np.zeros((5, 5), int)
    single[1:4, 1:4] = 1
    assert not instance_boundaries(single).any()


# --- dilation ---------------------------------------------------------------------

def test_dilate_examples():
    m = np.zeros((9, 9), bool)
    m[4, 4] = True
    assert np.array_equal(dilate(m, 0), m)
    assert dilate(m, 1).sum() == 5
    assert dilate(m, 3).sum() == sum(1 for y in range(-3, 4) for x in range(-3, 4) if x * x + y * y <= 9) == 29


def test_dilate_negative_radius():
    with pytest.raises(DataError):
        dilate(np.zeros((3, 3), bool), -1)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 4), st.floats(0, 4))
def test_dilate_monotone(seed, r1, r2):
    r1, r2 = sorted((r1, r2))
    m = np.random.default_rng(seed).random((15, 17)) < 0.05
    a, b = dilate(m, r1), dilate(m, r2)
    assert np.all(a >= m)
    assert np.all(b >= a)


def test_dilate_matches_definition():
    rng = np.random.default_rng(8)
    m = rng.random((12, 12)) < 0.04
    pts = np.argwhere(m)
    got = dilate(m, 2.5)
    for y in range(12):
        for x in range(12):
            want = any((y - py) ** 2 + (x - px) ** 2 <= 6.25 for py, px in pts)
            assert got[y, x] == want


# --- boxes -----------------------------------------------------------------------

def test_fill_no_boxes():
    assert not fill_boxes([], 4, 3).any()
    assert fill_boxes([], 4, 3).shape == (3, 4)


def test_fill_three_overlapping_reads_three():
    boxes = [Box(0, 0, 5, 5), Box(2, 2, 8, 8), Box(3, 1, 6, 7)]
    c = fill_boxes(boxes, 10, 10)
    assert c[3, 3] == 3
    assert c.max() == 3


def test_fill_two_boxes_one_shared_pixel():
    c = fill_boxes([Box(0, 0, 2, 2), Box(1, 1, 3, 3)], 4, 4)
    assert c.sum() == 8 and c.max() == 2


def test_fill_conservation_random():
    rng = np.random.default_rng(9)
    for _ in range(100):
        w, h = rng.integers(2, 40, 2)
        boxes = random_boxes(rng, w, h, int(rng.integers(0, 12)))
        c = fill_boxes(boxes, w, h)
        assert int(c.sum()) == sum(b.area for b in boxes)
        assert c.max(initial=0) <= len(boxes)


def test_fill_out_of_range_names_box():
    with pytest.raises(DataError, match="box #1"):
        fill_boxes([Box(0, 0, 2, 2), Box(3, 0, 6, 2)], 5, 5)


def test_boxes_from_labels_tight():
    rng = np.random.default_rng(10)
    lab = random_instance_map(rng, 30, allow_empty=False)
    boxes = boxes_from_labels(lab)
    ids = [i for i in np.unique(lab) if i]
    assert len(boxes) == len(ids)
    for i, b in zip(ids, boxes):
        ys, xs = np.nonzero(lab == i)
        assert (b.x0, b.y0, b.x1, b.y1) == (xs.min(), ys.min(), xs.max() + 1, ys.max() + 1)


def test_boxes_jitter_stays_valid():
    lab = np.zeros((20, 20), int)
    lab[0:5, 0:5] = 1
    lab[14:20, 12:20] = 2
    rng = np.random.default_rng(0)
    for _ in range(50):
        for b in boxes_from_labels(lab, jitter=3, rng=rng):
            b.check(20, 20)


def test_box_json_parsing(tmp_path):
    p = tmp_path / "b.json"
    p.write_text(json.dumps([{"x0": 1, "y0": 2, "x1": 3, "y1": 4, "score": 0.5}]))
    assert read_boxes(p) == [Box(1, 2, 3, 4, 0.5)]
    p.write_text("")
    assert read_boxes(p) == []
    p.write_text("[{")
    with pytest.raises(DataError, match="malformed"):
        read_boxes(p)
    with pytest.raises(DataError, match="#1"):
        parse_boxes([{"x0": 0, "y0": 0, "x1": 1, "y1": 1}, {"x0": 0}])


# --- overlaps ----------------------------------------------------------------------

def test_overlap_identical_and_disjoint():
    lab = np.zeros((6, 6), int)
    lab[:2, :3] = 4
    lab[3:, 3:] = 9
    assert np.array_equal(overlap_matrix(lab, lab), np.diag([6, 9]))
    other = np.zeros_like(lab)
    other[4:, :2] = 1
    assert not overlap_matrix(lab, other).any()


def test_overlap_matches_brute():
    rng = np.random.default_rng(12)
    for _ in range(50):
        a, b = random_instance_map(rng, 16), random_instance_map(rng, 16)
        assert np.array_equal(overlap_matrix(a, b), overlap_brute(a, b))


def test_overlap_shape_mismatch():
    with pytest.raises(DataError):
        overlap_matrix(np.zeros((2, 2), int), np.zeros((3, 2), int))
