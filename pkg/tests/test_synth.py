import numpy as np

from glandnet import io as gio
from glandnet.labelops import boxes_from_labels, connected_components
from glandnet.synth import count_touching_pairs, synth_dataset, synth_image


def test_deterministic():
    a, b = synth_dataset(3, seed=4), synth_dataset(3, seed=4)
    for x, y in zip(a, b):
        assert np.array_equal(x.image, y.image) and np.array_equal(x.labels, y.labels)
    c = synth_dataset(1, seed=5)[0]
    assert not np.array_equal(a[0].labels, c.labels)


def test_no_touching_means_separated_instances():
    for s in synth_dataset(8, seed=1, touching_fraction=0.0):
        assert s.touching_pairs == 0 and count_touching_pairs(s.labels) == 0
        # each instance is one connected piece, and pieces never merge
        assert connected_components(s.labels > 0).max() == s.labels.max()


def test_touching_pairs_reported():
    data = synth_dataset(10, seed=2, touching_fraction=1.0)
    assert any(s.touching_pairs for s in data)
    for s in data:
        assert count_touching_pairs(s.labels) >= s.touching_pairs


def test_instances_sequential_and_boxes_tight():
    s = synth_image(np.random.default_rng(3))
    ids = np.unique(s.labels)
    assert ids.tolist() == list(range(int(s.labels.max()) + 1))
    assert s.boxes == boxes_from_labels(s.labels)
    assert s.image.shape == (96, 96, 3) and 0 <= s.image.min() and s.image.max() <= 1


def test_pgm_roundtrip(tmp_path):
    s = synth_image(np.random.default_rng(6), size=48)
    gio.write_instance_map(tmp_path / "l.pgm", s.labels)
    assert np.array_equal(gio.read_instance_map(tmp_path / "l.pgm"), s.labels)


def test_count_touching_pairs_small():
    lab = np.array([[1, 1, 2], [0, 3, 2], [0, 3, 0]])
    assert count_touching_pairs(lab) == 3
