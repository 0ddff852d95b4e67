"""Synthetic histology-like tiles: ring-stained elliptical glands, some touching."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .labelops import Box, boxes_from_labels, dilate

BACKGROUND = np.array([0.86, 0.66, 0.76])
EPITHELIUM = np.array([0.50, 0.24, 0.52])
BASAL = np.array([0.30, 0.10, 0.36])
LUMEN = np.array([0.96, 0.92, 0.95])


@dataclass
class SynthImage:
    image: np.ndarray  # H x W x 3 in [0, 1]
    labels: np.ndarray  # H x W int32
    boxes: list[Box]
    touching_pairs: int


def _ellipse(h, w, cy, cx, a, b, theta) -> np.ndarray:
    y, x = np.mgrid[0:h, 0:w]
    dy, dx = y - cy, x - cx
    c, s = math.cos(theta), math.sin(theta)
    u = (dx * c + dy * s) / a
    v = (-dx * s + dy * c) / b
    return u * u + v * v <= 1.0


def _touches(mask: np.ndarray, other: np.ndarray) -> bool:
    """Disjoint but 4-adjacent."""
    return not (mask & other).any() and (mask & dilate(other, 1)).any()


def _place(rng, labels, size, touch_target, gap, margin, attempts=200):
    h, w = labels.shape
    occupied = labels > 0
    for _ in range(attempts):
        a = rng.uniform(*size)
        b = rng.uniform(size[0], a)
        theta = rng.uniform(0, math.pi)
        if touch_target is None:
            cy = rng.uniform(margin + a, h - margin - a)
            cx = rng.uniform(margin + a, w - margin - a)
            m = _ellipse(h, w, cy, cx, a, b, theta)
            if (m & dilate(occupied, gap)).any() or not _inside(m, margin):
                continue
            return m
        target = labels == touch_target
        ty, tx = np.argwhere(target).mean(axis=0)
        phi = rng.uniform(0, 2 * math.pi)
        others = occupied & ~target
        far = dilate(others, gap)
        # slide the new gland towards the target until the two just touch
        for dist in np.arange(2 * max(h, w) / 3, 0, -0.5):
            cy, cx = ty + dist * math.sin(phi), tx + dist * math.cos(phi)
            m = _ellipse(h, w, cy, cx, a, b, theta)
            if (m & target).any():
                break
            if _touches(m, target):
                if _inside(m, margin) and not (m & far).any():
                    return m
                break
    return None


def _inside(mask: np.ndarray, margin: int) -> bool:
    if not mask.any():
        return False
    ys, xs = np.nonzero(mask)
    h, w = mask.shape
    return ys.min() >= margin and xs.min() >= margin and ys.max() < h - margin and xs.max() < w - margin


def render(labels: np.ndarray, rng: np.random.Generator, ring: int = 3) -> np.ndarray:
    """Textured stroma, dark epithelial ring with a darker basal line, pale lumen."""
    h, w = labels.shape
    noise = ndimage.gaussian_filter(rng.normal(size=(h, w, 3)), sigma=(2, 2, 0))
    image = BACKGROUND + 0.25 * noise
    for iid in range(1, int(labels.max(initial=0)) + 1):
        m = labels == iid
        if not m.any():
            continue
        depth = ndimage.distance_transform_edt(m)
        image[m] = LUMEN
        image[m & (depth <= ring)] = EPITHELIUM
        image[m & (depth <= 1)] = BASAL
    image += 0.03 * rng.normal(size=image.shape)
    return np.clip(image, 0.0, 1.0)


def synth_image(
    rng: np.random.Generator,
    size: int = 96,
    n_range: tuple[int, int] = (2, 4),
    touching_fraction: float = 0.5,
    radius: tuple[float, float] = (9.0, 16.0),
    gap: int = 4,
) -> SynthImage:
    """One tile with ``n_range`` glands; each gland after the first touches an
    existing one with probability ``touching_fraction``, otherwise keeps at
    least ``gap`` pixels from all others.
    """
    labels = np.zeros((size, size), dtype=np.int32)
    target_n = int(rng.integers(n_range[0], n_range[1] + 1))
    touching = 0
    for _ in range(target_n):
        iid = int(labels.max()) + 1
        touch = iid > 1 and rng.random() < touching_fraction
        target = int(rng.integers(1, iid)) if touch else None
        m = _place(rng, labels, radius, target, gap, margin=2)
        if m is None and touch:
            m = _place(rng, labels, radius, None, gap, margin=2)
            target = None
        if m is None:
            continue
        labels[m] = iid
        touching += target is not None
    image = render(labels, rng)
    return SynthImage(image, labels, boxes_from_labels(labels), touching)


def count_touching_pairs(labels: np.ndarray) -> int:
    """Number of distinct instance pairs sharing a 4-adjacent border."""
    pairs = set()
    for a, b in ((labels[:-1, :], labels[1:, :]), (labels[:, :-1], labels[:, 1:])):
        sel = (a != b) & (a > 0) & (b > 0)
        for p, q in zip(a[sel], b[sel]):
            pairs.add((min(p, q), max(p, q)))
    return len(pairs)


def synth_dataset(n: int, seed: int, **kwargs) -> list[SynthImage]:
    rng = np.random.default_rng(seed)
    return [synth_image(rng, **kwargs) for _ in range(n)]
