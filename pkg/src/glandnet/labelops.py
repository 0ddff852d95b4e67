"""Instance-label operations: components, edge labels, disk dilation, box filling, overlaps."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import DataError

_STRUCTURE = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def relabel_sequential(labels: np.ndarray) -> np.ndarray:
    """Map nonzero ids to 1..n in order of first appearance in a row-major scan."""
    labels = np.asarray(labels)
    flat = labels.ravel()
    ids, first = np.unique(flat, return_index=True)
    keep = ids != 0
    ids, first = ids[keep], first[keep]
    ordered = ids[np.argsort(first, kind="stable")]
    lut_ids = np.sort(ordered)
    new_for_sorted = np.empty(len(ordered), dtype=np.int32)
    new_for_sorted[np.searchsorted(lut_ids, ordered)] = np.arange(1, len(ordered) + 1, dtype=np.int32)
    out = np.zeros(labels.shape, dtype=np.int32)
    nz = flat != 0
    out.ravel()[nz] = new_for_sorted[np.searchsorted(lut_ids, flat[nz])]
    return out


def connected_components(mask: np.ndarray, connectivity: int = 4) -> np.ndarray:
    """Label foreground components; ids are dense 1..n in row-major first-seen order."""
    if connectivity not in _STRUCTURE:
        raise DataError(f"connectivity must be 4 or 8, got {connectivity}")
    mask = np.asarray(mask, dtype=bool)
    labels, _ = ndimage.label(mask, structure=_STRUCTURE[connectivity])
    return relabel_sequential(labels)


def instance_ids(labels: np.ndarray) -> np.ndarray:
    ids = np.unique(labels)
    return ids[ids != 0]


def extract_edges(labels: np.ndarray) -> np.ndarray:
    """Mark pixels whose 4-neighbourhood (self included) is not label-uniform.

    Out-of-bounds neighbours take the centre pixel's own label, so the image
    border alone never creates an edge.  Distinct touching instances produce
    edges on both sides of their shared border.
    """
    labels = np.asarray(labels)
    padded = np.pad(labels, 1, mode="edge")
    centre = padded[1:-1, 1:-1]
    return (
        (padded[:-2, 1:-1] != centre)
        | (padded[2:, 1:-1] != centre)
        | (padded[1:-1, :-2] != centre)
        | (padded[1:-1, 2:] != centre)
    )


def instance_boundaries(labels: np.ndarray) -> np.ndarray:
    """Foreground pixels 4-adjacent to a *different* foreground instance."""
    labels = np.asarray(labels)
    padded = np.pad(labels, 1, mode="edge")
    centre = padded[1:-1, 1:-1]
    out = np.zeros(labels.shape, dtype=bool)
    for nb in (padded[:-2, 1:-1], padded[2:, 1:-1], padded[1:-1, :-2], padded[1:-1, 2:]):
        out |= (nb != centre) & (nb != 0)
    return out & (centre != 0)


def disk_offsets(radius: float) -> list[tuple[int, int]]:
    r = int(np.floor(radius))
    r2 = radius * radius
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dy * dy + dx * dx <= r2]


def dilate(mask: np.ndarray, radius: float) -> np.ndarray:
    """Binary dilation by the discrete Euclidean disk {(dy, dx): dy^2 + dx^2 <= radius^2}."""
    if radius < 0:
        raise DataError(f"dilation radius must be >= 0, got {radius}")
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    out = mask.copy()
    for dy, dx in disk_offsets(radius):
        if (dy, dx) == (0, 0) or abs(dy) >= h or abs(dx) >= w:
            continue
        out[max(dy, 0) : h + min(dy, 0), max(dx, 0) : w + min(dx, 0)] |= mask[
            max(-dy, 0) : h + min(-dy, 0), max(-dx, 0) : w + min(-dx, 0)
        ]
    return out


@dataclass(frozen=True)
class Box:
    """Half-open pixel box [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int
    score: float = 1.0

    @property
    def area(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def check(self, width: int, height: int) -> None:
        if not (0 <= self.x0 < self.x1 <= width and 0 <= self.y0 < self.y1 <= height):
            raise DataError(f"box {self} lies outside a {width}x{height} image or is empty")
        if not 0.0 <= self.score <= 1.0:
            raise DataError(f"box {self} has score outside [0, 1]")

    def to_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "x1": self.x1, "y1": self.y1, "score": self.score}


def fill_boxes(boxes: Sequence[Box], width: int, height: int) -> np.ndarray:
    """Per-pixel count of boxes covering the pixel."""
    counts = np.zeros((height, width), dtype=np.int32)
    for i, box in enumerate(boxes):
        try:
            box.check(width, height)
        except DataError as exc:
            raise DataError(f"box #{i}: {exc}") from None
        counts[box.y0 : box.y1, box.x0 : box.x1] += 1
    return counts


def boxes_from_labels(
    labels: np.ndarray, jitter: int = 0, rng: np.random.Generator | None = None
) -> list[Box]:
    """Tight bounding boxes of each instance (ascending id), optionally jittered and clipped."""
    labels = np.asarray(labels)
    h, w = labels.shape
    boxes = []
    for sl, iid in zip(ndimage.find_objects(labels), range(1, int(labels.max(initial=0)) + 1)):
        if sl is None:
            continue
        y0, y1 = sl[0].start, sl[0].stop
        x0, x1 = sl[1].start, sl[1].stop
        if jitter:
            if rng is None:
                raise DataError("box jitter needs a random generator")
            dx0, dy0, dx1, dy1 = rng.integers(-jitter, jitter + 1, size=4)
            x0, y0 = max(0, x0 + dx0), max(0, y0 + dy0)
            x1, y1 = min(w, max(x0 + 1, x1 + dx1)), min(h, max(y0 + 1, y1 + dy1))
        boxes.append(Box(int(x0), int(y0), int(x1), int(y1), 1.0))
    return boxes


def parse_boxes(obj, source: str = "<boxes>") -> list[Box]:
    if not isinstance(obj, list):
        raise DataError(f"{source}: expected a JSON array of boxes")
    boxes = []
    for i, item in enumerate(obj):
        try:
            boxes.append(
                Box(int(item["x0"]), int(item["y0"]), int(item["x1"]), int(item["y1"]), float(item.get("score", 1.0)))
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{source}: box #{i} is malformed ({exc!r})") from None
    return boxes


def read_boxes(path) -> list[Box]:
    path = Path(path)
    try:
        text = path.read_text()
        obj = json.loads(text) if text.strip() else []
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON: {exc}") from None
    return parse_boxes(obj, str(path))


def boxes_to_json(boxes: Sequence[Box]) -> str:
    return json.dumps([b.to_dict() for b in boxes], indent=1) + "\n"


def overlap_matrix(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Intersection pixel counts |S_i & G_j|; rows/cols follow ascending instance ids."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DataError(f"dimension mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    s_ids = instance_ids(pred)
    g_ids = instance_ids(gt)
    # ids -> 0..n with 0 meaning background
    s_idx = np.searchsorted(s_ids, pred.ravel()) + 1
    s_idx[pred.ravel() == 0] = 0
    g_idx = np.searchsorted(g_ids, gt.ravel()) + 1
    g_idx[gt.ravel() == 0] = 0
    ns, ng = len(s_ids), len(g_ids)
    joint = np.bincount(s_idx * (ng + 1) + g_idx, minlength=(ns + 1) * (ng + 1))
    return joint.reshape(ns + 1, ng + 1)[1:, 1:].astype(np.int64)
