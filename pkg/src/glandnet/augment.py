"""Seeded preprocessing and geometric augmentation (flip/rotate, warps, crop)."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError

KINDS = ("hflip", "rot90", "sinusoidal", "pincushion", "shear", "crop")


@dataclass
class Sample:
    image: np.ndarray  # H x W x 3 float64
    labels: np.ndarray  # H x W instance ids
    source_id: str = ""
    log: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.image.shape[:2] != self.labels.shape:
            raise DataError(
                f"sample {self.source_id!r}: image {self.image.shape[:2]} and labels {self.labels.shape} differ in size"
            )


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "TransformSpec":
        d = dict(d)
        kind = d.pop("kind", None)
        if kind not in KINDS:
            raise DataError(f"unknown transform kind {kind!r}")
        return cls(kind, d)


@dataclass(frozen=True)
class WarpRanges:
    amplitude: tuple[float, float] = (2.0, 8.0)
    period: tuple[float, float] = (50.0, 150.0)
    pincushion: tuple[float, float] = (0.05, 0.2)
    shear: tuple[float, float] = (-0.2, 0.2)
    warp_count: int = 3
    crop: int = 400


def per_channel_zero_mean(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    out = image - image.mean(axis=(0, 1), keepdims=True)
    # the mean of a constant channel is not always exact in floating point
    flat = image.max(axis=(0, 1)) == image.min(axis=(0, 1))
    out[..., flat] = 0.0
    return out


def derive_seed(base_seed: int, sample_id: str) -> int:
    digest = hashlib.sha256(f"{base_seed}:{sample_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


# --- resampling ----------------------------------------------------------------

def _sample_bilinear(image: np.ndarray, sy: np.ndarray, sx: np.ndarray, fill: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy = (sy - y0)[..., None]
    fx = (sx - x0)[..., None]
    out = np.zeros(sy.shape + image.shape[2:])
    for dy, dx, wt in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yy, xx = y0 + dy, x0 + dx
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = np.where(ok[..., None], image[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)], fill)
        out += wt * vals
    return out


def _sample_nearest(labels: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    h, w = labels.shape
    yy = np.floor(sy + 0.5).astype(np.int64)
    xx = np.floor(sx + 0.5).astype(np.int64)
    ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
    return np.where(ok, labels[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)], 0).astype(labels.dtype)


def _source_coords(spec: TransformSpec, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Backward map: for each output pixel, where to read in the input."""
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    p = spec.params
    if spec.kind == "sinusoidal":
        return y, x + p["amplitude"] * np.sin(2.0 * math.pi * y / p["period"])
    if spec.kind == "pincushion":
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        r_max = math.hypot(cy, cx) or 1.0
        dy, dx = y - cy, x - cx
        gain = 1.0 + p["strength"] * (dy * dy + dx * dx) / (r_max * r_max)
        return cy + dy * gain, cx + dx * gain
    if spec.kind == "shear":
        cy = (h - 1) / 2.0
        return y, x - p["shear"] * (y - cy)
    raise ConfigError(f"{spec.kind} is not a warp")


def apply_geometric(sample: Sample, spec: TransformSpec) -> Sample:
    """Apply one transform.  Flips, rotations and crops are exact permutations;
    warps resample the image bilinearly (out-of-frame filled with the channel
    mean) and the labels by nearest neighbour (out-of-frame is background).
    """
    img, lab = sample.image, sample.labels
    p = spec.params
    if spec.kind == "hflip":
        img, lab = img[:, ::-1], lab[:, ::-1]
    elif spec.kind == "rot90":
        k = int(p.get("k", 1)) % 4
        img, lab = np.rot90(img, k), np.rot90(lab, k)
    elif spec.kind == "crop":
        x0, y0, cw, ch = (int(p[key]) for key in ("x0", "y0", "width", "height"))
        h, w = lab.shape
        if x0 < 0 or y0 < 0 or cw < 1 or ch < 1 or x0 + cw > w or y0 + ch > h:
            raise DataError(f"crop {p} out of bounds for a {w}x{h} sample")
        img, lab = img[y0 : y0 + ch, x0 : x0 + cw], lab[y0 : y0 + ch, x0 : x0 + cw]
    elif spec.kind in ("sinusoidal", "pincushion", "shear"):
        h, w = lab.shape
        sy, sx = _source_coords(spec, h, w)
        fill = img.mean(axis=(0, 1))
        img = _sample_bilinear(img, sy, sx, fill)
        lab = _sample_nearest(lab, sy, sx)
    else:
        raise DataError(f"unknown transform kind {spec.kind!r}")
    return Sample(
        np.ascontiguousarray(img, dtype=np.float64),
        np.ascontiguousarray(lab),
        sample.source_id,
        sample.log + [spec.to_dict()],
    )


def replay(source: Sample, log: Sequence[dict]) -> Sample:
    out = Sample(source.image, source.labels, source.source_id, list(source.log))
    for entry in log:
        out = apply_geometric(out, TransformSpec.from_dict(entry))
    return out


def _draw_warp(kind: str, rng: np.random.Generator, ranges: WarpRanges) -> TransformSpec:
    if kind == "sinusoidal":
        return TransformSpec(
            kind,
            {"amplitude": float(rng.uniform(*ranges.amplitude)), "period": float(rng.uniform(*ranges.period))},
        )
    if kind == "pincushion":
        return TransformSpec(kind, {"strength": float(rng.uniform(*ranges.pincushion))})
    return TransformSpec("shear", {"shear": float(rng.uniform(*ranges.shear))})


def augmentation_plan(strategy: str, rng: np.random.Generator, ranges: WarpRanges = WarpRanges()) -> list[list[TransformSpec]]:
    """Transform chains (before cropping) for every emitted variant."""
    if strategy not in ("I", "II"):
        raise ConfigError(f"strategy must be 'I' or 'II', got {strategy!r}")
    plans = []
    for flip in (False, True):
        for k in range(4):
            plans.append(([TransformSpec("hflip")] if flip else []) + [TransformSpec("rot90", {"k": k})])
    if strategy == "II":
        kinds = ("sinusoidal", "pincushion", "shear")
        for i in range(ranges.warp_count):
            plans.append([_draw_warp(kinds[i % 3], rng, ranges)])
    return plans


def augment_strategy(
    sample: Sample, strategy: str, seed: int, ranges: WarpRanges = WarpRanges()
) -> list[Sample]:
    """Strategy I: the 8 flip x rotation variants.  Strategy II: those plus
    ``ranges.warp_count`` seeded warps.  Variants larger than ``ranges.crop``
    are cropped at a seeded random origin.
    """
    rng = np.random.default_rng(seed)
    out = []
    for chain in augmentation_plan(strategy, rng, ranges):
        s = sample
        for spec in chain:
            s = apply_geometric(s, spec)
        h, w = s.labels.shape
        if h > ranges.crop or w > ranges.crop:
            ch, cw = min(h, ranges.crop), min(w, ranges.crop)
            y0 = int(rng.integers(0, h - ch + 1))
            x0 = int(rng.integers(0, w - cw + 1))
            s = apply_geometric(s, TransformSpec("crop", {"x0": x0, "y0": y0, "width": cw, "height": ch}))
        out.append(s)
    return out
