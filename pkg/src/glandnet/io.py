"""File formats: netpbm images, JSON box lists, raw probability maps, atomic writes."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataError


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- netpbm ---------------------------------------------------------------

def _read_header(data: bytes, path) -> tuple[bytes, int, int, int, int]:
    """Parse a binary netpbm header; returns (magic, width, height, maxval, offset)."""
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated netpbm header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise DataError(f"{path}: unsupported netpbm magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise DataError(f"{path}: bad netpbm header: {exc}") from None
    if width <= 0 or height <= 0 or not 0 < maxval <= 65535:
        raise DataError(f"{path}: bad netpbm dimensions {width}x{height} maxval {maxval}")
    return magic, width, height, maxval, pos


def decode_netpbm(data: bytes, path="<bytes>") -> np.ndarray:
    magic, width, height, maxval, offset = _read_header(data, path)
    channels = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    need = count * dtype.itemsize
    raster = data[offset : offset + need]
    if len(raster) < need:
        raise DataError(f"{path}: truncated raster ({len(raster)} of {need} bytes)")
    arr = np.frombuffer(raster, dtype=dtype, count=count).astype(np.int64)
    if channels == 1:
        return arr.reshape(height, width)
    return arr.reshape(height, width, 3)


def encode_netpbm(arr: np.ndarray, maxval: int) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise DataError(f"cannot encode array of shape {arr.shape} as netpbm")
    if arr.size and (arr.min() < 0 or arr.max() > maxval):
        raise DataError(f"values outside [0, {maxval}]")
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = arr.shape[:2]
    header = b"%s\n%d %d\n%d\n" % (magic, w, h, maxval)
    return header + np.ascontiguousarray(arr, dtype=dtype).tobytes()


def read_pgm(path) -> np.ndarray:
    arr = decode_netpbm(Path(path).read_bytes(), path)
    if arr.ndim != 2:
        raise DataError(f"{path}: expected a grayscale PGM")
    return arr


def write_instance_map(path, labels: np.ndarray) -> None:
    """16-bit P5, id 0 = background."""
    atomic_write_bytes(path, encode_netpbm(np.asarray(labels), 65535))


def read_instance_map(path) -> np.ndarray:
    return read_pgm(path).astype(np.int32)


def write_mask(path, mask: np.ndarray) -> None:
    atomic_write_bytes(path, encode_netpbm(np.asarray(mask, dtype=bool).astype(np.uint8) * 255, 255))


def read_mask(path) -> np.ndarray:
    return read_pgm(path) > 0


def write_coverage(path, counts: np.ndarray) -> None:
    write_instance_map(path, counts)


def read_image(path) -> np.ndarray:
    """Binary PPM to float64 H x W x 3 in [0, 1]."""
    data = Path(path).read_bytes()
    magic, _, _, maxval, _ = _read_header(data, path)
    if magic != b"P6":
        raise DataError(f"{path}: expected a P6 color image")
    return decode_netpbm(data, path).astype(np.float64) / maxval


def write_image(path, image: np.ndarray) -> None:
    img = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    atomic_write_bytes(path, encode_netpbm(img, 255))


# --- probability maps ------------------------------------------------------

def write_probmap(path, prob: np.ndarray) -> None:
    """Raw float64 LE in (K, H, W) order with a ``.json`` sidecar holding w, h, k."""
    prob = np.asarray(prob, dtype=np.float64)
    if prob.ndim == 2:
        prob = prob[None]
    k, h, w = prob.shape
    path = Path(path)
    atomic_write_bytes(path, prob.astype("<f8").tobytes())
    write_json(path.with_suffix(path.suffix + ".json"), {"w": w, "h": h, "k": k})


def read_probmap(path) -> np.ndarray:
    path = Path(path)
    meta_path = path.with_suffix(path.suffix + ".json")
    try:
        meta = json.loads(meta_path.read_text())
        w, h, k = int(meta["w"]), int(meta["h"]), int(meta["k"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{meta_path}: bad probability-map sidecar: {exc}") from None
    raw = path.read_bytes()
    if len(raw) != 8 * w * h * k:
        raise DataError(f"{path}: expected {8 * w * h * k} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(k, h, w)
