"""Dataset manifests: a split name plus image/label/box file records (JSON)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .io import read_image, read_instance_map, write_json
from .labelops import Box, read_boxes

SPLITS = ("train", "testA", "testB")


@dataclass
class Record:
    id: str
    image: Path
    labels: Path | None = None
    boxes: Path | None = None

    def load_image(self) -> np.ndarray:
        return read_image(self.image)

    def load_labels(self) -> np.ndarray:
        if self.labels is None:
            raise DataError(f"record {self.id!r} has no label file")
        return read_instance_map(self.labels)

    def load_boxes(self) -> list[Box] | None:
        return None if self.boxes is None else read_boxes(self.boxes)


@dataclass
class Manifest:
    split: str
    records: list[Record] = field(default_factory=list)
    root: Path = Path(".")

    def validate(self) -> None:
        """Every referenced file exists and parses, and sizes agree per record."""
        seen = set()
        for rec in self.records:
            if rec.id in seen:
                raise DataError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
            for p in (rec.image, rec.labels, rec.boxes):
                if p is not None and not p.exists():
                    raise DataError(f"record {rec.id!r}: missing file {p}")
            h, w = rec.load_image().shape[:2]
            if rec.labels is not None and rec.load_labels().shape != (h, w):
                raise DataError(f"record {rec.id!r}: label map size differs from image")
            for box in rec.load_boxes() or []:
                box.check(w, h)

    def to_json(self) -> dict:
        root = Path(self.root).resolve()

        def rel(p):
            if p is None:
                return None
            p = Path(p).resolve()
            return str(p.relative_to(root)) if p.is_relative_to(root) else str(p)

        return {
            "split": self.split,
            "records": [
                {k: v for k, v in (("id", r.id), ("image", rel(r.image)), ("labels", rel(r.labels)), ("boxes", rel(r.boxes))) if v is not None}
                for r in self.records
            ],
        }

    def save(self, path) -> None:
        write_json(path, self.to_json())


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None
    root = path.parent.resolve()
    split = obj.get("split")
    if split not in SPLITS:
        raise DataError(f"{path}: split must be one of {SPLITS}, got {split!r}")
    records = []
    for i, r in enumerate(obj.get("records", [])):
        try:
            rid = str(r["id"])
            image = root / r["image"]
        except (KeyError, TypeError):
            raise DataError(f"{path}: record #{i} needs 'id' and 'image'") from None
        records.append(
            Record(
                rid,
                image,
                root / r["labels"] if r.get("labels") else None,
                root / r["boxes"] if r.get("boxes") else None,
            )
        )
    return Manifest(split, records, root)
