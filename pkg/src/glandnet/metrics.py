"""Gland-contest style evaluation: detection F1, object Dice, object Hausdorff, rank tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, DomainError
from .labelops import instance_ids, overlap_matrix

# --- exact Euclidean distance transform ----------------------------------------

_FAR = 1e15  # stands in for +inf; integers below 2**53 stay exact in float64


def _lower_envelope(f: np.ndarray) -> np.ndarray:
    """Min-plus transform d[l, q] = min_p f[l, p] + (q - p)^2 along axis 1.

    Lower envelope of parabolas, one sweep per line, vectorised over lines.
    """
    n_lines, n = f.shape
    rows = np.arange(n_lines)
    v = np.zeros((n_lines, n), dtype=np.int64)  # parabola apexes
    z = np.empty((n_lines, n + 1))  # envelope breakpoints
    z[:, 0] = -np.inf
    z[:, 1] = np.inf
    k = np.zeros(n_lines, dtype=np.int64)
    for q in range(1, n):
        fq = f[:, q] + q * q
        vk = v[rows, k]
        s = (fq - (f[rows, vk] + vk * vk)) / (2.0 * (q - vk))
        pop = s <= z[rows, k]
        while pop.any():
            k[pop] -= 1
            vk = v[rows, k]
            s = np.where(pop, (fq - (f[rows, vk] + vk * vk)) / (2.0 * (q - vk)), s)
            pop &= s <= z[rows, k]
        k += 1
        v[rows, k] = q
        z[rows, k] = s
        z[rows, k + 1] = np.inf
    out = np.empty_like(f)
    k[:] = 0
    for q in range(n):
        adv = z[rows, k + 1] < q
        while adv.any():
            k[adv] += 1
            adv &= z[rows, k + 1] < q
        vk = v[rows, k]
        out[:, q] = (q - vk) ** 2 + f[rows, vk]
    return out


def edt_squared(features: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance from every pixel to the nearest True pixel.

    Exact integers.  With no feature pixel at all, every entry is huge (>= 1e15).
    """
    features = np.asarray(features, dtype=bool)
    f = np.where(features, 0.0, _FAR)
    cols = _lower_envelope(np.ascontiguousarray(f.T)).T
    return np.rint(_lower_envelope(np.ascontiguousarray(cols))).astype(np.int64)


def edt(features: np.ndarray) -> np.ndarray:
    return np.sqrt(edt_squared(features))


# --- Dice and Hausdorff on single masks ---------------------------------------

def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """2|A & B| / (|A| + |B|); two empty masks score 1."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    _same_shape(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / total


def mask_points(mask: np.ndarray) -> np.ndarray:
    return np.argwhere(np.asarray(mask, dtype=bool))


def hausdorff_exact(a: np.ndarray, b: np.ndarray, chunk: int = 2048) -> float:
    """Symmetric Hausdorff distance between two (N, 2) integer point sets, by brute force."""
    a = np.asarray(a, dtype=np.int64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.int64).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        raise DomainError("Hausdorff distance of an empty point set")
    a_to_b = 0
    b_to_a = np.full(len(b), np.iinfo(np.int64).max)
    for start in range(0, len(a), chunk):
        block = a[start : start + chunk]
        d2 = ((block[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        a_to_b = max(a_to_b, int(d2.min(axis=1).max()))
        np.minimum(b_to_a, d2.min(axis=0), out=b_to_a)
    return math.sqrt(max(a_to_b, int(b_to_a.max())))


def _directed_sq(edt_sq_of_target: np.ndarray, source: np.ndarray) -> int:
    return int(edt_sq_of_target[source].max())


def hausdorff_fast(a: np.ndarray, b: np.ndarray) -> float:
    """Hausdorff distance between two masks via a distance transform of each."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    _same_shape(a, b)
    if not a.any() or not b.any():
        raise DomainError("Hausdorff distance of an empty mask")
    return math.sqrt(max(_directed_sq(edt_squared(b), a), _directed_sq(edt_squared(a), b)))


# --- detection F1 ---------------------------------------------------------------

@dataclass
class MatchAssignment:
    pred_to_gt: dict[int, int | None]
    gt_to_pred: dict[int, int | None]
    tp: int
    fp: int
    fn: int


@dataclass
class F1Result:
    f1: float
    precision: float
    recall: float
    match: MatchAssignment


def _areas(labels: np.ndarray, ids: np.ndarray) -> np.ndarray:
    if len(ids) == 0:
        return np.zeros(0, dtype=np.int64)
    counts = np.bincount(labels.ravel(), minlength=int(ids.max()) + 1)
    return counts[ids].astype(np.int64)


def precision_recall_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Zero denominators give 0; no objects on either side counts as perfect agreement."""
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def f1_detection(pred: np.ndarray, gt: np.ndarray) -> F1Result:
    """A prediction is a hit when it covers more than half of an unmatched GT object.

    Predictions are visited largest first; each claims its eligible GT object
    of largest overlap (lowest id on ties).
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    ov = overlap_matrix(pred, gt)
    s_ids, g_ids = instance_ids(pred), instance_ids(gt)
    s_area = _areas(pred, s_ids)
    g_area = _areas(gt, g_ids)
    eligible = 2 * ov > g_area[None, :]
    taken = np.zeros(len(g_ids), dtype=bool)
    pred_to_gt: dict[int, int | None] = {int(s): None for s in s_ids}
    gt_to_pred: dict[int, int | None] = {int(g): None for g in g_ids}
    for i in sorted(range(len(s_ids)), key=lambda i: (-s_area[i], s_ids[i])):
        cand = np.where(eligible[i] & ~taken, ov[i], -1)
        if cand.size == 0 or cand.max() < 0:
            continue
        j = int(np.argmax(cand))
        taken[j] = True
        pred_to_gt[int(s_ids[i])] = int(g_ids[j])
        gt_to_pred[int(g_ids[j])] = int(s_ids[i])
    tp = int(taken.sum())
    fp = len(s_ids) - tp
    fn = len(g_ids) - tp
    precision, recall, f1 = precision_recall_f1(tp, fp, fn)
    return F1Result(f1, precision, recall, MatchAssignment(pred_to_gt, gt_to_pred, tp, fp, fn))


# --- object-level Dice and Hausdorff -----------------------------------------

@dataclass
class ObjectTerms:
    """Area-weighted term sums for one side of an object-level metric.

    ``weighted`` is sum(|X_i| * term_i), ``area`` is sum(|X_i|).
    """

    weighted: float = 0.0
    area: int = 0

    def __iadd__(self, other: "ObjectTerms") -> "ObjectTerms":
        self.weighted += other.weighted
        self.area += other.area
        return self


def _combine(pred_side: ObjectTerms, gt_side: ObjectTerms, both_empty: float) -> float:
    if pred_side.area == 0 and gt_side.area == 0:
        return float(both_empty)
    total = 0.0
    if pred_side.area:
        total += pred_side.weighted / pred_side.area
    if gt_side.area:
        total += gt_side.weighted / gt_side.area
    return float(0.5 * total)


def _best_overlap(ov: np.ndarray) -> np.ndarray:
    """Per row, the column of maximal overlap (first on ties), or -1 if none overlaps."""
    if ov.shape[1] == 0:
        return np.full(ov.shape[0], -1)
    best = ov.argmax(axis=1)
    best[ov.max(axis=1) == 0] = -1
    return best


def object_dice_terms(pred: np.ndarray, gt: np.ndarray) -> tuple[ObjectTerms, ObjectTerms]:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    ov = overlap_matrix(pred, gt)
    s_area = _areas(pred, instance_ids(pred))
    g_area = _areas(gt, instance_ids(gt))

    def side(ov, own, other):
        best = _best_overlap(ov)
        terms = ObjectTerms(area=int(own.sum()))
        for i, j in enumerate(best):
            if j >= 0:
                terms.weighted += own[i] * (2.0 * ov[i, j] / (own[i] + other[j]))
        return terms

    return side(ov, s_area, g_area), side(ov.T, g_area, s_area)


def object_dice(pred: np.ndarray, gt: np.ndarray) -> float:
    """Area-weighted Dice of every object against its maximal-overlap counterpart, both ways."""
    return _combine(*object_dice_terms(pred, gt), both_empty=1.0)


def image_diagonal(shape: tuple[int, int]) -> float:
    return math.hypot(shape[0], shape[1])


class _InstanceDistances:
    """Cached per-instance masks and squared distance transforms for one label map."""

    def __init__(self, labels: np.ndarray, ids: np.ndarray):
        self.masks = [labels == i for i in ids]
        self._edt: dict[int, np.ndarray] = {}

    def edt_sq(self, k: int) -> np.ndarray:
        if k not in self._edt:
            self._edt[k] = edt_squared(self.masks[k])
        return self._edt[k]

    def centroid(self, k: int) -> np.ndarray:
        return mask_points(self.masks[k]).mean(axis=0)


def _pair_hausdorff(a: _InstanceDistances, i: int, b: _InstanceDistances, j: int) -> float:
    return math.sqrt(max(_directed_sq(b.edt_sq(j), a.masks[i]), _directed_sq(a.edt_sq(i), b.masks[j])))


def object_hausdorff_terms(
    pred: np.ndarray, gt: np.ndarray, unmatched: str = "hausdorff"
) -> tuple[ObjectTerms, ObjectTerms]:
    """Weighted Hausdorff sums for both sides.

    Counterpart = maximal-overlap object; an object overlapping nothing is
    paired with the opposite-side object of least Hausdorff distance
    (``unmatched="hausdorff"``) or nearest centroid (``"centroid"``); with no
    opposite objects at all the term is the image diagonal.
    """
    if unmatched not in ("hausdorff", "centroid"):
        raise DataError(f"unknown unmatched-object rule {unmatched!r}")
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    ov = overlap_matrix(pred, gt)
    s_ids, g_ids = instance_ids(pred), instance_ids(gt)
    s_area = _areas(pred, s_ids)
    g_area = _areas(gt, g_ids)
    s_dist = _InstanceDistances(pred, s_ids)
    g_dist = _InstanceDistances(gt, g_ids)
    diag = image_diagonal(pred.shape)

    def side(ov, own_area, own: _InstanceDistances, other: _InstanceDistances, n_other: int):
        best = _best_overlap(ov)
        terms = ObjectTerms(area=int(own_area.sum()))
        for i, j in enumerate(best):
            if n_other == 0:
                h = diag
            elif j >= 0:
                h = _pair_hausdorff(own, i, other, j)
            elif unmatched == "hausdorff":
                h = min(_pair_hausdorff(own, i, other, k) for k in range(n_other))
            else:
                c = own.centroid(i)
                d = [float(np.sum((other.centroid(k) - c) ** 2)) for k in range(n_other)]
                h = _pair_hausdorff(own, i, other, int(np.argmin(d)))
            terms.weighted += own_area[i] * h
        return terms

    return (
        side(ov, s_area, s_dist, g_dist, len(g_ids)),
        side(ov.T, g_area, g_dist, s_dist, len(s_ids)),
    )


def object_hausdorff(pred: np.ndarray, gt: np.ndarray, unmatched: str = "hausdorff") -> float:
    return _combine(*object_hausdorff_terms(pred, gt, unmatched), both_empty=0.0)


# --- per-image and dataset reports ---------------------------------------------

@dataclass
class ImageMetrics:
    name: str
    n_pred: int
    n_gt: int
    tp: int
    fp: int
    fn: int
    dice_pred: ObjectTerms
    dice_gt: ObjectTerms
    haus_pred: ObjectTerms
    haus_gt: ObjectTerms
    missing_prediction: bool = False

    def summary(self) -> dict:
        precision, recall, f1 = precision_recall_f1(self.tp, self.fp, self.fn)
        out = {
            "name": self.name,
            "f1": f1,
            "precision": precision,
            "recall": recall,
            "object_dice": _combine(self.dice_pred, self.dice_gt, 1.0),
            "object_hausdorff": _combine(self.haus_pred, self.haus_gt, 0.0),
            "n_pred": self.n_pred,
            "n_gt": self.n_gt,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
        }
        if self.missing_prediction:
            out["missing_prediction"] = True
        return out


def evaluate_image(
    pred: np.ndarray, gt: np.ndarray, name: str = "", unmatched: str = "hausdorff"
) -> ImageMetrics:
    det = f1_detection(pred, gt)
    dp, dg = object_dice_terms(pred, gt)
    hp, hg = object_hausdorff_terms(pred, gt, unmatched)
    return ImageMetrics(
        name,
        len(det.match.pred_to_gt),
        len(det.match.gt_to_pred),
        det.match.tp,
        det.match.fp,
        det.match.fn,
        dp,
        dg,
        hp,
        hg,
    )


@dataclass
class MetricsReport:
    per_image: list[ImageMetrics] = field(default_factory=list)

    def dataset(self) -> dict:
        """Split-level scores: counts summed before F1; object weights over all objects of the split."""
        tp = sum(m.tp for m in self.per_image)
        fp = sum(m.fp for m in self.per_image)
        fn = sum(m.fn for m in self.per_image)
        precision, recall, f1 = precision_recall_f1(tp, fp, fn)
        acc = [ObjectTerms() for _ in range(4)]
        for m in self.per_image:
            for a, t in zip(acc, (m.dice_pred, m.dice_gt, m.haus_pred, m.haus_gt)):
                a += t
        return {
            "f1": f1,
            "precision": precision,
            "recall": recall,
            "object_dice": _combine(acc[0], acc[1], 1.0),
            "object_hausdorff": _combine(acc[2], acc[3], 0.0),
            "n_pred": sum(m.n_pred for m in self.per_image),
            "n_gt": sum(m.n_gt for m in self.per_image),
            "tp": tp,
            "fp": fp,
            "fn": fn,
            "n_images": len(self.per_image),
        }

    def to_json(self, **extra) -> dict:
        out = {"per_image": [m.summary() for m in self.per_image], "dataset": self.dataset()}
        out.update(extra)
        return out


def evaluate_pairs(pairs: Iterable[tuple[str, np.ndarray, np.ndarray]], unmatched: str = "hausdorff") -> MetricsReport:
    """``pairs`` yields (name, prediction, ground truth)."""
    return MetricsReport([evaluate_image(p, g, name, unmatched) for name, p, g in pairs])


# --- rank aggregation -------------------------------------------------------------

METRICS = ("f1", "object_dice", "object_hausdorff")
HIGHER_IS_BETTER = {"f1": True, "object_dice": True, "object_hausdorff": False}
DEFAULT_SPLIT_WEIGHTS = {"testA": 0.75, "testB": 0.25}


def competition_ranks(values: Sequence[float], higher_is_better: bool) -> tuple[list[int], bool]:
    """1-based ranks where tied values share the smallest rank; also reports whether ties occurred."""
    keyed = [-v if higher_is_better else v for v in values]
    ranks = [1 + sum(1 for other in keyed if other < mine) for mine in keyed]
    return ranks, len(set(keyed)) < len(keyed)


@dataclass
class RankTable:
    methods: list[str]
    columns: list[tuple[str, str]]
    scores: dict[str, dict[tuple[str, str], float]]
    ranks: dict[str, dict[tuple[str, str], int]]
    rank_sum: dict[str, int]
    weighted_rank_sum: dict[str, float]
    weights: dict[str, float]
    tied_columns: list[tuple[str, str]] = field(default_factory=list)

    def order(self) -> list[str]:
        return sorted(self.methods, key=lambda m: (self.rank_sum[m], self.weighted_rank_sum[m], m))

    def to_json(self) -> dict:
        return {
            "columns": [{"metric": m, "split": s} for m, s in self.columns],
            "weights": self.weights,
            "tied_columns": [{"metric": m, "split": s} for m, s in self.tied_columns],
            "methods": [
                {
                    "method": name,
                    "scores": {f"{m}/{s}": self.scores[name].get((m, s)) for m, s in self.columns},
                    "ranks": {f"{m}/{s}": self.ranks[name][(m, s)] for m, s in self.columns},
                    "rank_sum": self.rank_sum[name],
                    "weighted_rank_sum": self.weighted_rank_sum[name],
                }
                for name in self.methods
            ],
        }

    def to_text(self) -> str:
        header = ["Method"]
        for m, s in self.columns:
            header += [f"{m} {s}", "Rank"]
        header += ["Rank Sum", "Weighted Rank Sum"]
        rows = [header]
        for name in self.methods:
            row = [name]
            for col in self.columns:
                score = self.scores[name].get(col)
                row += ["-" if score is None else f"{score:.4f}", str(self.ranks[name][col])]
            row += [str(self.rank_sum[name]), f"{self.weighted_rank_sum[name]:g}"]
            rows.append(row)
        widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
        lines = [" | ".join(cell.ljust(wd) if c == 0 else cell.rjust(wd) for c, (cell, wd) in enumerate(zip(r, widths))) for r in rows]
        lines.insert(1, "-+-".join("-" * wd for wd in widths))
        if self.tied_columns:
            lines.append("ties (shared minimum rank) in: " + ", ".join(f"{m}/{s}" for m, s in self.tied_columns))
        return "\n".join(lines) + "\n"


def _columns_for(splits: Sequence[str]) -> list[tuple[str, str]]:
    return [(m, s) for m in METRICS for s in splits]


def _weighted(ranks: Mapping[tuple[str, str], int], weights: Mapping[str, float]) -> tuple[int, float]:
    total = sum(ranks.values())
    weighted = sum(
        (Fraction(weights[s]) * r for (_, s), r in ranks.items() if s in weights),
        Fraction(0),
    )
    return total, float(weighted)


def aggregate_ranks(
    ranks: Mapping[str, Mapping[tuple[str, str], int]],
    weights: Mapping[str, float] | None = None,
) -> tuple[dict[str, int], dict[str, float]]:
    """Rank sum and split-weighted rank sum per method from already-assigned ranks."""
    weights = dict(DEFAULT_SPLIT_WEIGHTS if weights is None else weights)
    sums, weighted = {}, {}
    for name, r in ranks.items():
        sums[name], weighted[name] = _weighted(r, weights)
    return sums, weighted


def rank_aggregate(
    scores: Mapping[str, Mapping[tuple[str, str], float]],
    weights: Mapping[str, float] | None = None,
    splits: Sequence[str] | None = None,
    ranks: Mapping[str, Mapping[tuple[str, str], int]] | None = None,
) -> RankTable:
    """Rank every (metric, split) column across methods and total the ranks.

    ``ranks`` supplies already-assigned (e.g. published) ranks; they are used
    as given instead of being recomputed from ``scores``, which then only
    need to cover the methods for display and tie flagging.
    """
    weights = dict(DEFAULT_SPLIT_WEIGHTS if weights is None else weights)
    splits = list(splits or weights.keys())
    columns = _columns_for(splits)
    methods = list(ranks if ranks is not None else scores)
    if len(methods) < 1:
        raise DataError("rank aggregation needs at least one method")
    if ranks is None:
        for name in methods:
            for col in columns:
                v = scores.get(name, {}).get(col)
                if v is None or not math.isfinite(v):
                    raise DataError(f"method {name!r} has no score for {col[0]} on {col[1]}")
    table: dict[str, dict[tuple[str, str], int]] = {name: {} for name in methods}
    tied = []
    for col in columns:
        col_scores = [scores.get(n, {}).get(col) for n in methods]
        if all(v is not None for v in col_scores):
            col_ranks, has_ties = competition_ranks(col_scores, HIGHER_IS_BETTER[col[0]])
            if has_ties:
                tied.append(col)
        if ranks is not None:
            col_ranks = []
            for n in methods:
                r = ranks[n].get(col)
                if not isinstance(r, (int, np.integer)) or r < 1:
                    raise DataError(f"method {n!r} has no valid rank for {col[0]} on {col[1]}")
                col_ranks.append(int(r))
        for name, r in zip(methods, col_ranks):
            table[name][col] = r
    sums, weighted = aggregate_ranks(table, weights)
    return RankTable(
        methods,
        columns,
        {n: dict(scores.get(n, {})) for n in methods},
        table,
        sums,
        weighted,
        weights,
        tied,
    )
