"""``glandnet`` command line: synth | prep | augment | train | infer | eval | rank | gradcheck."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import channels as ch
from . import io as gio
from .augment import Sample, augment_strategy, derive_seed
from .config import RunConfig, load_config
from .errors import ConfigError, DataError, GlandError
from .labelops import boxes_from_labels, boxes_to_json, dilate, extract_edges, fill_boxes
from .manifest import Manifest, Record, load_manifest
from .metrics import MetricsReport, evaluate_image, rank_aggregate
from .pipeline import Models, load_items, predict, train_pipeline
from .synth import synth_image

log = logging.getLogger("glandnet")

EDGE_VARIANTS = {"EDGE1": 0.0, "EDGE3": 3.0}


def _threads() -> int:
    raw = os.environ.get("GLANDNET_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"GLANDNET_THREADS must be an integer, got {raw!r}") from None
    return n if n > 0 else (os.cpu_count() or 1)


def _map(fn, items):
    items = list(items)
    workers = min(_threads(), max(1, len(items)))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def _config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "edge", None):
        overrides["edge_radius"] = EDGE_VARIANTS[args.edge]
    if getattr(args, "detection", None):
        overrides["detection_source"] = args.detection
    if getattr(args, "seed", None) is not None and args.command in ("train",):
        overrides["seed"] = args.seed
    return load_config(getattr(args, "config", None), overrides)


def _valid_manifest(path) -> Manifest:
    manifest = load_manifest(path)
    manifest.validate()
    return manifest


# --- commands ------------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    out = Path(args.out)
    rng = np.random.default_rng(args.seed)
    records = []
    touching = 0
    for i in range(args.n):
        s = synth_image(rng, size=args.size, touching_fraction=args.touching)
        rid = f"{args.prefix}{i:03d}"
        img_p, lab_p, box_p = out / "images" / f"{rid}.ppm", out / "labels" / f"{rid}.pgm", out / "boxes" / f"{rid}.json"
        gio.write_image(img_p, s.image)
        gio.write_instance_map(lab_p, s.labels)
        gio.atomic_write_text(box_p, boxes_to_json(s.boxes))
        records.append(Record(rid, img_p, lab_p, box_p))
        touching += s.touching_pairs > 0
    Manifest(args.split, records, out.resolve()).save(out / "manifest.json")
    print(f"wrote {args.n} images ({touching} with touching glands) to {out}")
    return 0


def cmd_prep(args) -> int:
    cfg = _config(args)
    radius = cfg.edge_radius if args.edge_radius is None else args.edge_radius
    manifest = _valid_manifest(args.manifest)
    out = Path(args.out)

    def one(rec: Record):
        labels = rec.load_labels()
        gio.write_mask(out / "edges" / f"{rec.id}.pgm", dilate(extract_edges(labels), radius))
        boxes = rec.load_boxes()
        if boxes is None:
            log.warning("record %s has no boxes file; coverage map skipped", rec.id)
            return
        h, w = labels.shape
        gio.write_coverage(out / "coverage" / f"{rec.id}.pgm", fill_boxes(boxes, w, h))

    _map(one, manifest.records)
    gio.write_json(out / "prep.json", {"config_hash": cfg.hash(), "edge_radius": radius, "records": len(manifest.records)})
    print(f"prepared {len(manifest.records)} records in {out}")
    return 0


def cmd_augment(args) -> int:
    cfg = _config(args)
    strategy = args.strategy or cfg.strategy
    seed = cfg.seed if args.seed is None else args.seed
    manifest = _valid_manifest(args.manifest)
    out = Path(args.out)

    def one(rec: Record):
        src = Sample(rec.load_image(), rec.load_labels(), rec.id)
        rec_seed = derive_seed(seed, rec.id)
        emitted = []
        for k, s in enumerate(augment_strategy(src, strategy, rec_seed, cfg.warp_ranges())):
            rid = f"{rec.id}_{k:02d}"
            img_p, lab_p, box_p = out / "images" / f"{rid}.ppm", out / "labels" / f"{rid}.pgm", out / "boxes" / f"{rid}.json"
            gio.write_image(img_p, s.image)
            gio.write_instance_map(lab_p, s.labels)
            gio.atomic_write_text(box_p, boxes_to_json(boxes_from_labels(s.labels)))
            emitted.append((Record(rid, img_p, lab_p, box_p), {"id": rid, "source": rec.id, "seed": rec_seed, "transforms": s.log}))
        return emitted

    results = [e for batch in _map(one, manifest.records) for e in batch]
    lines = [json.dumps({**entry, "config_hash": cfg.hash()}, sort_keys=True) for _, entry in results]
    gio.atomic_write_text(out / "transforms.jsonl", "\n".join(lines) + "\n")
    Manifest(manifest.split, [r for r, _ in results], out.resolve()).save(out / "manifest.json")
    print(f"strategy {strategy}: {len(results)} samples from {len(manifest.records)} sources in {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    manifest = _valid_manifest(args.manifest)
    items = load_items(manifest, cfg)
    out = Path(args.out)
    networks = ("seg", "edge", "fusion") if args.net == "all" else (args.net,)
    existing = None
    if args.net != "all":
        try:
            existing = Models.load(out)
        except DataError:
            if args.net == "fusion":
                raise DataError(f"fusion training needs trained seg and edge models in {out}") from None
    models = train_pipeline(items, cfg, curve_dir=out, networks=networks, models=existing)
    models.save(out)
    gio.write_json(out / "train.json", {"config_hash": cfg.hash(), "networks": list(networks), "records": len(items)})
    gio.atomic_write_text(out / "config.txt", cfg.to_text())
    print(f"trained {', '.join(networks)} on {len(items)} samples; models in {out}")
    return 0


def cmd_infer(args) -> int:
    cfg = _config(args)
    manifest = load_manifest(args.manifest)
    models = Models.load(args.models)
    items = load_items(manifest, cfg, need_labels=False)
    out = Path(args.out)

    def one(item):
        fused, bundle, seg_only = predict(models, item, cfg)
        gio.write_instance_map(out / f"{item.name}.pgm", fused if args.mode == "fused" else seg_only)
        cache = out / "cache"
        gio.write_probmap(cache / f"{item.name}.seg.f64", bundle.seg)
        gio.write_probmap(cache / f"{item.name}.edge.f64", bundle.edge)
        gio.write_coverage(cache / f"{item.name}.coverage.pgm", bundle.det)

    _map(one, items)
    gio.write_json(out / "infer.json", {"config_hash": cfg.hash(), "mode": args.mode, "records": len(items)})
    print(f"wrote {len(items)} {args.mode} predictions to {out}")
    return 0


def evaluate_directory(pred_dir, manifest: Manifest, unmatched: str = "hausdorff") -> MetricsReport:
    pred_dir = Path(pred_dir)

    def one(rec: Record):
        gt = rec.load_labels()
        path = pred_dir / f"{rec.id}.pgm"
        missing = not path.exists()
        if missing:
            log.warning("no prediction for %s; its objects count as missed", rec.id)
            pred = np.zeros_like(gt)
        else:
            pred = gio.read_instance_map(path)
        m = evaluate_image(pred, gt, rec.id, unmatched)
        m.missing_prediction = missing
        return m

    return MetricsReport(_map(one, manifest.records))


def cmd_eval(args) -> int:
    cfg = _config(args)
    manifest = load_manifest(args.manifest)
    report = evaluate_directory(args.pred_dir, manifest, cfg.unmatched_rule)
    doc = report.to_json(split=manifest.split, config_hash=cfg.hash())
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        gio.atomic_write_text(args.out, text)
    d = doc["dataset"]
    print(
        f"{manifest.split}: F1 {d['f1']:.4f}  object Dice {d['object_dice']:.4f}  "
        f"object Hausdorff {d['object_hausdorff']:.4f}  ({d['n_images']} images)"
    )
    if not args.out:
        sys.stdout.write(text)
    return 0


def _parse_weights(raw: str | None, cfg: RunConfig) -> dict[str, float]:
    if raw is None:
        return cfg.split_weights()
    try:
        a, b = (float(x) for x in raw.split(","))
    except ValueError:
        raise ConfigError(f"--weights expects 'testA,testB', got {raw!r}") from None
    return {"testA": a, "testB": b}


def load_score_grid(path):
    """Read ``{method: {"metric/split": score | {"score": s, "rank": r}}}``.

    Returns (scores, ranks); ranks is None unless every cell carries one.
    """
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read score grid {path}: {exc}") from None
    if not isinstance(obj, dict):
        raise DataError(f"{path}: expected an object keyed by method")
    scores: dict[str, dict[tuple[str, str], float]] = {}
    ranks: dict[str, dict[tuple[str, str], int]] = {}
    cells = 0
    try:
        for method, cols in obj.items():
            scores[method], ranks[method] = {}, {}
            for key, v in cols.items():
                metric, _, split = key.partition("/")
                cells += 1
                if isinstance(v, dict):
                    if v.get("score") is not None:
                        scores[method][(metric, split)] = float(v["score"])
                    if v.get("rank") is not None:
                        ranks[method][(metric, split)] = int(v["rank"])
                else:
                    scores[method][(metric, split)] = float(v)
    except (AttributeError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed score grid ({exc})") from None
    have_ranks = sum(len(r) for r in ranks.values()) == cells and cells > 0
    return scores, (ranks if have_ranks else None)


def cmd_rank(args) -> int:
    cfg = _config(args)
    weights = _parse_weights(args.weights, cfg)
    grid: dict[str, dict[tuple[str, str], float]] = {}
    given_ranks = None
    if args.scores:
        grid, given_ranks = load_score_grid(args.scores)
        if args.recompute:
            given_ranks = None
    if given_ranks is not None and args.reports:
        raise ConfigError("published ranks cannot be mixed with report files; add --recompute")
    for entry in args.reports:
        try:
            label, path = entry.split("=", 1)
            method, split = label.rsplit(":", 1)
        except ValueError:
            raise ConfigError(f"report spec must look like METHOD:SPLIT=path, got {entry!r}") from None
        try:
            dataset = json.loads(Path(path).read_text())["dataset"]
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"cannot read report {path}: {exc!r}") from None
        scores = grid.setdefault(method, {})
        for metric in ("f1", "object_dice", "object_hausdorff"):
            scores[(metric, split)] = float(dataset[metric])
    if len(given_ranks or grid) < 2:
        raise ConfigError("rank needs at least two methods")
    table = rank_aggregate(grid, weights, ranks=given_ranks)
    doc = {**table.to_json(), "config_hash": cfg.hash()}
    if args.out:
        gio.write_json(args.out, doc)
    sys.stdout.write(table.to_text())
    return 0


def cmd_gradcheck(args) -> int:
    from .checks import run_gradchecks

    results = run_gradchecks(eps=args.eps, seed=args.seed, max_entries=args.max_entries)
    ok = True
    for name, err in results.items():
        passed = err < args.tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name:32s} max rel err {err:.3e}")
    return 0 if ok else 3


# --- argument parsing --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glandnet", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="key = value run configuration file")
        return sp

    sp = sub.add_parser("synth", help="generate a synthetic gland dataset")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--size", type=int, default=96)
    sp.add_argument("--touching", type=float, default=0.5, help="probability a gland touches an earlier one")
    sp.add_argument("--split", default="train", choices=("train", "testA", "testB"))
    sp.add_argument("--prefix", default="img")
    sp.set_defaults(func=cmd_synth)

    sp = with_config(sub.add_parser("prep", help="write edge labels and box coverage maps"))
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--edge", choices=sorted(EDGE_VARIANTS))
    sp.add_argument("--edge-radius", type=float)
    sp.set_defaults(func=cmd_prep)

    sp = with_config(sub.add_parser("augment", help="augmentation Strategy I or II"))
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--strategy", choices=("I", "II"))
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_augment)

    sp = with_config(sub.add_parser("train", help="train channel networks and the fusion net"))
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="model directory")
    sp.add_argument("--net", default="all", choices=("all", "seg", "edge", "fusion"))
    sp.add_argument("--edge", choices=sorted(EDGE_VARIANTS))
    sp.add_argument("--detection", choices=("file", "gt"))
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_train)

    sp = with_config(sub.add_parser("infer", help="predict instance maps"))
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--models", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", default="fused", choices=("fused", "seg"))
    sp.add_argument("--detection", choices=("file", "gt"))
    sp.set_defaults(func=cmd_infer)

    sp = with_config(sub.add_parser("eval", help="F1 / object Dice / object Hausdorff report"))
    sp.add_argument("--pred-dir", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = with_config(sub.add_parser("rank", help="rank sum and weighted rank sum table"))
    sp.add_argument("reports", nargs="*", help="METHOD:SPLIT=report.json")
    sp.add_argument("--scores", help="JSON score grid {method: {'metric/split': score}}")
    sp.add_argument("--recompute", action="store_true", help="ignore ranks in the score grid and rank the scores")
    sp.add_argument("--weights", help="split weights 'testA,testB' (default 0.75,0.25)")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_rank)

    sp = sub.add_parser("gradcheck", help="central-difference gradient checks")
    sp.add_argument("--eps", type=float, default=1e-5)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-entries", type=int, default=40)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GlandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
