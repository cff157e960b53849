"""Command-line entry point: corrupt, mock-detect, evaluate, flip, report."""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile
from dataclasses import replace
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .core import ClassRegistry, CorruptionError, CorruptionSpec, Kind, UndefinedMetricError, parse_level
from .corruption import DEFAULT_WEATHER, apply
from .dataset_io import (
    IMAGE_SUFFIXES,
    LABEL_SUFFIX,
    ImageFormatError,
    ManifestError,
    ParseError,
    RaggedSequenceError,
    format_predictions,
    load_flip_manifest,
    load_flip_sequences,
    load_ground_truth,
    load_manifest,
    load_predictions,
    read_image,
    write_image,
)
from .metrics import aggregate, evaluate_cell, flip_counts
from .mock_detector import DegradationProfile, detect, load_profile
from .report import SCHEMA_VERSION, ReportDocument, SchemaVersionError, cell_sort_key, render_csv, render_text
from .rng import Rng, derive_seed

MANIFEST_ENV = "CREDSCORE_MANIFEST"
SIDECAR_NAME = "corruption.json"


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _write_json(path, doc) -> None:
    text = json.dumps(doc, indent=2, sort_keys=False) + "\n"
    if str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _timestamp(args):
    if args.no_timestamp:
        return None
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _spec_from_args(args, seed: int):
    if args.kind is None:
        if args.level is not None:
            raise CorruptionError("--level given without --kind")
        return None
    if args.level is None:
        raise CorruptionError(f"--level is required for {args.kind}")
    return CorruptionSpec(args.kind, args.level, seed)


def cmd_corrupt(args) -> int:
    src, dst = Path(args.input_dir), Path(args.output_dir)
    try:
        level = parse_level(args.kind, args.level)
    except CorruptionError as exc:
        _err(str(exc))
        return 2
    if not src.is_dir():
        _err(f"{src}: not a directory")
        return 1
    names = sorted(p.name for p in src.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not names:
        _err(f"{src}: no PNG or PPM images found")
        return 1
    params = DEFAULT_WEATHER.strict_fog() if args.strict_paper_fog else DEFAULT_WEATHER
    specs = [CorruptionSpec(args.kind, level, derive_seed(args.seed, i)) for i in range(len(names))]

    dst.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".credscore-", dir=dst.parent))

    def work(i):
        try:
            write_image(apply(read_image(src / names[i]), specs[i], params), staging / names[i])
        except (OSError, ImageFormatError) as exc:
            return f"{src / names[i]}: {exc}"
        return None

    try:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            errors = [e for e in pool.map(work, range(len(names))) if e]
        if errors:
            for e in errors:
                _err(e)
            return 1
        sidecar = {
            "schema_version": SCHEMA_VERSION,
            "kind": specs[0].kind.value,
            "level": specs[0].to_dict()["level"],
            "seed": args.seed,
            "strict_paper_fog": bool(args.strict_paper_fog),
            "files": [{"file": n, "index": i, "spec": s.to_dict()} for i, (n, s) in enumerate(zip(names, specs))],
        }
        _write_json(staging / SIDECAR_NAME, sidecar)
        dst.mkdir(exist_ok=True)
        for name in names + [SIDECAR_NAME]:
            os.replace(staging / name, dst / name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return 0


def _profile_from_args(args, manifest_profile=None) -> DegradationProfile:
    if args.profile:
        return load_profile(args.profile)
    if manifest_profile is not None:
        return DegradationProfile.from_dict(manifest_profile)
    return DegradationProfile()


def cmd_mock_detect(args) -> int:
    gt_dir, out_dir = Path(args.ground_truth_dir), Path(args.output_dir)
    try:
        profile = _profile_from_args(args)
        spec = _spec_from_args(args, args.seed)
        registry = ClassRegistry(tuple(args.classes)) if args.classes else ClassRegistry()
        truth = load_ground_truth(gt_dir, registry)
    except (ParseError, CorruptionError, ValueError, OSError) as exc:
        _err(str(exc))
        return 1
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, image_id in enumerate(sorted(truth)):
        dets = detect(truth[image_id], profile, spec, Rng(args.seed, i), registry)
        (out_dir / f"{image_id}{LABEL_SUFFIX}").write_text(format_predictions(dets), encoding="utf-8")
    return 0


def evaluate_manifest(manifest, jobs: int = 1):
    registry = manifest.class_registry

    def run(cell):
        truth = load_ground_truth(cell.ground_truth, registry)
        preds = load_predictions(cell.predictions, list(truth), registry)
        images = {k: (preds[k], truth[k]) for k in truth}
        return evaluate_cell(cell.kind, cell.level, images, registry, manifest.iou_threshold)

    cells = sorted(manifest.cells, key=lambda c: cell_sort_key(c.kind, getattr(c.level, "value", c.level)))
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run, cells))


def cmd_evaluate(args) -> int:
    path = args.manifest or os.environ.get(MANIFEST_ENV)
    if not path:
        _err(f"no manifest given and {MANIFEST_ENV} is not set")
        return 2
    try:
        manifest = load_manifest(path)
        if args.iou_threshold is not None:
            if not 0 < args.iou_threshold < 1:
                raise ManifestError("iou threshold must lie in (0, 1)", "/iou_threshold")
            manifest = replace(manifest, iou_threshold=args.iou_threshold)
        reports = evaluate_manifest(manifest, args.jobs)
    except (ManifestError, ParseError, OSError) as exc:
        _err(f"{path}: {exc}" if isinstance(exc, ManifestError) else str(exc))
        return 1
    doc = ReportDocument(
        manifest=manifest.to_dict(base=Path(path).parent),
        cells=reports,
        aggregate=aggregate(reports),
        timestamp=_timestamp(args),
    )
    _write_json(args.output, doc.to_dict())
    return 0


def cmd_flip(args) -> int:
    try:
        manifest = load_flip_manifest(args.manifest)
        threshold = args.iou_threshold if args.iou_threshold is not None else manifest.iou_threshold
        lengths = {c.name: len(c.frames) for c in manifest.cells}
        if len(set(lengths.values())) > 1:
            raise RaggedSequenceError("cells have different frame counts", [f"{k} (n={v})" for k, v in lengths.items()])
        cells, total_flips, total_transitions = [], 0, 0
        for cell in manifest.cells:
            sequences = load_flip_sequences(cell, manifest.class_registry)
            flips, transitions = flip_counts(sequences, threshold)
            total_flips += flips
            total_transitions += transitions
            cells.append({
                "name": cell.name,
                "n_images": len(sequences),
                "n_frames": len(cell.frames),
                "flips": flips,
                "transitions": transitions,
                "flip_probability": flips / transitions if transitions else None,
            })
    except (ManifestError, ParseError, RaggedSequenceError, OSError, ValueError) as exc:
        _err(str(exc))
        return 1
    doc = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "timestamp": _timestamp(args),
        "iou_threshold": threshold,
        "cells": cells,
        "overall": {
            "flips": total_flips,
            "transitions": total_transitions,
            "flip_probability": total_flips / total_transitions if total_transitions else None,
        },
    }
    _write_json(args.output, doc)
    return 0


def cmd_report(args) -> int:
    try:
        doc = ReportDocument.from_dict(json.loads(Path(args.report).read_text(encoding="utf-8")))
    except SchemaVersionError as exc:
        _err(f"{args.report}: {exc}")
        return 1
    except (OSError, ValueError, KeyError, TypeError) as exc:
        _err(f"{args.report}: invalid report: {exc}")
        return 1
    text = render_csv(doc) if args.format == "csv" else render_text(doc)
    if args.output and args.output != "-":
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _global_options(parser, defaults: bool) -> None:
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    parser.add_argument("--seed", type=int, default=d(0), help="base seed (default 0)")
    parser.add_argument("--iou-threshold", type=float, default=d(None),
                        help="override the manifest IoU threshold")
    parser.add_argument("--jobs", type=int, default=d(1), help="worker threads (default 1)")
    parser.add_argument("--no-timestamp", action="store_true", default=d(False),
                        help="omit the timestamp so reports are byte-reproducible")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="credscore", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_options(parser, defaults=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, defaults=False)
    sub = parser.add_subparsers(dest="command", required=True)
    kinds = [k.value for k in Kind]

    p = sub.add_parser("corrupt", parents=[common], help="write corrupted copies of a directory of images")
    p.add_argument("input_dir")
    p.add_argument("output_dir")
    p.add_argument("--kind", required=True, choices=kinds)
    p.add_argument("--level", required=True, help="low|medium|high for weather kinds, 0-5 for Gaussian kinds")
    p.add_argument("--strict-paper-fog", action="store_true", help="fog as pure blur (no white blending)")
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("mock-detect", parents=[common], help="write synthetic predictions from ground truth")
    p.add_argument("ground_truth_dir")
    p.add_argument("output_dir")
    p.add_argument("--profile", help="degradation profile JSON (default: perfect detector at 0.95)")
    p.add_argument("--kind", choices=kinds)
    p.add_argument("--level")
    p.add_argument("--classes", nargs="+", help="class registry (default: KITTI classes)")
    p.set_defaults(func=cmd_mock_detect)

    p = sub.add_parser("evaluate", parents=[common], help="score every manifest cell and aggregate")
    p.add_argument("manifest", nargs="?", help=f"run manifest JSON (default: ${MANIFEST_ENV})")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("flip", parents=[common], help="flip probability over perturbed-copy sequences")
    p.add_argument("manifest", help="sequence manifest JSON")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_flip)

    p = sub.add_parser("report", parents=[common], help="render a report JSON as text or CSV tables")
    p.add_argument("report")
    p.add_argument("--format", choices=["text", "csv"], default="text")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        _err("--jobs must be >= 1")
        return 2
    try:
        return args.func(args)
    except UndefinedMetricError as exc:
        _err(str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
