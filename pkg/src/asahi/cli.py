"""Command-line entry point.

Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .bench import STRATEGIES as BENCH_STRATEGIES, format_csv as bench_csv, format_text as bench_text, run_bench
from .config import ConfigError, RunConfig, load_config
from .detector import DetectorError, ExternalDetector, OracleDetector, OracleParams, ScoreModel
from .evaluation import evaluate
from .formats import InterchangeError, format_detections, load_coco, read_detections, read_raster, dump_coco, write_ppm
from .fusion import PipelineError, make_plan, run_pipeline
from .geom import ImageDims, Metric
from .redundancy import REFERENCE_RESOLUTIONS, format_table_csv, format_table_text, reduction_table
from .saf import SLICERS, build_saf, verify_saf
from .scenegen import SceneSpec, generate_many, render, render_ppm
from .slicing import extract_patch, format_plan

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dims(text: str) -> ImageDims:
    try:
        return ImageDims.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _dims_list(text: str) -> list[ImageDims]:
    return [_dims(t) for t in text.replace(",", " ").split()]


def _common(fmt: bool = True) -> ArgumentParser:
    p = ArgumentParser(add_help=False)
    g = p.add_argument_group("run configuration (overrides --config)")
    g.add_argument("--config", type=Path, help="key=value configuration file")
    g.add_argument("--overlap", dest="overlap_ratio", type=float, help="overlap ratio between slices (default 0.15)")
    g.add_argument("--limit-dim", dest="limiting_dimension", type=int,
                   help="limiting slice dimension used by the grid threshold (default 512)")
    g.add_argument("--resize-target", dest="resize_target", type=int,
                   help="longer side of every detector input (default 512)")
    g.add_argument("--metric", choices=[m.value for m in Metric], help="suppression overlap metric (default diou)")
    g.add_argument("--threshold", type=float, help="suppression threshold (default 0.5)")
    g.add_argument("--class-agnostic", dest="class_aware", action="store_const", const=False,
                   help="suppress across classes")
    g.add_argument("--no-full-inference", dest="full_inference", action="store_const", const=False,
                   help="skip the whole-image pathway")
    g.add_argument("--no-patch-overlap", dest="patch_overlap", action="store_const", const=False,
                   help="slice with zero overlap")
    g.add_argument("--postprocess", choices=["cluster", "greedy", "soft", "wbf", "none"],
                   help="duplicate handling after merging (default cluster)")
    g.add_argument("--parallelism", type=int, help="concurrent detector calls (default: CPU count)")
    g.add_argument("--seed", type=int, help="random seed (default 0)")
    if fmt:
        p.add_argument("--format", choices=["text", "csv"], default="text", help="report format")
    return p


def _run_config(args) -> RunConfig:
    keys = ("overlap_ratio", "limiting_dimension", "resize_target", "metric", "threshold", "class_aware",
            "full_inference", "patch_overlap", "postprocess", "parallelism", "seed")
    overrides = {k: getattr(args, k, None) for k in keys}
    try:
        return load_config(args.config, overrides)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def _emit(text: str, path: Path | None = None) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        path.write_text(text)


def _require_file(path: Path, what: str) -> None:
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _plan_for(args, rc: RunConfig, dims: ImageDims):
    cfg = rc.pipeline()
    if args.strategy == "fixed":
        cfg = replace(cfg, strategy="fixed", patch_size=args.patch_size)
    return make_plan(dims, cfg)


def _image_dims(args) -> ImageDims:
    if args.dims is not None:
        return args.dims
    _require_file(args.image, "image")
    h, w = read_raster(args.image).shape[:2]
    return ImageDims(w, h)


def cmd_plan(args) -> int:
    rc = _run_config(args)
    plan = _plan_for(args, rc, _image_dims(args))
    if args.format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["row", "col", "x1", "y1", "x2", "y2", "width", "height"])
        writer.writerows([w.row, w.col, w.x1, w.y1, w.x2, w.y2, w.width, w.height] for w in plan.windows)
        _emit(buf.getvalue())
    else:
        _emit(format_plan(plan))
    return EXIT_OK


def cmd_slice(args) -> int:
    rc = _run_config(args)
    _require_file(args.image, "image")
    raster = read_raster(args.image)
    dims = ImageDims(raster.shape[1], raster.shape[0])
    plan = _plan_for(args, rc, dims)
    args.out.mkdir(parents=True, exist_ok=True)
    stem = args.image.stem
    for w in plan.windows:
        if args.no_resize:
            patch = raster[w.y1:w.y2, w.x1:w.x2]
        else:
            patch = extract_patch(raster, w, rc.resize_target)[0]
        write_ppm(args.out / f"{stem}_r{w.row}c{w.col}.ppm", patch)
    (args.out / f"{stem}_plan.txt").write_text(format_plan(plan))
    print(f"wrote {plan.n_slices} patches to {args.out}")
    return EXIT_OK


def cmd_redundancy(args) -> int:
    rc = _run_config(args)
    dims = args.dims if args.dims else list(REFERENCE_RESOLUTIONS)
    rows = reduction_table(dims, rc.pipeline().asahi, args.sahi_patch)
    _emit(format_table_csv(rows) if args.format == "csv" else format_table_text(rows))
    return EXIT_OK


def cmd_scenegen(args) -> int:
    rc = _run_config(args)
    try:
        spec = SceneSpec(seed=rc.seed, dims=args.dims, object_count=args.objects, class_count=args.classes,
                         min_edge=args.min_edge, max_edge=args.max_edge, crowding_cap=args.crowding,
                         small_fraction=args.small_fraction)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    scenes = generate_many(spec, args.count)
    args.out.mkdir(parents=True, exist_ok=True)
    dump_coco(args.out / "annotations.json", scenes)
    if args.render:
        for s in scenes:
            render_ppm(s, args.out / s.file_name)
    rows = [(s.image_id, len(s.annotations), s.meta["relaxed"], s.meta["warnings"]) for s in scenes]
    _emit(_table(["image_id", "objects", "relaxed", "warnings"], rows, args.format))
    return EXIT_OK


def _table(header: Sequence[str], rows, fmt: str) -> str:
    rows = [[str(v) for v in r] for r in rows]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    table = [list(header)] + rows
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in table) + "\n"


def cmd_detect(args) -> int:
    rc = _run_config(args)
    _require_file(args.scenes, "scene annotations")
    if args.images is not None and not args.images.is_dir():
        raise UsageError(f"image directory not found: {args.images}")
    if args.detector == "external":
        if not args.command:
            raise UsageError("--detector external requires --command")
        if args.images is None:
            raise UsageError("--detector external requires --images")
        detector = ExternalDetector(args.command, args.timeout)
    else:
        try:
            detector = OracleDetector(OracleParams(
                min_detectable_px=args.min_detectable, jitter_sigma=args.jitter, miss_rate=args.miss_rate,
                fp_rate=args.fp_rate, score_model=ScoreModel(noise_sigma=args.score_noise), seed=rc.seed))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    try:
        scenes = load_coco(args.scenes)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"cannot parse {args.scenes}: {exc}") from None
    cfg = rc.pipeline()

    records, summary, failures = [], [], []
    for s in scenes:
        try:
            res = run_pipeline(s, detector, cfg, image_dir=args.images)
        except PipelineError as exc:
            failures.append((s.image_id, exc))
            print(f"error: {exc}", file=sys.stderr)
            if args.fail_fast:
                break
            continue
        records += [(s.image_id, d) for d in res.detections]
        t = res.timings
        summary.append([s.image_id, res.plan.n_slices, res.invocations, res.raw_full, res.raw_slice, res.dropped,
                        res.merged, res.final, res.processed_pixels, f"{t['total']:.4f}"])

    _emit(format_detections(records), args.out)
    header = ["image_id", "slices", "invocations", "raw_full", "raw_slice", "dropped", "merged", "final",
              "processed_px", "seconds"]
    report = _table(header, summary, args.format)
    if failures:
        report += "# failures\n" + "".join(f"# {iid} {exc}\n" for iid, exc in failures)
    if args.summary is not None:
        args.summary.write_text(report)
    elif args.out is not None and str(args.out) != "-":
        sys.stdout.write(report)
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_eval(args) -> int:
    _require_file(args.dets, "detections file")
    _require_file(args.gt, "ground-truth file")
    scenes = load_coco(args.gt)
    gts = {s.image_id: list(s.annotations) for s in scenes}
    dets: dict = {}
    for iid, d in read_detections(args.dets):
        dets.setdefault(iid, []).append(d)
    report = evaluate(dets, gts, max_dets=args.max_dets, unmatched_in_all_buckets=args.unmatched_all_buckets)
    _emit(report.to_csv() if args.format == "csv" else report.to_text())
    if args.output is not None:
        args.output.write_text(report.to_csv())
    return EXIT_OK


def cmd_saf_build(args) -> int:
    rc = _run_config(args)
    _require_file(args.annotations, "annotation file")
    if args.images is not None and not args.images.is_dir():
        raise UsageError(f"image directory not found: {args.images}")
    if args.images is None and not args.synthetic:
        raise UsageError("give --images or --synthetic")
    if not 0.0 < args.min_visibility <= 1.0:
        raise UsageError("--min-visibility must be in (0, 1]")
    scenes = load_coco(args.annotations)
    records = build_saf(scenes, args.out, args.images, args.slicer, rc.pipeline().asahi, args.min_visibility,
                        rc.resize_target, args.patch_size, loader=render if args.synthetic else None,
                        parallelism=rc.parallelism)
    violations = verify_saf(args.out)
    full = sum(r.is_full for r in records)
    rows = [["images", len(scenes)], ["records", len(records)], ["full_records", full],
            ["slice_records", len(records) - full], ["annotations", sum(len(r.annotations) for r in records)],
            ["violations", len(violations)]]
    _emit(_table(["field", "value"], rows, args.format))
    for v in violations:
        print(v, file=sys.stderr)
    return EXIT_RUNTIME if violations else EXIT_OK


def cmd_bench(args) -> int:
    rc = _run_config(args)
    unknown = [s for s in args.strategies if s not in BENCH_STRATEGIES]
    if unknown:
        raise UsageError(f"unknown strategies {unknown}; choose from {list(BENCH_STRATEGIES)}")
    resolutions = list(REFERENCE_RESOLUTIONS) if args.resolutions is None else args.resolutions
    spec = SceneSpec(seed=rc.seed, object_count=args.objects)
    rows = run_bench(resolutions, args.strategies, rc.pipeline(), spec, args.scenes,
                     OracleParams(seed=rc.seed))
    _emit(bench_csv(rows) if args.format == "csv" else bench_text(rows))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="asahi", description="Adaptive slicing toolkit for small-object detection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="cmd_name", metavar="COMMAND", required=True)
    common = _common()

    def add(name, func, help_text, parents=(common,)):
        p = sub.add_parser(name, parents=list(parents), help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    p = add("plan", cmd_plan, "Print the slice plan for an image size.")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dims", type=_dims, help="image size as WIDTHxHEIGHT")
    src.add_argument("--image", type=Path, help="read the size from an image file")
    p.add_argument("--strategy", choices=["asahi", "fixed"], default="asahi", help="slicing strategy")
    p.add_argument("--patch-size", type=int, default=512, help="window size for --strategy fixed")

    p = add("slice", cmd_slice, "Cut an image into plan windows and write them as PPM.")
    p.add_argument("--image", type=Path, required=True, help="input image")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--strategy", choices=["asahi", "fixed"], default="asahi", help="slicing strategy")
    p.add_argument("--patch-size", type=int, default=512, help="window size for --strategy fixed")
    p.add_argument("--no-resize", action="store_true", help="write crops at source resolution")

    p = add("redundancy", cmd_redundancy, "Redundant-area comparison against fixed 512 px slicing.")
    p.add_argument("--dims", type=_dims, action="append", help="image size (repeatable; default: reference set)")
    p.add_argument("--sahi-patch", type=int, default=512, help="fixed baseline patch size")

    p = add("scenegen", cmd_scenegen, "Generate synthetic scenes as COCO JSON with optional PPM rasters.")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--count", type=int, default=10, help="number of scenes")
    p.add_argument("--dims", type=_dims, default=ImageDims(1920, 1080), help="scene size")
    p.add_argument("--objects", type=int, default=200, help="objects per scene")
    p.add_argument("--classes", type=int, default=10, help="number of classes")
    p.add_argument("--small-fraction", type=float, default=0.7, help="fraction of objects under 32x32")
    p.add_argument("--min-edge", type=int, default=5, help="smallest object edge")
    p.add_argument("--max-edge", type=int, default=160, help="largest object edge")
    p.add_argument("--crowding", type=float, default=0.1, help="maximum IoU between objects")
    p.add_argument("--render", action="store_true", help="also write PPM rasters")

    p = add("detect", cmd_detect, "Run the full pipeline over a scene set and write detections.")
    p.add_argument("--scenes", type=Path, required=True, help="COCO-format image list and annotations")
    p.add_argument("--images", type=Path, help="directory holding the rasters")
    p.add_argument("--detector", choices=["oracle", "external"], default="oracle", help="detector adapter")
    p.add_argument("--command", help="external detector command; {input} is replaced by the PPM path")
    p.add_argument("--timeout", type=float, default=60.0, help="external detector timeout in seconds")
    p.add_argument("--min-detectable", type=float, default=4.0, help="oracle: smallest detectable edge at input")
    p.add_argument("--jitter", type=float, default=0.0, help="oracle: box jitter sigma in input pixels")
    p.add_argument("--miss-rate", type=float, default=0.0, help="oracle: probability of missing an object")
    p.add_argument("--fp-rate", type=float, default=0.0, help="oracle: mean false positives per call")
    p.add_argument("--score-noise", type=float, default=0.0, help="oracle: score noise sigma")
    p.add_argument("--out", type=Path, help="detections file (default: stdout)")
    p.add_argument("--summary", type=Path, help="write the per-image run summary here")
    p.add_argument("--fail-fast", action="store_true", help="stop at the first failing image")

    p = add("eval", cmd_eval, "Score a detections file against COCO-format ground truth.")
    p.add_argument("--dets", type=Path, required=True, help="detections in interchange format")
    p.add_argument("--gt", type=Path, required=True, help="COCO-format ground truth")
    p.add_argument("--output", type=Path, help="also write the report as CSV here")
    p.add_argument("--max-dets", type=int, help="cap detections per image and class")
    p.add_argument("--unmatched-all-buckets", action="store_true",
                   help="count unmatched detections as false positives in every size bucket")

    p = add("saf-build", cmd_saf_build, "Build the sliced fine-tuning dataset and verify it.")
    p.add_argument("--annotations", type=Path, required=True, help="COCO-format input annotations")
    p.add_argument("--images", type=Path, help="directory holding the source rasters")
    p.add_argument("--synthetic", action="store_true", help="render rasters from annotations instead")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--slicer", choices=SLICERS, default="asahi", help="window planner")
    p.add_argument("--patch-size", type=int, default=512, help="window size for --slicer fixed")
    p.add_argument("--min-visibility", type=float, default=0.25, help="minimum retained area fraction")

    p = add("bench", cmd_bench, "Compare slicing strategies on synthetic scenes with the oracle detector.")
    p.add_argument("--resolutions", type=_dims_list,
                   help="comma-separated sizes (default: reference set; empty string for none)")
    p.add_argument("--strategies", type=lambda s: [t for t in s.replace(",", " ").split()],
                   default=list(BENCH_STRATEGIES), help=f"comma-separated subset of {','.join(BENCH_STRATEGIES)}")
    p.add_argument("--scenes", type=int, default=2, help="scenes per resolution")
    p.add_argument("--objects", type=int, default=200, help="objects per scene")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"asahi {args.cmd_name}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DetectorError, PipelineError, InterchangeError, ValueError, KeyError, OSError,
            json.JSONDecodeError) as exc:
        print(f"asahi {args.cmd_name}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
