"""Strategy comparison over synthetic scenes: processed pixels, wall time, accuracy."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, replace
from typing import Sequence

from .detector import OracleDetector, OracleParams
from .evaluation import evaluate
from .fusion import PipelineConfig, run_pipeline
from .geom import ImageDims
from .scenegen import SceneSpec, generate_many

STRATEGIES = {
    "asahi": {"strategy": "asahi"},
    "fixed-4": {"strategy": "count", "n_slices": 4},
    "fixed-6": {"strategy": "count", "n_slices": 6},
    "fixed-12": {"strategy": "count", "n_slices": 12},
    "fixed-15": {"strategy": "count", "n_slices": 15},
    "sahi-512": {"strategy": "fixed", "patch_size": 512},
}


@dataclass
class BenchRow:
    dims: ImageDims
    strategy: str
    n_images: int
    n_slices: int
    processed_pixels: int  # per image
    seconds: float
    images_per_second: float
    mAP: float
    mAP50: float
    mAP50_s: float


def strategy_config(name: str, base: PipelineConfig = PipelineConfig()) -> PipelineConfig:
    if name not in STRATEGIES:
        raise ValueError(f"unknown strategy {name!r}; choose from {sorted(STRATEGIES)}")
    return replace(base, **STRATEGIES[name])


def run_bench(resolutions: Sequence[ImageDims], strategies: Sequence[str] = tuple(STRATEGIES),
              base: PipelineConfig = PipelineConfig(), scene_spec: SceneSpec = SceneSpec(),
              scenes_per_resolution: int = 2, oracle: OracleParams = OracleParams()) -> list[BenchRow]:
    cfgs = {name: strategy_config(name, base) for name in strategies}
    detector = OracleDetector(oracle)
    rows = []
    for dims in resolutions:
        scenes = generate_many(replace(scene_spec, dims=dims), scenes_per_resolution)
        gts = {s.image_id: s.annotations for s in scenes}
        for name, cfg in cfgs.items():
            dets, timings, pixels = {}, [], 0
            n_slices = 0
            for s in scenes:
                t0 = time.perf_counter()
                res = run_pipeline(s, detector, cfg)
                timings.append(time.perf_counter() - t0)
                dets[s.image_id] = res.detections
                pixels += res.processed_pixels
                n_slices = res.plan.n_slices
            report = evaluate(dets, gts, timings, pixels)
            n = len(scenes)
            rows.append(BenchRow(dims, name, n, n_slices, pixels // n if n else 0, sum(timings),
                                 report.images_per_second, report.mAP, report.mAP50, report.mAP50_s))
    return rows


_COLUMNS = ["resolution", "strategy", "images", "slices", "processed_px", "seconds", "img_per_s",
            "mAP", "mAP50", "mAP50_s"]


def _values(r: BenchRow) -> list[str]:
    return [str(r.dims), r.strategy, str(r.n_images), str(r.n_slices), str(r.processed_pixels),
            f"{r.seconds:.3f}", f"{r.images_per_second:.2f}", f"{r.mAP:.4f}", f"{r.mAP50:.4f}",
            f"{r.mAP50_s:.4f}"]


def format_text(rows: Sequence[BenchRow]) -> str:
    table = [_COLUMNS] + [_values(r) for r in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(_COLUMNS))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in table) + "\n"


def format_csv(rows: Sequence[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_COLUMNS)
    writer.writerows(_values(r) for r in rows)
    return buf.getvalue()
