"""Dual-pathway inference: full-image and sliced detections merged and de-duplicated."""
from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .detector import DetectorAdapter, PatchRequest
from .formats import Scene, read_raster
from .geom import BBox
from .nms import (CDN_CONFIG, Detection, SuppressionConfig, cluster_suppress, greedy_suppress,
                  soft_suppress, wbf)
from .slicing import (AsahiConfig, SlicePlan, SliceWindow, asahi_plan, count_plan, extract_patch,
                      fixed_plan, full_window, patch_shape)

POSTPROCESSORS = ("cluster", "greedy", "soft", "wbf", "none")
STRATEGIES = ("asahi", "fixed", "count", "none")


@dataclass(frozen=True)
class PipelineConfig:
    asahi: AsahiConfig = AsahiConfig()
    suppression: SuppressionConfig = CDN_CONFIG
    enable_full_inference: bool = True
    enable_patch_overlap: bool = True
    postprocess: str = "cluster"
    strategy: str = "asahi"
    patch_size: int = 512
    n_slices: int = 6
    parallelism: int = 1
    soft_sigma: float = 0.5
    wbf_threshold: float = 0.55

    def __post_init__(self):
        if self.postprocess not in POSTPROCESSORS:
            raise ValueError(f"postprocess must be one of {POSTPROCESSORS}, got {self.postprocess!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.strategy == "none" and not self.enable_full_inference:
            raise ValueError("slicing strategy 'none' requires full inference")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    @property
    def overlap_ratio(self) -> float:
        return self.asahi.overlap_ratio if self.enable_patch_overlap else 0.0


@dataclass
class PipelineResult:
    image_id: int
    detections: list[Detection]
    plan: SlicePlan
    raw_slice: int
    raw_full: int
    dropped: int
    merged: int
    final: int
    invocations: int
    processed_pixels: int
    timings: dict = field(default_factory=dict, compare=False)


class PipelineError(RuntimeError):
    def __init__(self, image_id: int, origin, cause: BaseException):
        where = "full image" if origin is None else f"slice {origin}"
        super().__init__(f"detector failed on image {image_id}, {where}: {cause}")
        self.image_id = image_id
        self.origin = origin
        self.cause = cause


def make_plan(scene_dims, cfg: PipelineConfig) -> SlicePlan:
    mu = cfg.overlap_ratio
    if cfg.strategy == "none":
        nan = float("nan")
        return SlicePlan(scene_dims, (0, 0), (), mu, nan, nan, nan, nan, nan, nan, "none")
    if cfg.strategy == "fixed":
        return fixed_plan(scene_dims, cfg.patch_size, mu)
    if cfg.strategy == "count":
        return count_plan(scene_dims, cfg.n_slices, mu)
    return asahi_plan(scene_dims, replace(cfg.asahi, overlap_ratio=mu))


def remap(dets: Sequence[Detection], window: SliceWindow, scale_x: float, scale_y: float) -> list[Detection]:
    """Patch-frame detections to the full-image frame, clipped to the window.

    Boxes that clip to nothing are dropped.
    """
    if scale_x <= 0 or scale_y <= 0:
        raise ValueError("scales must be positive")
    r = window.rect
    origin = None if window.row < 0 else window.index
    out = []
    for d in dets:
        b = d.box
        mapped = (b.x1 / scale_x + r.x1, b.y1 / scale_y + r.y1, b.x2 / scale_x + r.x1, b.y2 / scale_y + r.y1)
        x1, y1 = max(mapped[0], r.x1), max(mapped[1], r.y1)
        x2, y2 = min(mapped[2], r.x2), min(mapped[3], r.y2)
        if x2 <= x1 or y2 <= y1:
            continue
        out.append(Detection(d.class_id, d.score, BBox(x1, y1, x2, y2), origin))
    return out


def _origin_key(origin) -> tuple[int, int]:
    return (-1, -1) if origin is None else origin


def merge_streams(full: Sequence[Detection], slices: dict) -> list[Detection]:
    """Concatenate full-inference and per-slice detections in a fixed order:
    full image first, then slices row-major, each group by descending score."""
    def by_score(ds):
        return sorted(ds, key=lambda d: -d.score)

    merged = by_score(full)
    for origin in sorted(slices, key=_origin_key):
        merged += by_score(slices[origin])
    return merged


def cross_slice_mask(dets: Sequence[Detection]) -> np.ndarray:
    """Pairs whose origins differ and are either the full image or neighbouring slices."""
    rows = np.array([_origin_key(d.origin)[0] for d in dets])
    cols = np.array([_origin_key(d.origin)[1] for d in dets])
    full = rows < 0
    same = (rows[:, None] == rows[None, :]) & (cols[:, None] == cols[None, :])
    neighbours = (np.abs(rows[:, None] - rows[None, :]) <= 1) & (np.abs(cols[:, None] - cols[None, :]) <= 1)
    return ~same & (full[:, None] | full[None, :] | neighbours)


def dedupe_cross_slice(dets: Sequence[Detection], cfg: SuppressionConfig = CDN_CONFIG) -> list[Detection]:
    """CDN restricted to detections from different, adjacent sources (or the full image)."""
    if not dets:
        return []
    return cluster_suppress(dets, cfg, eligible=cross_slice_mask(dets))


def postprocess(dets: Sequence[Detection], cfg: PipelineConfig) -> list[Detection]:
    if cfg.postprocess == "cluster":
        return cluster_suppress(dets, cfg.suppression)
    if cfg.postprocess == "greedy":
        return greedy_suppress(dets, cfg.suppression)
    if cfg.postprocess == "soft":
        return soft_suppress(dets, cfg.soft_sigma, class_aware=cfg.suppression.class_aware)
    if cfg.postprocess == "wbf":
        return wbf(dets, cfg.wbf_threshold)
    return list(dets)


class _RasterSource:
    def __init__(self, loader: Callable[[], np.ndarray] | None):
        self._loader = loader
        self._lock = threading.Lock()
        self._image = None

    def get(self) -> np.ndarray:
        with self._lock:
            if self._image is None:
                self._image = self._loader()
            return self._image


def _raster_loader(scene: Scene, raster, image_dir) -> Optional[Callable[[], np.ndarray]]:
    if raster is not None:
        return raster if callable(raster) else (lambda: raster)
    if scene.file_name and image_dir is not None:
        path = Path(image_dir) / scene.file_name
        return lambda: read_raster(path)
    return None


def run_pipeline(scene: Scene, detector: DetectorAdapter, cfg: PipelineConfig = PipelineConfig(),
                 raster=None, image_dir=None) -> PipelineResult:
    """Full pipeline for one image.

    The detector sees the whole image resized to ``resize_target`` (when full
    inference is on) and every slice of the plan, each resized the same way.
    Results are remapped, concatenated and post-processed.
    """
    t_start = time.perf_counter()
    dims = scene.dims
    target = cfg.asahi.resize_target
    plan = make_plan(dims, cfg)

    loader = _raster_loader(scene, raster, image_dir)
    source = _RasterSource(loader) if loader is not None else None

    def request_for(window: SliceWindow) -> PatchRequest:
        out_w, out_h, sx, sy = patch_shape(window.width, window.height, target)
        patch_fn = None
        if source is not None:
            patch_fn = lambda: extract_patch(source.get(), window, target)[0]
        return PatchRequest(scene, window, sx, sy, out_w, out_h, patch_fn)

    requests = []
    if cfg.enable_full_inference:
        requests.append(request_for(full_window(dims)))
    requests += [request_for(w) for w in plan.windows]

    def invoke(req: PatchRequest):
        t0 = time.perf_counter()
        try:
            dets = detector(req)
        except Exception as exc:
            raise PipelineError(scene.image_id, req.origin, exc) from exc
        return dets, time.perf_counter() - t0

    workers = cfg.parallelism if getattr(detector, "concurrent", False) else 1
    if workers > 1 and len(requests) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(requests))) as pool:
            outputs = list(pool.map(invoke, requests))
    else:
        outputs = [invoke(r) for r in requests]

    full, slices = [], {}
    raw_full = raw_slice = kept = 0
    timings = {"full_inference": 0.0, "slices": 0.0}
    for req, (dets, elapsed) in zip(requests, outputs):
        mapped = remap(dets, req.window, req.scale_x, req.scale_y)
        kept += len(mapped)
        if req.origin is None:
            raw_full += len(dets)
            full = mapped
            timings["full_inference"] += elapsed
        else:
            raw_slice += len(dets)
            slices[req.origin] = mapped
            timings["slices"] += elapsed

    merged = merge_streams(full, slices)
    t_post = time.perf_counter()
    final = postprocess(merged, cfg)
    timings["postprocess"] = time.perf_counter() - t_post
    timings["total"] = time.perf_counter() - t_start

    processed = plan.processed_pixels + (dims.area if cfg.enable_full_inference else 0)
    return PipelineResult(scene.image_id, final, plan, raw_slice, raw_full,
                          raw_full + raw_slice - kept, len(merged), len(final), len(requests),
                          processed, timings)
