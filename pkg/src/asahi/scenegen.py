"""Seeded synthetic scenes: rectangles with a controlled size mix and crowding cap."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .formats import Annotation, Scene, write_ppm
from .geom import BBox, ImageDims

SMALL_EDGE_LIMIT = 32  # edges below this on both axes give area < 32**2
MAX_ATTEMPTS = 100
BACKGROUND = (128, 128, 128)

_PALETTE = [
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212),
]


def class_color(class_id: int) -> tuple[int, int, int]:
    if class_id < len(_PALETTE):
        return _PALETTE[class_id]
    h = (class_id * 0x9E3779B1) & 0xFFFFFF
    c = ((h >> 16) & 0xFF, (h >> 8) & 0xFF, h & 0xFF)
    return (c[0] ^ 1, c[1], c[2]) if c == BACKGROUND else c


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    dims: ImageDims = ImageDims(1920, 1080)
    object_count: int = 200
    class_count: int = 10
    min_edge: int = 5
    max_edge: int = 160
    crowding_cap: float = 0.1
    small_fraction: float = 0.7
    relaxed_cap: float = 0.5
    image_id: int = 1

    def __post_init__(self):
        if self.object_count < 0:
            raise ValueError("object_count must be >= 0")
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")
        if not 1 <= self.min_edge < SMALL_EDGE_LIMIT:
            raise ValueError(f"min_edge must be in [1, {SMALL_EDGE_LIMIT})")
        if self.max_edge < SMALL_EDGE_LIMIT:
            raise ValueError(f"max_edge must be >= {SMALL_EDGE_LIMIT}")
        if not 0.0 <= self.small_fraction <= 1.0:
            raise ValueError("small_fraction must be in [0, 1]")
        if not 0.0 <= self.crowding_cap <= self.relaxed_cap <= 1.0:
            raise ValueError("need 0 <= crowding_cap <= relaxed_cap <= 1")


def _log_uniform_int(rng: np.random.Generator, lo: int, hi: int, size: int) -> np.ndarray:
    """Integers in [lo, hi] with log-uniform density."""
    v = np.exp(rng.uniform(math.log(lo), math.log(hi + 1), size))
    return np.clip(np.floor(v).astype(np.int64), lo, hi)


def _max_iou(cand: np.ndarray, placed: np.ndarray) -> float:
    if len(placed) == 0:
        return 0.0
    iw = np.clip(np.minimum(cand[2], placed[:, 2]) - np.maximum(cand[0], placed[:, 0]), 0, None)
    ih = np.clip(np.minimum(cand[3], placed[:, 3]) - np.maximum(cand[1], placed[:, 1]), 0, None)
    inter = iw * ih
    areas = (placed[:, 2] - placed[:, 0]) * (placed[:, 3] - placed[:, 1])
    a = (cand[2] - cand[0]) * (cand[3] - cand[1])
    return float((inter / (a + areas - inter)).max())


def generate(spec: SceneSpec) -> Scene:
    """Place ``object_count`` integer-aligned boxes.

    Exactly ``round(small_fraction * object_count)`` objects get both edges
    below 32 px; the rest get both edges in [32, max_edge].  Each object tries
    up to 100 uniform positions keeping IoU with every placed box at most
    ``crowding_cap``; failing that, the best of those positions is accepted if
    its IoU stays within ``relaxed_cap`` (counted as relaxed), otherwise the
    object is dropped (counted as a warning).
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    W, H = spec.dims.width, spec.dims.height
    n = spec.object_count
    n_small = int(round(spec.small_fraction * n))
    small = np.zeros(n, dtype=bool)
    small[:n_small] = True
    rng.shuffle(small)
    big_hi = min(spec.max_edge, max(W, H))
    sizes = np.empty((n, 2), dtype=np.int64)
    sizes[small] = _log_uniform_int(rng, spec.min_edge, SMALL_EDGE_LIMIT - 1, (int(small.sum()), 2))
    sizes[~small] = _log_uniform_int(rng, SMALL_EDGE_LIMIT, big_hi, (int((~small).sum()), 2))
    classes = rng.integers(0, spec.class_count, n)

    placed = np.zeros((0, 4), dtype=np.float64)
    annotations = []
    relaxed = dropped = 0
    for k in range(n):
        w, h = int(sizes[k, 0]), int(sizes[k, 1])
        if w > W or h > H:
            dropped += 1
            continue
        best, best_iou = None, math.inf
        for _ in range(MAX_ATTEMPTS):
            x = int(rng.integers(0, W - w + 1))
            y = int(rng.integers(0, H - h + 1))
            cand = np.array([x, y, x + w, y + h], dtype=np.float64)
            v = _max_iou(cand, placed)
            if v < best_iou:
                best, best_iou = cand, v
            if v <= spec.crowding_cap:
                break
        if best_iou > spec.crowding_cap:
            if best_iou > spec.relaxed_cap:
                dropped += 1
                continue
            relaxed += 1
        placed = np.vstack([placed, best])
        annotations.append(Annotation(int(classes[k]), BBox(*map(float, best))))

    meta = {"seed": spec.seed, "requested": n, "relaxed": relaxed, "warnings": dropped}
    return Scene(spec.image_id, spec.dims, tuple(annotations), f"{spec.image_id:06d}.ppm", meta)


def render(scene: Scene) -> np.ndarray:
    """Filled rectangles on a grey background; later objects paint over earlier ones.

    A pixel is coloured when its centre lies in ``[x1, x2) x [y1, y2)``.
    """
    W, H = scene.dims.width, scene.dims.height
    raster = np.empty((H, W, 3), dtype=np.uint8)
    raster[:] = BACKGROUND
    for a in scene.annotations:
        b = a.box
        c0, c1 = max(0, math.ceil(b.x1 - 0.5)), min(W, math.ceil(b.x2 - 0.5))
        r0, r1 = max(0, math.ceil(b.y1 - 0.5)), min(H, math.ceil(b.y2 - 0.5))
        if c1 > c0 and r1 > r0:
            raster[r0:r1, c0:c1] = class_color(a.class_id)
    return raster


def render_ppm(scene: Scene, path: str | Path) -> Path:
    path = Path(path)
    write_ppm(path, render(scene))
    return path


def generate_many(base: SceneSpec, count: int) -> list[Scene]:
    """``count`` scenes with image ids 1..count and seeds ``base.seed + i``."""
    return [generate(replace(base, seed=base.seed + i, image_id=i + 1)) for i in range(count)]
