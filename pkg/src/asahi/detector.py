"""Detector adapters: a ground-truth-driven oracle and an external-process client.

An adapter is any callable taking a :class:`PatchRequest` and returning
detections in the patch frame (pixels of the resized detector input). It
advertises ``concurrent = True`` when it may be called from several threads.
"""
from __future__ import annotations

import math
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .formats import Annotation, InterchangeError, Scene, parse_detections, write_ppm
from .geom import BBox
from .nms import Detection
from .slicing import SliceWindow

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *parts: int) -> int:
    """Fold integers into a 64-bit seed with splitmix64 (order-sensitive)."""
    state = splitmix64(seed & _MASK64)
    for p in parts:
        state = splitmix64(state ^ (p & _MASK64))
    return state


def make_rng(seed: int, *parts: int) -> np.random.Generator:
    """PCG64 stream keyed by ``seed`` and ``parts``."""
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *parts)))


class DetectorError(RuntimeError):
    def __init__(self, message: str, diagnostic: str = "", line_no: int | None = None):
        super().__init__(message if not diagnostic else f"{message}\n{diagnostic.rstrip()}")
        self.diagnostic = diagnostic
        self.line_no = line_no


@dataclass
class PatchRequest:
    scene: Scene
    window: SliceWindow
    scale_x: float
    scale_y: float
    out_w: int
    out_h: int
    raster: Optional[Callable[[], np.ndarray]] = field(default=None, repr=False)

    @property
    def origin(self) -> tuple[int, int] | None:
        if self.window.row < 0:
            return None
        return self.window.index

    def patch(self) -> np.ndarray:
        if self.raster is None:
            raise DetectorError(f"image {self.scene.image_id} has no raster available")
        return self.raster()


class DetectorAdapter(Protocol):
    concurrent: bool

    def __call__(self, request: PatchRequest) -> list[Detection]: ...


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreModel:
    """Confidence rises with visible size at detector input and is scaled by visibility."""

    low: float = 0.3
    high: float = 0.95
    half_size: float = 8.0
    noise_sigma: float = 0.0

    def score(self, edge_in: float, visible_fraction: float, rng: np.random.Generator | None) -> float:
        s = (self.low + (self.high - self.low) * edge_in / (edge_in + self.half_size)) * visible_fraction
        if self.noise_sigma > 0 and rng is not None:
            s += rng.normal(0.0, self.noise_sigma)
        return min(1.0, max(0.0, s))


@dataclass(frozen=True)
class OracleParams:
    min_detectable_px: float = 4.0
    jitter_sigma: float = 0.0
    miss_rate: float = 0.0
    fp_rate: float = 0.0
    min_visible_fraction: float = 0.6
    score_model: ScoreModel = ScoreModel()
    fp_score_max: float = 0.3
    num_classes: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.min_detectable_px < 0:
            raise ValueError("min_detectable_px must be >= 0")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError("miss_rate must be in [0, 1]")
        if self.fp_rate < 0:
            raise ValueError("fp_rate must be >= 0")
        if not 0.0 < self.min_visible_fraction <= 1.0:
            raise ValueError("min_visible_fraction must be in (0, 1]")

    @property
    def noisy(self) -> bool:
        return (self.jitter_sigma > 0 or self.miss_rate > 0 or self.fp_rate > 0
                or self.score_model.noise_sigma > 0)


def oracle_detect(region_gt: Sequence[Annotation], window: BBox, params: OracleParams,
                  scale_x: float, scale_y: float | None = None,
                  key: tuple[int, ...] = ()) -> list[Detection]:
    """Simulated detector output for one window, in the patch frame.

    An object is reported when the part of it inside ``window`` keeps at least
    ``min_visible_fraction`` of its area and that part's shorter edge, measured
    at detector input resolution, reaches ``min_detectable_px``.  ``key``
    (image id and slice index) selects the random stream, so results are
    reproducible per window regardless of call order.
    """
    if scale_y is None:
        scale_y = scale_x
    if scale_x <= 0 or scale_y <= 0:
        raise ValueError("input scale must be positive")
    out_w = window.width * scale_x
    out_h = window.height * scale_y
    rng = make_rng(params.seed, *key) if params.noisy else None
    dets = []
    for ann in region_gt:
        visible = ann.box.clip(window.x1, window.y1, window.x2, window.y2)
        if visible is None:
            continue
        fraction = (visible.width * visible.height) / (ann.box.width * ann.box.height)
        if fraction < params.min_visible_fraction:
            continue
        edge_in = min(visible.width * scale_x, visible.height * scale_y)
        if edge_in < params.min_detectable_px:
            continue
        if params.miss_rate > 0 and rng.random() < params.miss_rate:
            continue
        x1 = (visible.x1 - window.x1) * scale_x
        y1 = (visible.y1 - window.y1) * scale_y
        x2 = (visible.x2 - window.x1) * scale_x
        y2 = (visible.y2 - window.y1) * scale_y
        if params.jitter_sigma > 0:
            jx1, jy1, jx2, jy2 = rng.normal(0.0, params.jitter_sigma, 4)
            x1, x2 = sorted((min(max(x1 + jx1, 0.0), out_w), min(max(x2 + jx2, 0.0), out_w)))
            y1, y2 = sorted((min(max(y1 + jy1, 0.0), out_h), min(max(y2 + jy2, 0.0), out_h)))
            if x2 <= x1 or y2 <= y1:
                continue
        score = params.score_model.score(edge_in, fraction, rng)
        dets.append(Detection(ann.class_id, score, BBox(x1, y1, x2, y2)))

    if params.fp_rate > 0:
        for _ in range(int(rng.poisson(params.fp_rate))):
            max_edge = max(4.0, 0.25 * min(out_w, out_h))
            w, h = np.exp(rng.uniform(math.log(2.0), math.log(max_edge), 2))
            w, h = min(w, out_w), min(h, out_h)
            x1 = rng.uniform(0.0, out_w - w)
            y1 = rng.uniform(0.0, out_h - h)
            cls = int(rng.integers(0, params.num_classes))
            score = float(rng.uniform(0.01, params.fp_score_max))
            if w > 0 and h > 0:
                dets.append(Detection(cls, score, BBox(x1, y1, x1 + w, y1 + h)))
    return dets


class OracleDetector:
    concurrent = True

    def __init__(self, params: OracleParams = OracleParams()):
        self.params = params

    def __call__(self, request: PatchRequest) -> list[Detection]:
        rect = request.window.rect
        region = [a for a in request.scene.annotations
                  if a.box.x2 > rect.x1 and a.box.x1 < rect.x2 and a.box.y2 > rect.y1 and a.box.y1 < rect.y2]
        key = (request.scene.image_id, request.window.row, request.window.col)
        return oracle_detect(region, rect, self.params, request.scale_x, request.scale_y, key)


# ---------------------------------------------------------------------------
# external process
# ---------------------------------------------------------------------------


def _text(v) -> str:
    if isinstance(v, bytes):
        return v.decode(errors="replace")
    return v or ""


def external_detect(ppm_path: str | Path, command: str, timeout: float = 60.0) -> list[Detection]:
    """Run ``command`` (with ``{input}`` replaced by the PPM path) and parse its stdout."""
    tokens = shlex.split(command)
    if not tokens:
        raise DetectorError("empty detector command")
    if any("{input}" in t for t in tokens):
        args = [t.replace("{input}", str(ppm_path)) for t in tokens]
    else:
        args = tokens + [str(ppm_path)]
    try:
        proc = subprocess.run(args, capture_output=True, text=True, timeout=timeout)
    except subprocess.TimeoutExpired as exc:
        raise DetectorError(f"detector timed out after {timeout:g}s: {command}", _text(exc.stderr)) from None
    except OSError as exc:
        raise DetectorError(f"cannot run detector {args[0]!r}: {exc}") from None
    if proc.returncode != 0:
        raise DetectorError(f"detector exited with status {proc.returncode}: {command}", proc.stderr)
    try:
        return [d for _, d in parse_detections(proc.stdout, source=args[0])]
    except InterchangeError as exc:
        raise DetectorError(f"malformed detector output at line {exc.line_no}: {exc.reason}",
                            exc.line, line_no=exc.line_no) from None


class ExternalDetector:
    """Writes each patch to a temporary P6 PPM and shells out to ``command``."""

    def __init__(self, command: str, timeout: float = 60.0, concurrent: bool = True):
        self.command = command
        self.timeout = timeout
        self.concurrent = concurrent

    def __call__(self, request: PatchRequest) -> list[Detection]:
        patch = request.patch()
        with tempfile.TemporaryDirectory(prefix="asahi-") as tmp:
            tag = "full" if request.origin is None else f"r{request.window.row}c{request.window.col}"
            path = Path(tmp) / f"{request.scene.image_id}_{tag}.ppm"
            write_ppm(path, patch)
            return external_detect(path, self.command, self.timeout)
