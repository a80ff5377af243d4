"""Slice planning (adaptive and fixed-size) and patch extraction."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geom import BBox, ImageDims

ASAHI = "asahi"
FIXED = "fixed"
GRID = "grid"

# (short-axis count, long-axis count) for the fixed-count baselines
SLICE_COUNT_GRIDS = {4: (2, 2), 6: (2, 3), 12: (3, 4), 15: (3, 5)}


@dataclass(frozen=True)
class AsahiConfig:
    overlap_ratio: float = 0.15
    limiting_dimension: int = 512
    resize_target: int = 512

    def __post_init__(self):
        if not 0.0 <= self.overlap_ratio < 1.0:
            raise ValueError(f"overlap_ratio must be in [0, 1), got {self.overlap_ratio}")
        if self.limiting_dimension < 1:
            raise ValueError(f"limiting_dimension must be >= 1, got {self.limiting_dimension}")
        if self.resize_target < 1:
            raise ValueError(f"resize_target must be >= 1, got {self.resize_target}")


@dataclass(frozen=True)
class SliceWindow:
    rect: BBox
    row: int
    col: int

    @property
    def x1(self) -> int:
        return int(self.rect.x1)

    @property
    def y1(self) -> int:
        return int(self.rect.y1)

    @property
    def x2(self) -> int:
        return int(self.rect.x2)

    @property
    def y2(self) -> int:
        return int(self.rect.y2)

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    @property
    def index(self) -> tuple[int, int]:
        return (self.row, self.col)


@dataclass(frozen=True)
class SlicePlan:
    source_dims: ImageDims
    grid: tuple[int, int]
    windows: tuple[SliceWindow, ...]
    overlap_ratio: float
    threshold: float
    slice_size: float
    l_long: float
    l_short: float
    slice_w: float
    slice_h: float
    strategy: str = ASAHI
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n_slices(self) -> int:
        return len(self.windows)

    @property
    def window_w(self) -> int:
        return self.windows[0].width

    @property
    def window_h(self) -> int:
        return self.windows[0].height

    @property
    def processed_pixels(self) -> int:
        return sum(w.width * w.height for w in self.windows)


def asahi_threshold(cfg: AsahiConfig) -> float:
    """Image edge length above which the 12-slice grid is used."""
    mu = cfg.overlap_ratio
    return cfg.limiting_dimension * (4.0 - 3.0 * mu) + 1.0


def adaptive_edge(length: float, k: int, mu: float) -> float:
    """Edge of ``k`` windows with overlap ``mu`` spanning ``length``, plus one pixel."""
    return length / (k - (k - 1) * mu) + 1.0


def _axis_layout(length: int, edge: float, stride: float, count: int) -> tuple[list[int], int]:
    """Integer window starts along one axis and the shared integer window extent.

    Starts are ``floor(j * stride)``; the last window (and any other that would
    run past ``length``) is shifted inward so its far edge lands on the boundary.
    """
    width = min(math.ceil(edge - 1e-9), length)
    starts = [min(math.floor(j * stride), length - width) for j in range(count - 1)]
    starts.append(length - width)
    return starts, width


def _layout(dims: ImageDims, slice_w: float, slice_h: float, mu: float,
            n_cols: int, n_rows: int) -> tuple[tuple[int, int], tuple[SliceWindow, ...]]:
    xs, ww = _axis_layout(dims.width, slice_w, slice_w * (1.0 - mu), n_cols)
    ys, wh = _axis_layout(dims.height, slice_h, slice_h * (1.0 - mu), n_rows)
    windows = tuple(
        SliceWindow(BBox(float(x), float(y), float(x + ww), float(y + wh)), r, c)
        for r, y in enumerate(ys)
        for c, x in enumerate(xs)
    )
    return (n_rows, n_cols), windows


def _single_window_plan(dims: ImageDims, mu: float, threshold: float, p: float,
                        l_long: float, l_short: float, strategy: str) -> SlicePlan:
    win = SliceWindow(BBox(0.0, 0.0, float(dims.width), float(dims.height)), 0, 0)
    return SlicePlan(dims, (1, 1), (win,), mu, threshold, p, l_long, l_short,
                     float(dims.width), float(dims.height), strategy, {"fallback": "single_window"})


def _counted_plan(dims: ImageDims, k_long: int, k_short: int, mu: float, threshold: float,
                  strategy: str) -> SlicePlan:
    W, H = dims.width, dims.height
    landscape = W >= H
    long_len, short_len = (W, H) if landscape else (H, W)
    l_long = adaptive_edge(long_len, k_long, mu)
    l_short = adaptive_edge(short_len, k_short, mu)
    p = max(l_long, l_short)
    if landscape:
        slice_w, slice_h, n_cols, n_rows = l_long, l_short, k_long, k_short
    else:
        slice_w, slice_h, n_cols, n_rows = l_short, l_long, k_short, k_long
    if math.ceil(slice_w - 1e-9) > W or math.ceil(slice_h - 1e-9) > H:
        return _single_window_plan(dims, mu, threshold, p, l_long, l_short, strategy)
    grid, windows = _layout(dims, slice_w, slice_h, mu, n_cols, n_rows)
    return SlicePlan(dims, grid, windows, mu, threshold, p, l_long, l_short, slice_w, slice_h, strategy)


def asahi_plan(dims: ImageDims, cfg: AsahiConfig = AsahiConfig()) -> SlicePlan:
    """Adaptive 6- or 12-slice plan.

    The long image axis receives 3 (or 4) windows and the short axis 2 (or 3);
    the 12-slice grid is chosen when the longer image edge exceeds the
    threshold.  Window extents come from the per-axis edge equations;
    ``slice_size`` records the larger of the two.
    """
    T = asahi_threshold(cfg)
    mu = cfg.overlap_ratio
    if max(dims.width, dims.height) <= math.floor(T):
        k_long, k_short = 3, 2
    else:
        k_long, k_short = 4, 3
    return _counted_plan(dims, k_long, k_short, mu, T, ASAHI)


def count_plan(dims: ImageDims, n_slices: int, overlap_ratio: float = 0.15) -> SlicePlan:
    """Adaptive-size plan with a fixed slice count (4, 6, 12 or 15)."""
    if n_slices not in SLICE_COUNT_GRIDS:
        raise ValueError(f"unsupported slice count {n_slices}; choose from {sorted(SLICE_COUNT_GRIDS)}")
    if not 0.0 <= overlap_ratio < 1.0:
        raise ValueError(f"overlap ratio must be in [0, 1), got {overlap_ratio}")
    k_short, k_long = SLICE_COUNT_GRIDS[n_slices]
    return _counted_plan(dims, k_long, k_short, overlap_ratio, float("nan"), GRID)


def fixed_axis_count(length: int, patch: int, mu: float) -> int:
    return max(1, math.ceil((length - patch * mu) / (patch * (1.0 - mu))))


def fixed_plan(dims: ImageDims, patch: int = 512, overlap_ratio: float = 0.15) -> SlicePlan:
    """Fixed ``patch`` x ``patch`` sliding windows (the SAHI baseline)."""
    if patch < 1 or int(patch) != patch:
        raise ValueError(f"patch size must be a positive integer, got {patch}")
    mu = overlap_ratio
    if not 0.0 <= mu < 1.0:
        raise ValueError(f"overlap ratio must be in [0, 1), got {mu}")
    a = fixed_axis_count(dims.width, patch, mu)
    b = fixed_axis_count(dims.height, patch, mu)
    grid, windows = _layout(dims, float(patch), float(patch), mu, a, b)
    return SlicePlan(dims, grid, windows, mu, float("nan"), float(patch), float(patch), float(patch),
                     float(patch), float(patch), FIXED)


def full_window(dims: ImageDims) -> SliceWindow:
    return SliceWindow(BBox(0.0, 0.0, float(dims.width), float(dims.height)), -1, -1)


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def patch_shape(window_w: int, window_h: int, target: int) -> tuple[int, int, float, float]:
    """Output (width, height) for a window resized so its longer side is ``target``,
    with the exact per-axis scale factors."""
    s = target / max(window_w, window_h)
    out_w = max(1, _round_half_up(window_w * s))
    out_h = max(1, _round_half_up(window_h * s))
    return out_w, out_h, out_w / window_w, out_h / window_h


def _resample_axis(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres, edge clamp
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of an ``(H, W)`` or ``(H, W, C)`` array."""
    in_h, in_w = image.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return image.copy()
    data = image.astype(np.float64)
    y0, y1, fy = _resample_axis(in_h, out_h)
    x0, x1, fx = _resample_axis(in_w, out_w)
    if data.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = data[y0][:, x0] * (1.0 - fx) + data[y0][:, x1] * fx
    bottom = data[y1][:, x0] * (1.0 - fx) + data[y1][:, x1] * fx
    out = top * (1.0 - fy) + bottom * fy
    if np.issubdtype(image.dtype, np.integer):
        info = np.iinfo(image.dtype)
        out = np.clip(np.floor(out + 0.5), info.min, info.max)
    return out.astype(image.dtype)


def extract_patch(image: np.ndarray, window: SliceWindow, target: int) -> tuple[np.ndarray, float, float]:
    """Crop ``window`` from ``image`` and resize so the longer side equals ``target``.

    Returns ``(patch, scale_x, scale_y)``; a patch-frame coordinate ``u`` maps
    back to ``window.x1 + u / scale_x``.
    """
    H, W = image.shape[:2]
    if window.x1 < 0 or window.y1 < 0 or window.x2 > W or window.y2 > H:
        raise ValueError(f"window {window.rect.as_tuple()} outside {W}x{H} image")
    crop = image[window.y1:window.y2, window.x1:window.x2]
    out_w, out_h, sx, sy = patch_shape(window.width, window.height, target)
    return bilinear_resize(crop, out_h, out_w), sx, sy


def format_plan(plan: SlicePlan) -> str:
    """Line-oriented plan report: ``#`` header lines, then ``row col x1 y1 x2 y2``."""
    lines = [
        f"# strategy {plan.strategy}",
        f"# source {plan.source_dims}",
        f"# grid {plan.grid[0]}x{plan.grid[1]} ({plan.n_slices} slices)",
        f"# overlap_ratio {plan.overlap_ratio:g}",
    ]
    if not math.isnan(plan.threshold):
        lines.append(f"# threshold {plan.threshold:.4f} (truncated {math.floor(plan.threshold)})")
    lines += [
        f"# slice_size {plan.slice_size:.4f}",
        f"# l_long {plan.l_long:.4f} l_short {plan.l_short:.4f}",
        f"# window {plan.window_w}x{plan.window_h}",
        f"# processed_pixels {plan.processed_pixels}",
    ]
    lines += [f"{w.row} {w.col} {w.x1} {w.y1} {w.x2} {w.y2}" for w in plan.windows]
    return "\n".join(lines) + "\n"
