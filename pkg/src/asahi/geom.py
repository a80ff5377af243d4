"""Axis-aligned box arithmetic and overlap metrics.

Boxes are corner-form ``(x1, y1, x2, y2)`` in real-valued pixels. Scalar
functions take :class:`BBox` values; the ``pairwise_*`` helpers take
``(N, 4)`` arrays and are what the suppression code uses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

_FOUR_OVER_PI_SQ = 4.0 / (math.pi ** 2)


@dataclass(frozen=True, slots=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinates: {coords}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"degenerate box: {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def scaled(self, k: float) -> "BBox":
        return BBox(self.x1 * k, self.y1 * k, self.x2 * k, self.y2 * k)

    def clip(self, x1: float, y1: float, x2: float, y2: float) -> "BBox | None":
        """Intersect with a rectangle; None if nothing with positive area remains."""
        cx1, cy1 = max(self.x1, x1), max(self.y1, y1)
        cx2, cy2 = min(self.x2, x2), min(self.y2, y2)
        if cx2 <= cx1 or cy2 <= cy1:
            return None
        return BBox(cx1, cy1, cx2, cy2)

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BBox":
        return cls(x, y, x + w, y + h)


@dataclass(frozen=True, slots=True)
class ImageDims:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValueError(f"image dimensions must be integers: {self.width}x{self.height}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dimensions must be positive: {self.width}x{self.height}")

    @property
    def area(self) -> int:
        return self.width * self.height

    @classmethod
    def parse(cls, text: str) -> "ImageDims":
        """Parse ``"1920x1080"``."""
        parts = text.lower().strip().split("x")
        if len(parts) != 2:
            raise ValueError(f"expected WIDTHxHEIGHT, got {text!r}")
        try:
            w, h = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValueError(f"expected WIDTHxHEIGHT, got {text!r}") from None
        return cls(w, h)

    def __str__(self) -> str:
        return f"{self.width}x{self.height}"


class Metric(str, Enum):
    IOU = "iou"
    GIOU = "giou"
    DIOU = "diou"
    CIOU = "ciou"


def area(b: BBox) -> float:
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def _intersection(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    inter = _intersection(a, b)
    return inter / (area(a) + area(b) - inter)


def giou(a: BBox, b: BBox) -> float:
    inter = _intersection(a, b)
    union = area(a) + area(b) - inter
    enclosing = (max(a.x2, b.x2) - min(a.x1, b.x1)) * (max(a.y2, b.y2) - min(a.y1, b.y1))
    return inter / union - (enclosing - union) / enclosing


def _center_penalty(a: BBox, b: BBox) -> float:
    # rho^2 / c^2; c^2 > 0 for non-degenerate boxes
    dx = (a.x1 + a.x2) / 2.0 - (b.x1 + b.x2) / 2.0
    dy = (a.y1 + a.y2) / 2.0 - (b.y1 + b.y2) / 2.0
    cw = max(a.x2, b.x2) - min(a.x1, b.x1)
    ch = max(a.y2, b.y2) - min(a.y1, b.y1)
    return (dx * dx + dy * dy) / (cw * cw + ch * ch)


def diou(a: BBox, b: BBox) -> float:
    return iou(a, b) - _center_penalty(a, b)


def ciou(a: BBox, b: BBox) -> float:
    """DIoU minus the aspect-ratio consistency term ``alpha * v``.

    ``alpha`` is taken as 0 for disjoint boxes.
    """
    overlap = iou(a, b)
    d = overlap - _center_penalty(a, b)
    v = _FOUR_OVER_PI_SQ * (math.atan(a.width / a.height) - math.atan(b.width / b.height)) ** 2
    if overlap <= 0.0 or v == 0.0:
        return d
    alpha = v / ((1.0 - overlap) + v)
    return d - alpha * v


METRIC_FUNCS = {
    Metric.IOU: iou,
    Metric.GIOU: giou,
    Metric.DIOU: diou,
    Metric.CIOU: ciou,
}


def metric(a: BBox, b: BBox, kind: Metric | str = Metric.IOU) -> float:
    return METRIC_FUNCS[Metric(kind)](a, b)


# ---------------------------------------------------------------------------
# array forms
# ---------------------------------------------------------------------------


def boxes_to_array(boxes: Iterable[BBox]) -> np.ndarray:
    arr = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def _atan_aspect(boxes: np.ndarray) -> np.ndarray:
    # math.atan per box keeps results independent of array length/alignment
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    return np.array([math.atan(wi / hi) for wi, hi in zip(w.tolist(), h.tolist())], dtype=np.float64)


def pairwise(a: np.ndarray, b: np.ndarray, kind: Metric | str = Metric.IOU) -> np.ndarray:
    """(N, M) matrix of ``kind`` between rows of ``a`` and rows of ``b``."""
    kind = Metric(kind)
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax1, ay1, ax2, ay2 = (a[:, i][:, None] for i in range(4))
    bx1, by1, bx2, by2 = (b[:, i][None, :] for i in range(4))

    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    iw = np.minimum(ax2, bx2) - np.maximum(ax1, bx1)
    ih = np.minimum(ay2, by2) - np.maximum(ay1, by1)
    inter = np.where((iw > 0.0) & (ih > 0.0), iw * ih, 0.0)
    union = area_a + area_b - inter
    out = inter / union
    if kind is Metric.IOU:
        return out

    cw = np.maximum(ax2, bx2) - np.minimum(ax1, bx1)
    ch = np.maximum(ay2, by2) - np.minimum(ay1, by1)
    if kind is Metric.GIOU:
        enclosing = cw * ch
        return out - (enclosing - union) / enclosing

    dx = (ax1 + ax2) / 2.0 - (bx1 + bx2) / 2.0
    dy = (ay1 + ay2) / 2.0 - (by1 + by2) / 2.0
    d = out - (dx * dx + dy * dy) / (cw * cw + ch * ch)
    if kind is Metric.DIOU:
        return d

    diff = _atan_aspect(a)[:, None] - _atan_aspect(b)[None, :]
    v = _FOUR_OVER_PI_SQ * diff * diff
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where((out > 0.0) & (v > 0.0), v / ((1.0 - out) + v), 0.0)
    return d - alpha * v


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return pairwise(a, b, Metric.IOU)


def union_area(rects: Sequence[tuple[float, float, float, float]]) -> float:
    """Exact area of a union of axis-aligned rectangles (coordinate compression)."""
    if not rects:
        return 0.0
    xs = sorted({r[0] for r in rects} | {r[2] for r in rects})
    ys = sorted({r[1] for r in rects} | {r[3] for r in rects})
    xi = {x: i for i, x in enumerate(xs)}
    yi = {y: i for i, y in enumerate(ys)}
    covered = np.zeros((len(ys) - 1, len(xs) - 1), dtype=bool)
    for x1, y1, x2, y2 in rects:
        covered[yi[y1]:yi[y2], xi[x1]:xi[x2]] = True
    cell_w = np.diff(np.asarray(xs, dtype=np.float64))
    cell_h = np.diff(np.asarray(ys, dtype=np.float64))
    return float((covered * np.outer(cell_h, cell_w)).sum())
