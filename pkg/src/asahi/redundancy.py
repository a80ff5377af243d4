"""Redundant processed-area accounting for slice plans."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .geom import ImageDims
from .slicing import AsahiConfig, SlicePlan, asahi_plan, fixed_plan

REFERENCE_RESOLUTIONS = (
    ImageDims(960, 540),
    ImageDims(1360, 765),
    ImageDims(1400, 1050),
    ImageDims(1920, 1080),
    ImageDims(2000, 1500),
    ImageDims(2913, 2428),
)

# Reduction percentages as published, keyed by (width, height).
REFERENCE_REDUCTION = {
    (960, 540): 38.72,
    (1360, 765): 2.56,
    (1400, 1050): 25.61,
    (1920, 1080): 25.92,
    (2000, 1500): 24.13,
    (2913, 2428): 6.99,
}


@dataclass(frozen=True)
class RedundancyReport:
    dims: ImageDims
    edge_x: float
    edge_y: float
    overlap_ratio: float
    a: int
    b: int
    rx: float
    ry: float
    sr: float
    sa: int

    @property
    def total(self) -> float:
        return self.sr + self.sa


def slice_counts(dims: ImageDims, edge_x: float, edge_y: float, mu: float) -> tuple[int, int]:
    a = max(1, math.ceil((dims.width - edge_x * mu) / (edge_x * (1.0 - mu))))
    b = max(1, math.ceil((dims.height - edge_y * mu) / (edge_y * (1.0 - mu))))
    return a, b


def analyze(dims: ImageDims, edge_x: float, edge_y: float | None = None,
            overlap_ratio: float = 0.15) -> RedundancyReport:
    """Redundant area for a grid of ``edge_x`` x ``edge_y`` windows.

    With ``edge_y`` omitted the windows are square (the fixed-patch case).
    Negative overruns clamp to zero.
    """
    if edge_y is None:
        edge_y = edge_x
    if edge_x <= 0 or edge_y <= 0:
        raise ValueError("edge lengths must be positive")
    mu = overlap_ratio
    W, H = dims.width, dims.height
    a, b = slice_counts(dims, edge_x, edge_y, mu)
    rx = max(0.0, a * edge_x - mu * edge_x * (a - 1) - W)
    ry = max(0.0, b * edge_y - mu * edge_y * (b - 1) - H)
    sr = rx * H + ry * W - rx * ry
    return RedundancyReport(dims, float(edge_x), float(edge_y), mu, a, b, rx, ry, sr, W * H)


def analyze_plan(plan: SlicePlan) -> RedundancyReport:
    """Redundancy of a generated plan, using its actual window extents."""
    return analyze(plan.source_dims, plan.window_w, plan.window_h, plan.overlap_ratio)


def reduction_rate(asahi: RedundancyReport, sahi: RedundancyReport) -> float:
    if asahi.sa != sahi.sa:
        raise ValueError(f"reports cover different image areas ({asahi.sa} vs {sahi.sa})")
    return 1.0 - (asahi.sr + asahi.sa) / (sahi.sr + sahi.sa)


@dataclass(frozen=True)
class ReductionRow:
    dims: ImageDims
    n_slices: int
    asahi: RedundancyReport
    sahi: RedundancyReport
    reduction: float
    asahi_pixels: int
    sahi_pixels: int

    @property
    def reported(self) -> float | None:
        return REFERENCE_REDUCTION.get((self.dims.width, self.dims.height))

    @property
    def delta(self) -> float | None:
        """Computed minus published reduction, in percentage points."""
        if self.reported is None:
            return None
        return 100.0 * self.reduction - self.reported


def reduction_table(resolutions: Iterable[ImageDims] = REFERENCE_RESOLUTIONS,
                    cfg: AsahiConfig = AsahiConfig(), sahi_patch: int = 512) -> list[ReductionRow]:
    rows = []
    for dims in resolutions:
        aplan = asahi_plan(dims, cfg)
        splan = fixed_plan(dims, sahi_patch, cfg.overlap_ratio)
        ra = analyze_plan(aplan)
        rs = analyze(dims, sahi_patch, sahi_patch, cfg.overlap_ratio)
        rows.append(ReductionRow(dims, aplan.n_slices, ra, rs, reduction_rate(ra, rs),
                                  aplan.processed_pixels, splan.processed_pixels))
    return rows


_COLUMNS = ["resolution", "slices", "asahi_sr", "sahi_sr", "reduction_pct", "reported_pct", "delta_pct",
            "asahi_pixels", "sahi_pixels"]


def _row_values(row: ReductionRow) -> list[str]:
    fmt = lambda v: "" if v is None else f"{v:.2f}"
    return [str(row.dims), str(row.n_slices), f"{row.asahi.sr:.2f}", f"{row.sahi.sr:.2f}",
            f"{100.0 * row.reduction:.2f}", fmt(row.reported), fmt(row.delta),
            str(row.asahi_pixels), str(row.sahi_pixels)]


def format_table_text(rows: Sequence[ReductionRow]) -> str:
    table = [_COLUMNS] + [_row_values(r) for r in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(_COLUMNS))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in table) + "\n"


def format_table_csv(rows: Sequence[ReductionRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_COLUMNS)
    writer.writerows(_row_values(r) for r in rows)
    return buf.getvalue()
