"""Fine-tuning dataset construction: full images plus their slices, with remapped labels."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .formats import Annotation, Scene, read_raster, write_ppm
from .geom import BBox
from .slicing import (AsahiConfig, SliceWindow, asahi_plan, extract_patch, fixed_plan, full_window,
                      patch_shape)

MANIFEST_NAME = "manifest.json"
INDEX_NAME = "index.txt"
SLICERS = ("asahi", "fixed")

# violation kinds
MISSING_RASTER = "MISSING_RASTER"
RASTER_SIZE = "RASTER_SIZE"
BOX_OUT_OF_FRAME = "BOX_OUT_OF_FRAME"
DEGENERATE_BOX = "DEGENERATE_BOX"
LOW_VISIBILITY = "LOW_VISIBILITY"
BAD_VISIBILITY = "BAD_VISIBILITY"
UNKNOWN_RECORD = "UNKNOWN_RECORD"
INDEX_MISMATCH = "INDEX_MISMATCH"
MALFORMED = "MALFORMED"


class SafError(RuntimeError):
    pass


@dataclass
class SafRecord:
    source_id: int
    patch_id: int
    window: SliceWindow  # row == col == -1 marks the full image
    raster_path: str
    width: int
    height: int
    scale_x: float
    scale_y: float
    annotations: list[Annotation] = field(default_factory=list)
    visibility: list[float] = field(default_factory=list)

    @property
    def is_full(self) -> bool:
        return self.window.row < 0


@dataclass
class Violation:
    kind: str
    record: int | None
    detail: str

    def __str__(self) -> str:
        where = "manifest" if self.record is None else f"record {self.record}"
        return f"{self.kind} {where}: {self.detail}"


def _windows(scene: Scene, slicer: str, cfg: AsahiConfig, patch_size: int) -> list[SliceWindow]:
    if slicer == "asahi":
        plan = asahi_plan(scene.dims, cfg)
    elif slicer == "fixed":
        plan = fixed_plan(scene.dims, patch_size, cfg.overlap_ratio)
    else:
        raise ValueError(f"slicer must be one of {SLICERS}, got {slicer!r}")
    return [full_window(scene.dims), *plan.windows]


def _records_for(scene: Scene, slicer: str, cfg: AsahiConfig, patch_size: int,
                 min_visibility: float, target: int) -> list[SafRecord]:
    out = []
    for w in _windows(scene, slicer, cfg, patch_size):
        out_w, out_h, sx, sy = patch_shape(w.width, w.height, target)
        tag = "full" if w.row < 0 else f"r{w.row}c{w.col}"
        rec = SafRecord(scene.image_id, 0, w, f"{scene.image_id:06d}_{tag}.ppm", out_w, out_h, sx, sy)
        for ann in scene.annotations:
            vis_box = ann.box.clip(w.x1, w.y1, w.x2, w.y2)
            if vis_box is None:
                continue
            fraction = (vis_box.width * vis_box.height) / (ann.box.width * ann.box.height)
            if fraction < min_visibility:
                continue
            box = BBox((vis_box.x1 - w.x1) * sx, (vis_box.y1 - w.y1) * sy,
                       min((vis_box.x2 - w.x1) * sx, out_w), min((vis_box.y2 - w.y1) * sy, out_h))
            rec.annotations.append(Annotation(ann.class_id, box))
            rec.visibility.append(min(1.0, fraction))
        out.append(rec)
    return out


def _default_loader(image_dir: Optional[Path]) -> Callable[[Scene], np.ndarray]:
    def load(scene: Scene) -> np.ndarray:
        if image_dir is None or not scene.file_name:
            raise SafError(f"image {scene.image_id}: no raster source")
        path = image_dir / scene.file_name
        try:
            raster = read_raster(path)
        except (OSError, ValueError) as exc:
            raise SafError(f"image {scene.image_id}: cannot read {path}: {exc}") from None
        if raster.shape[:2] != (scene.dims.height, scene.dims.width):
            raise SafError(f"image {scene.image_id}: raster is {raster.shape[1]}x{raster.shape[0]}, "
                           f"annotations say {scene.dims}")
        return raster
    return load


def build_saf(scenes: Sequence[Scene], out_dir: str | Path, image_dir: str | Path | None = None,
              slicer: str = "asahi", cfg: AsahiConfig = AsahiConfig(), min_visibility: float = 0.25,
              target: int = 512, patch_size: int = 512, write_rasters: bool = True,
              loader: Callable[[Scene], np.ndarray] | None = None, parallelism: int = 1) -> list[SafRecord]:
    """Write the fine-tuning corpus under ``out_dir`` and return its records.

    Per image: one full-image record and one record per slice window, every
    raster resized so its longer side is ``target``.  A GT box is kept in a
    window when at least ``min_visibility`` of its area falls inside it.
    ``loader`` overrides how source rasters are obtained (default: read
    ``image_dir / file_name``).
    """
    if not 0.0 < min_visibility <= 1.0:
        raise ValueError(f"min_visibility must be in (0, 1], got {min_visibility}")
    if target < 1:
        raise ValueError("target must be positive")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    load = loader or _default_loader(Path(image_dir) if image_dir is not None else None)

    def per_image(scene: Scene) -> list[SafRecord]:
        recs = _records_for(scene, slicer, cfg, patch_size, min_visibility, target)
        if write_rasters:
            raster = load(scene)
            for r in recs:
                write_ppm(out_dir / r.raster_path, extract_patch(raster, r.window, target)[0])
        return recs

    ordered = sorted(scenes, key=lambda s: s.image_id)
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            grouped = list(pool.map(per_image, ordered))
    else:
        grouped = [per_image(s) for s in ordered]

    records = [r for group in grouped for r in group]
    for pid, r in enumerate(records, start=1):
        r.patch_id = pid
    write_manifest(out_dir, records, min_visibility, slicer)
    return records


def write_manifest(out_dir: Path, records: Sequence[SafRecord], min_visibility: float, slicer: str) -> None:
    images, annotations, classes = [], [], set()
    index_lines = []
    for r in records:
        w = r.window
        window = None if r.is_full else [w.x1, w.y1, w.x2, w.y2]
        images.append({"id": r.patch_id, "file_name": r.raster_path, "width": r.width, "height": r.height,
                       "source_image_id": r.source_id, "window": window,
                       "row": w.row, "col": w.col, "scale": [r.scale_x, r.scale_y]})
        for ann, vis in zip(r.annotations, r.visibility):
            b = ann.box
            annotations.append({"id": len(annotations) + 1, "image_id": r.patch_id,
                                "category_id": ann.class_id, "bbox": [b.x1, b.y1, b.width, b.height],
                                "area": b.width * b.height, "iscrowd": 0, "visibility": vis})
            classes.add(ann.class_id)
        kind = "FULL" if r.is_full else "SLICE"
        index_lines.append(f"{r.patch_id} {r.source_id} {kind} {w.row} {w.col} "
                           f"{w.x1} {w.y1} {w.x2} {w.y2} {r.raster_path} {len(r.annotations)}")
    manifest = {"info": {"min_visibility": min_visibility, "slicer": slicer},
                "images": images, "annotations": annotations,
                "categories": [{"id": c, "name": f"class_{c}"} for c in sorted(classes)]}
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1) + "\n")
    (out_dir / INDEX_NAME).write_text("".join(line + "\n" for line in index_lines))


def verify_saf(manifest_path: str | Path, check_rasters: bool = True) -> list[Violation]:
    """Re-check an existing corpus; problems are returned, never raised."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    root = manifest_path.parent
    try:
        data = json.loads(manifest_path.read_text())
        min_vis = float(data["info"]["min_visibility"])
        images = {int(im["id"]): im for im in data["images"]}
    except (OSError, ValueError, KeyError, TypeError) as exc:
        return [Violation(MALFORMED, None, str(exc))]

    violations = []
    for pid, im in images.items():
        path = root / im["file_name"]
        if check_rasters:
            if not path.is_file():
                violations.append(Violation(MISSING_RASTER, pid, str(path)))
            else:
                try:
                    shape = read_raster(path).shape
                    if shape[:2] != (im["height"], im["width"]):
                        violations.append(Violation(RASTER_SIZE, pid, f"{shape[1]}x{shape[0]} on disk, "
                                                    f"{im['width']}x{im['height']} in manifest"))
                except (OSError, ValueError) as exc:
                    violations.append(Violation(MISSING_RASTER, pid, f"unreadable: {exc}"))

    for ann in data.get("annotations", []):
        pid = int(ann["image_id"])
        im = images.get(pid)
        if im is None:
            violations.append(Violation(UNKNOWN_RECORD, pid, f"annotation {ann.get('id')}"))
            continue
        x, y, w, h = ann["bbox"]
        if w <= 0 or h <= 0:
            violations.append(Violation(DEGENERATE_BOX, pid, f"annotation {ann['id']} bbox {ann['bbox']}"))
        elif x < 0 or y < 0 or x + w > im["width"] + 1e-6 or y + h > im["height"] + 1e-6:
            violations.append(Violation(BOX_OUT_OF_FRAME, pid, f"annotation {ann['id']} bbox {ann['bbox']} "
                                        f"outside {im['width']}x{im['height']}"))
        vis = ann.get("visibility")
        if vis is None or not 0.0 < vis <= 1.0:
            violations.append(Violation(BAD_VISIBILITY, pid, f"annotation {ann['id']} visibility {vis}"))
        elif vis < min_vis:
            violations.append(Violation(LOW_VISIBILITY, pid, f"annotation {ann['id']} visibility {vis:.4f} "
                                        f"< {min_vis}"))

    index_path = root / INDEX_NAME
    if index_path.is_file():
        indexed = {int(line.split()[0]) for line in index_path.read_text().splitlines() if line.strip()}
        if indexed != set(images):
            violations.append(Violation(INDEX_MISMATCH, None,
                                        f"{len(indexed ^ set(images))} ids differ between index and manifest"))
    else:
        violations.append(Violation(INDEX_MISMATCH, None, f"{index_path} missing"))
    return violations
