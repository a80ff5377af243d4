"""On-disk formats: the detection interchange text format, PPM rasters, COCO JSON."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .geom import BBox, ImageDims
from .nms import Detection


class InterchangeError(ValueError):
    def __init__(self, line_no: int, line: str, reason: str, source: str = "<input>"):
        super().__init__(f"{source}:{line_no}: {reason}: {line.rstrip()!r}")
        self.line_no = line_no
        self.line = line
        self.reason = reason


def _fmt(v: float) -> str:
    s = f"{v:.6f}"
    return "0.000000" if s == "-0.000000" else s


def format_detection(image_id: int, det: Detection) -> str:
    b = det.box
    return (f"{image_id} {det.class_id} {_fmt(det.score)} "
            f"{_fmt(b.x1)} {_fmt(b.y1)} {_fmt(b.x2)} {_fmt(b.y2)}")


def format_detections(records: Iterable[tuple[int, Detection]]) -> str:
    """``image_id class_id score x1 y1 x2 y2`` per line, six decimals."""
    return "".join(format_detection(i, d) + "\n" for i, d in records)


def parse_detections(text: str, source: str = "<input>") -> list[tuple[int, Detection]]:
    """Inverse of :func:`format_detections`. Blank lines and ``#`` comments are skipped."""
    out = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) != 7:
            raise InterchangeError(line_no, line, f"expected 7 fields, got {len(fields)}", source)
        try:
            image_id = int(fields[0])
            class_id = int(fields[1])
            score, x1, y1, x2, y2 = (float(f) for f in fields[2:])
        except ValueError:
            raise InterchangeError(line_no, line, "non-numeric field", source) from None
        if not all(math.isfinite(v) for v in (score, x1, y1, x2, y2)):
            raise InterchangeError(line_no, line, "non-finite value", source)
        try:
            det = Detection(class_id, score, BBox(x1, y1, x2, y2))
        except ValueError as exc:
            raise InterchangeError(line_no, line, str(exc), source) from None
        out.append((image_id, det))
    return out


def read_detections(path: str | Path) -> list[tuple[int, Detection]]:
    path = Path(path)
    return parse_detections(path.read_text(), str(path))


# ---------------------------------------------------------------------------
# rasters
# ---------------------------------------------------------------------------


def write_ppm(path: str | Path, raster: np.ndarray) -> None:
    """Binary P6, maxval 255."""
    arr = np.asarray(raster)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8 raster, got {arr.shape} {arr.dtype}")
    Image.fromarray(arr, mode="RGB").save(path, format="PPM")


def read_raster(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


# ---------------------------------------------------------------------------
# COCO
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Annotation:
    class_id: int
    box: BBox


@dataclass
class Scene:
    """An image: dimensions, ground truth, and optionally where its raster lives."""

    image_id: int
    dims: ImageDims
    annotations: tuple[Annotation, ...] = ()
    file_name: str | None = None
    meta: dict = field(default_factory=dict)


def coco_dict(scenes: Sequence[Scene], class_names: dict[int, str] | None = None) -> dict:
    images, annotations = [], []
    classes = set()
    ann_id = 1
    for s in scenes:
        entry = {"id": s.image_id, "width": s.dims.width, "height": s.dims.height,
                 "file_name": s.file_name or f"{s.image_id:06d}.ppm"}
        images.append(entry)
        for a in s.annotations:
            b = a.box
            annotations.append({"id": ann_id, "image_id": s.image_id, "category_id": a.class_id,
                                "bbox": [b.x1, b.y1, b.width, b.height], "area": b.width * b.height,
                                "iscrowd": 0})
            classes.add(a.class_id)
            ann_id += 1
    names = dict(class_names or {})
    classes |= set(names)
    categories = [{"id": c, "name": names.get(c, f"class_{c}")} for c in sorted(classes)]
    return {"images": images, "annotations": annotations, "categories": categories}


def dump_coco(path: str | Path, scenes: Sequence[Scene], class_names: dict[int, str] | None = None) -> None:
    Path(path).write_text(json.dumps(coco_dict(scenes, class_names), indent=1) + "\n")


def scenes_from_coco(data: dict) -> list[Scene]:
    by_id: dict[int, Scene] = {}
    for img in data.get("images", []):
        iid = int(img["id"])
        by_id[iid] = Scene(iid, ImageDims(int(img["width"]), int(img["height"])), (), img.get("file_name"))
    anns: dict[int, list[Annotation]] = {iid: [] for iid in by_id}
    for ann in data.get("annotations", []):
        iid = int(ann["image_id"])
        if iid not in by_id:
            raise KeyError(f"annotation {ann.get('id')} references unknown image {iid}")
        x, y, w, h = (float(v) for v in ann["bbox"])
        anns[iid].append(Annotation(int(ann["category_id"]), BBox(x, y, x + w, y + h)))
    for iid, scene in by_id.items():
        scene.annotations = tuple(anns[iid])
    return [by_id[k] for k in sorted(by_id)]


def load_coco(path: str | Path) -> list[Scene]:
    return scenes_from_coco(json.loads(Path(path).read_text()))
