"""COCO-style detection metrics with size buckets and throughput accounting."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .formats import Annotation
from .geom import BBox, boxes_to_array, pairwise_iou
from .nms import Detection

IOU_THRESHOLDS = np.round(np.linspace(0.5, 0.95, 10), 2)
RECALL_THRESHOLDS = np.linspace(0.0, 1.0, 101)
SMALL_MAX = 32 ** 2
MEDIUM_MAX = 96 ** 2


class SizeBucket(str, Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


def size_bucket_of_area(a: float) -> SizeBucket:
    if a < SMALL_MAX:
        return SizeBucket.SMALL
    if a <= MEDIUM_MAX:
        return SizeBucket.MEDIUM
    return SizeBucket.LARGE


def size_bucket(box: BBox) -> SizeBucket:
    return size_bucket_of_area(box.width * box.height)


@dataclass
class MatchResult:
    tp: list[bool]  # per detection, input order
    gt_for_det: list[int]  # matched gt index or -1
    fn: int


def match(dets: Sequence[Detection], gts: Sequence[Annotation], iou_threshold: float,
          class_aware: bool = True) -> MatchResult:
    """Greedy matching by descending score; each detection claims the unclaimed
    GT with the highest IoU that is at least ``iou_threshold``."""
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1), got {iou_threshold}")
    n = len(dets)
    tp = [False] * n
    gt_for_det = [-1] * n
    if n and gts:
        ious = pairwise_iou(boxes_to_array(d.box for d in dets), boxes_to_array(g.box for g in gts))
        claimed = np.zeros(len(gts), dtype=bool)
        gt_classes = np.array([g.class_id for g in gts])
        for i in sorted(range(n), key=lambda k: -dets[k].score):
            ok = ~claimed & (ious[i] >= iou_threshold)
            if class_aware:
                ok &= gt_classes == dets[i].class_id
            if not ok.any():
                continue
            j = int(np.argmax(np.where(ok, ious[i], -1.0)))
            claimed[j] = True
            tp[i] = True
            gt_for_det[i] = j
    return MatchResult(tp, gt_for_det, len(gts) - sum(tp))


def _evaluate_image(dets: Sequence[Detection], gts: Sequence[Annotation], thresholds: np.ndarray,
                    bucket: SizeBucket | None, unmatched_in_all_buckets: bool):
    """Per-threshold (scores, tp flags) of non-ignored detections and the
    non-ignored GT count, for one image and one class."""
    gt_ignore = np.array([bucket is not None and size_bucket(g.box) != bucket for g in gts], dtype=bool)
    det_out = np.array([bucket is not None and size_bucket(d.box) != bucket for d in dets], dtype=bool)
    order = sorted(range(len(dets)), key=lambda k: -dets[k].score)
    ious = None
    if dets and gts:
        ious = pairwise_iou(boxes_to_array(d.box for d in dets), boxes_to_array(g.box for g in gts))
    scores = np.array([dets[i].score for i in order], dtype=np.float64)
    per_t = []
    for t in thresholds:
        claimed = np.zeros(len(gts), dtype=bool)
        tp = np.zeros(len(order), dtype=bool)
        ignore = np.zeros(len(order), dtype=bool)
        for pos, i in enumerate(order):
            j = -1
            if ious is not None:
                # prefer GT inside the bucket; fall back to ignored GT
                for pool in (~gt_ignore, gt_ignore):
                    ok = pool & ~claimed & (ious[i] >= t)
                    if ok.any():
                        j = int(np.argmax(np.where(ok, ious[i], -1.0)))
                        break
            if j >= 0:
                claimed[j] = True
                if gt_ignore[j]:
                    ignore[pos] = True
                else:
                    tp[pos] = True
            elif det_out[i] and not unmatched_in_all_buckets:
                ignore[pos] = True
        per_t.append((scores[~ignore], tp[~ignore]))
    return per_t, int((~gt_ignore).sum())


def interpolated_ap(scores: np.ndarray, tp: np.ndarray, n_gt: int) -> float:
    """101-point interpolated AP from pooled scores and TP flags."""
    if n_gt == 0:
        return float("nan")
    if len(scores) == 0:
        return 0.0
    order = np.argsort(-scores, kind="mergesort")
    tp = tp[order]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # tolerance so that e.g. recall 7/20 reaches the 0.35 sample point
    idx = np.searchsorted(recall, RECALL_THRESHOLDS - 1e-12, side="left")
    sampled = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(sampled.mean())


def average_precision(per_image: Sequence[tuple[Sequence[Detection], Sequence[Annotation]]],
                      iou_threshold: float = 0.5) -> float:
    """AP of one class pooled over images (each item is that image's dets and GT)."""
    scores, flags, n_gt = [], [], 0
    for dets, gts in per_image:
        per_t, n = _evaluate_image(dets, gts, np.array([iou_threshold]), None, True)
        scores.append(per_t[0][0])
        flags.append(per_t[0][1])
        n_gt += n
    ap = interpolated_ap(np.concatenate(scores) if scores else np.zeros(0),
                         np.concatenate(flags) if flags else np.zeros(0, dtype=bool), n_gt)
    return 0.0 if np.isnan(ap) else ap


@dataclass
class EvalReport:
    mAP: float = 0.0
    mAP75: float = 0.0
    mAP50: float = 0.0
    mAP50_s: float = 0.0
    mAP50_m: float = 0.0
    mAP50_l: float = 0.0
    per_class: dict = field(default_factory=dict)  # class_id -> (AP, AP50)
    gt_counts: dict = field(default_factory=dict)  # bucket name -> GT count
    n_images: int = 0
    n_detections: int = 0
    images_per_second: float = 0.0
    processed_pixels_total: int = 0

    def rows(self) -> list[tuple[str, str]]:
        out = [("mAP", f"{self.mAP:.4f}"), ("mAP75", f"{self.mAP75:.4f}"), ("mAP50", f"{self.mAP50:.4f}"),
               ("mAP50_s", f"{self.mAP50_s:.4f}"), ("mAP50_m", f"{self.mAP50_m:.4f}"),
               ("mAP50_l", f"{self.mAP50_l:.4f}"), ("images", str(self.n_images)),
               ("detections", str(self.n_detections)),
               ("images_per_second", f"{self.images_per_second:.3f}"),
               ("processed_pixels_total", str(self.processed_pixels_total))]
        for b in SizeBucket:
            out.append((f"gt_{b.value}", str(self.gt_counts.get(b.value, 0))))
        for c in sorted(self.per_class):
            ap, ap50 = self.per_class[c]
            out.append((f"AP[class={c}]", f"{ap:.4f}"))
            out.append((f"AP50[class={c}]", f"{ap50:.4f}"))
        return out

    def to_text(self) -> str:
        rows = self.rows()
        w = max(len(k) for k, _ in rows)
        return "".join(f"{k.ljust(w)}  {v}\n" for k, v in rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "value"])
        writer.writerows(self.rows())
        return buf.getvalue()


def _mean(values) -> float:
    vals = [v for v in values if not np.isnan(v)]
    return float(np.mean(vals)) if vals else 0.0


def evaluate(dets: Mapping[int, Sequence[Detection]], gts: Mapping[int, Sequence[Annotation]],
             timings: Sequence[float] = (), processed_pixels_total: int = 0,
             max_dets: int | None = None, unmatched_in_all_buckets: bool = False) -> EvalReport:
    """Dataset metrics.

    ``dets`` and ``gts`` map image id to that image's detections and ground
    truth.  ``timings`` are per-image wall-clock seconds.  Classes without GT
    are left out of the class mean.  In size buckets an unmatched detection
    outside the bucket's area range is ignored (COCO); pass
    ``unmatched_in_all_buckets=True`` to count it as a false positive in
    every bucket instead.  ``max_dets`` caps detections per image and class.
    """
    unknown = sorted(set(dets) - set(gts))
    if unknown:
        raise KeyError(f"detections reference unknown image ids: {unknown[:10]}")
    image_ids = sorted(gts)
    classes = sorted({a.class_id for i in image_ids for a in gts[i]}
                     | {d.class_id for i in dets for d in dets[i]})
    buckets: list[SizeBucket | None] = [None, *SizeBucket]

    # pooled[bucket][class] -> (per-threshold score lists, per-threshold tp lists, n_gt)
    n_t = len(IOU_THRESHOLDS)
    pooled = {b: {c: ([[] for _ in range(n_t)], [[] for _ in range(n_t)], [0]) for c in classes}
              for b in buckets}
    for iid in image_ids:
        image_dets = dets.get(iid, ())
        for c in classes:
            cd = [d for d in image_dets if d.class_id == c]
            if max_dets is not None:
                cd = sorted(cd, key=lambda d: -d.score)[:max_dets]
            cg = [g for g in gts[iid] if g.class_id == c]
            if not cd and not cg:
                continue
            for b in buckets:
                thresholds = IOU_THRESHOLDS if b is None else IOU_THRESHOLDS[:1]
                per_t, n_gt = _evaluate_image(cd, cg, thresholds, b, unmatched_in_all_buckets)
                s_lists, f_lists, count = pooled[b][c]
                for k, (s, f) in enumerate(per_t):
                    s_lists[k].append(s)
                    f_lists[k].append(f)
                count[0] += n_gt

    def ap_table(b, k):
        out = {}
        for c in classes:
            s_lists, f_lists, count = pooled[b][c]
            s = np.concatenate(s_lists[k]) if s_lists[k] else np.zeros(0)
            f = np.concatenate(f_lists[k]) if f_lists[k] else np.zeros(0, dtype=bool)
            out[c] = interpolated_ap(s, f, count[0])
        return out

    per_t = [ap_table(None, k) for k in range(n_t)]
    report = EvalReport()
    report.mAP = float(np.mean([_mean(t.values()) for t in per_t]))
    report.mAP50 = _mean(per_t[0].values())
    report.mAP75 = _mean(per_t[list(IOU_THRESHOLDS).index(0.75)].values())
    report.mAP50_s = _mean(ap_table(SizeBucket.SMALL, 0).values())
    report.mAP50_m = _mean(ap_table(SizeBucket.MEDIUM, 0).values())
    report.mAP50_l = _mean(ap_table(SizeBucket.LARGE, 0).values())
    for c in classes:
        if pooled[None][c][2][0] > 0:
            report.per_class[c] = (_mean(t[c] for t in per_t), per_t[0][c])
    for b in SizeBucket:
        report.gt_counts[b.value] = sum(1 for i in image_ids for g in gts[i] if size_bucket(g.box) == b)
    report.n_images = len(image_ids)
    report.n_detections = sum(len(v) for v in dets.values())
    total = float(sum(timings))
    report.images_per_second = len(timings) / total if total > 0 else 0.0
    report.processed_pixels_total = int(processed_pixels_total)
    return report
