"""Duplicate suppression: greedy NMS, cluster (matrix) NMS, CDN, Soft-NMS and WBF.

Every routine takes a list of :class:`Detection` and returns a new list sorted
by descending score; score ties keep input order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .geom import BBox, Metric, boxes_to_array, pairwise


@dataclass(frozen=True, slots=True)
class Detection:
    """One detection in the full-image frame.

    ``origin`` is ``None`` for the full-inference pathway, otherwise the
    ``(row, col)`` of the slice that produced it.
    """

    class_id: int
    score: float
    box: BBox
    origin: Optional[tuple[int, int]] = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if self.class_id < 0:
            raise ValueError(f"class_id must be non-negative, got {self.class_id}")


FULL_INFERENCE = None


@dataclass(frozen=True)
class SuppressionConfig:
    metric: Metric = Metric.DIOU
    threshold: float = 0.5
    class_aware: bool = True

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric(self.metric))
        if not -1.0 < self.threshold <= 1.0:
            raise ValueError(f"threshold must be in (-1, 1], got {self.threshold}")


CDN_CONFIG = SuppressionConfig(Metric.DIOU, 0.5, True)


def score_order(dets: Sequence[Detection]) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def _arrays(dets: Sequence[Detection], order: list[int]) -> tuple[np.ndarray, np.ndarray]:
    boxes = boxes_to_array(dets[i].box for i in order)
    classes = np.array([dets[i].class_id for i in order], dtype=np.int64)
    return boxes, classes


def greedy_keep(dets: Sequence[Detection], cfg: SuppressionConfig) -> list[int]:
    """Input indices kept by sequential NMS, in descending-score order."""
    order = score_order(dets)
    n = len(order)
    if n == 0:
        return []
    boxes, classes = _arrays(dets, order)
    alive = np.ones(n, dtype=bool)
    kept = []
    for pos in range(n):
        if not alive[pos]:
            continue
        kept.append(order[pos])
        rest = np.flatnonzero(alive[pos + 1:]) + pos + 1
        if rest.size == 0:
            continue
        hit = pairwise(boxes[pos:pos + 1], boxes[rest], cfg.metric)[0] > cfg.threshold
        if cfg.class_aware:
            hit &= classes[rest] == classes[pos]
        alive[rest[hit]] = False
    return kept


def greedy_suppress(dets: Sequence[Detection], cfg: SuppressionConfig = CDN_CONFIG) -> list[Detection]:
    return [dets[i] for i in greedy_keep(dets, cfg)]


def cluster_keep(dets: Sequence[Detection], cfg: SuppressionConfig,
                 eligible: np.ndarray | None = None) -> tuple[list[int], int]:
    """Matrix-form suppression.

    ``A[i, j]`` (i ranked above j) marks that i would suppress j.  Starting
    from "keep everything", ``keep_j = not any_i(keep_i and A[i, j])`` is
    iterated to a fixpoint; entry j is final after j iterations, so at most
    ``n`` matrix passes are needed.

    ``eligible`` is an optional ``(n, n)`` boolean mask in input order
    restricting which pairs may suppress one another.

    Returns the kept input indices (descending score) and the pass count.
    """
    order = score_order(dets)
    n = len(order)
    if n == 0:
        return [], 0
    boxes, classes = _arrays(dets, order)
    A = np.triu(pairwise(boxes, boxes, cfg.metric) > cfg.threshold, k=1)
    if cfg.class_aware:
        A &= classes[:, None] == classes[None, :]
    if eligible is not None:
        idx = np.asarray(order)
        A &= np.asarray(eligible, dtype=bool)[np.ix_(idx, idx)]

    keep = np.ones(n, dtype=bool)
    passes = 0
    while True:
        passes += 1
        updated = ~(A & keep[:, None]).any(axis=0)
        if np.array_equal(updated, keep):
            break
        keep = updated
    return [order[p] for p in np.flatnonzero(keep)], passes


def cluster_suppress(dets: Sequence[Detection], cfg: SuppressionConfig = CDN_CONFIG,
                     eligible: np.ndarray | None = None) -> list[Detection]:
    kept, _ = cluster_keep(dets, cfg, eligible)
    return [dets[i] for i in kept]


def cdn(dets: Sequence[Detection], threshold: float = 0.5, class_aware: bool = True) -> list[Detection]:
    """Cluster-DIoU-NMS: a pair is a duplicate when DIoU strictly exceeds ``threshold``."""
    return cluster_suppress(dets, SuppressionConfig(Metric.DIOU, threshold, class_aware))


def soft_suppress(dets: Sequence[Detection], sigma: float = 0.5, score_floor: float = 0.001,
                  class_aware: bool = True) -> list[Detection]:
    """Gaussian Soft-NMS: ``score *= exp(-iou**2 / sigma)`` against each selected box."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    order = score_order(dets)
    if not order:
        return []
    boxes, classes = _arrays(dets, order)
    ious = pairwise(boxes, boxes)
    scores = np.array([dets[i].score for i in order], dtype=np.float64)
    remaining = [p for p in range(len(order)) if scores[p] >= score_floor]
    out = []
    while remaining:
        # argmax with ties to the earlier-ranked position
        best = max(remaining, key=lambda p: (scores[p], -p))
        remaining.remove(best)
        out.append(replace(dets[order[best]], score=float(scores[best])))
        survivors = []
        for p in remaining:
            if not class_aware or classes[p] == classes[best]:
                scores[p] *= math.exp(-(ious[best, p] ** 2) / sigma)
            if scores[p] >= score_floor:
                survivors.append(p)
        remaining = survivors
    return out


def wbf(dets: Sequence[Detection], threshold: float = 0.55) -> list[Detection]:
    """Weighted boxes fusion.

    Detections are visited in descending score; each joins the same-class
    cluster whose current fused box it overlaps most with IoU above
    ``threshold``, or starts a new one.  A cluster's box is the score-weighted
    mean of its members and its score the arithmetic mean.
    """
    order = score_order(dets)
    clusters: list[dict] = []
    for i in order:
        d = dets[i]
        box = np.array(d.box.as_tuple(), dtype=np.float64)
        candidates = [c for c in clusters if c["class_id"] == d.class_id]
        best, best_iou = None, threshold
        if candidates:
            fused = np.stack([c["box"] for c in candidates])
            overlaps = pairwise(box[None, :], fused)[0]
            for c, v in zip(candidates, overlaps):
                if v > best_iou:
                    best, best_iou = c, v
        if best is None:
            clusters.append({"class_id": d.class_id, "members": [i], "box": box,
                             "weighted": box * d.score, "weight": d.score, "scores": [d.score]})
            continue
        best["members"].append(i)
        best["scores"].append(d.score)
        best["weighted"] = best["weighted"] + box * d.score
        best["weight"] += d.score
        if best["weight"] > 0:
            best["box"] = best["weighted"] / best["weight"]
        else:
            best["box"] = np.mean([dets[m].box.as_tuple() for m in best["members"]], axis=0)

    fused_dets = []
    for c in clusters:
        first = dets[c["members"][0]]
        score = min(1.0, sum(c["scores"]) / len(c["scores"]))
        fused_dets.append(Detection(first.class_id, score, BBox(*map(float, c["box"])), first.origin))
    return [fused_dets[i] for i in score_order(fused_dets)]
