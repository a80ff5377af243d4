import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from asahi.geom import BBox, Metric, diou, iou, metric
from asahi.nms import (CDN_CONFIG, Detection, SuppressionConfig, cdn, cluster_keep, cluster_suppress,
                       greedy_suppress, soft_suppress, wbf)
from oracles import greedy_nms


def det(box, score, cls=0):
    return Detection(cls, score, BBox(*box))


def random_instance(rng, n, n_classes=3, spread=200.0):
    """Boxes gathered around a few centres so suppression chains are common."""
    centres = rng.uniform(0, spread, (max(1, n // 8), 2))
    pick = rng.integers(0, len(centres), n)
    xy = centres[pick] + rng.normal(0, 6, (n, 2))
    wh = rng.uniform(8, 40, (n, 2))
    scores = rng.uniform(0, 1, n)
    classes = rng.integers(0, n_classes, n)
    return [Detection(int(c), float(s), BBox(float(x), float(y), float(x + w), float(y + h)))
            for (x, y), (w, h), s, c in zip(xy, wh, scores, classes)]


def test_validation():
    with pytest.raises(ValueError):
        Detection(0, 1.5, BBox(0, 0, 1, 1))
    with pytest.raises(ValueError):
        Detection(-1, 0.5, BBox(0, 0, 1, 1))
    with pytest.raises(ValueError):
        SuppressionConfig(Metric.IOU, -1.0)
    assert SuppressionConfig("giou", 1.0).metric is Metric.GIOU


def test_greedy_examples():
    cfg = SuppressionConfig(Metric.IOU, 0.5)
    assert greedy_suppress([], cfg) == []
    a, b = det((0, 0, 10, 10), 0.9), det((0, 0, 10, 10), 0.8)
    assert greedy_suppress([b, a], cfg) == [a]
    c = det((50, 50, 60, 60), 0.8)
    assert greedy_suppress([a, c], cfg) == [a, c]


def test_cluster_chain_revocation():
    cfg = SuppressionConfig(Metric.IOU, 0.5)
    a, b, c = det((0, 0, 10, 10), 0.9), det((3, 0, 13, 10), 0.8), det((6, 0, 16, 10), 0.7)
    assert iou(a.box, b.box) > 0.5 and iou(b.box, c.box) > 0.5 and iou(a.box, c.box) < 0.5
    assert cluster_suppress([c, b, a], cfg) == [a, c]
    kept = greedy_nms([(d.class_id, d.score, d.box) for d in (a, b, c)], iou, 0.5)
    assert kept == [0, 2]


def test_cluster_no_overlap_unchanged():
    dets = [det((i * 20, 0, i * 20 + 10, 10), 0.5 + i / 100) for i in range(10)]
    out = cluster_suppress(dets, CDN_CONFIG)
    assert sorted(out, key=lambda d: d.box.x1) == dets


def test_cdn_identical_pair():
    a, b = det((0, 0, 10, 10), 0.9), det((0, 0, 10, 10), 0.8)
    assert cdn([a, b]) == [a]


def crowded_pair():
    """Two same-class boxes, 40x10, shifted sideways so IoU = 0.52."""
    w, h, target = 40.0, 10.0, 0.52
    d = w * (1 - target) / (1 + target)
    return det((0, 0, w, h), 0.9), det((d, 0, d + w, h), 0.8)


def test_cdn_keeps_crowded_pair():
    a, b = crowded_pair()
    assert iou(a.box, b.box) == pytest.approx(0.52)
    assert diou(a.box, b.box) < 0.5
    assert cdn([a, b]) == [a, b]
    assert greedy_suppress([a, b], SuppressionConfig(Metric.IOU, 0.5)) == [a]


def test_iou_06_forces_diou_above_05():
    # at IoU 0.6 the centre penalty cannot exceed 0.04, so DIoU >= 0.56 for any pair
    rng = np.random.default_rng(3)
    worst = 1.0
    for _ in range(20000):
        w1, h1, w2, h2 = rng.uniform(1, 100, 4)
        dx, dy = rng.uniform(-60, 60, 2)
        a, b = BBox(0, 0, w1, h1), BBox(dx, dy, dx + w2, dy + h2)
        if iou(a, b) >= 0.6:
            worst = min(worst, diou(a, b))
    assert worst > 0.55


@given(st.floats(1, 100), st.floats(1, 100), st.floats(0, 1), st.floats(0, 1), st.floats(0.1, 10),
       st.floats(0.1, 10))
def test_high_iou_implies_diou_above_half(w, h, fx, fy, kw, kh):
    a = BBox(0, 0, w, h)
    b = BBox(fx * w, fy * h, fx * w + kw * w, fy * h + kh * h)
    if iou(a, b) >= 0.6:
        assert diou(a, b) > 0.5


def test_cdn_all_disjoint():
    dets = [det((i * 30, 0, i * 30 + 10, 10), 0.9 - i / 50) for i in range(6)]
    assert cdn(dets) == dets


def test_soft_examples():
    a, b = det((0, 0, 10, 10), 0.9), det((0, 0, 10, 10), 0.8)
    out = soft_suppress([a, b], sigma=0.5)
    assert out[0] == a
    assert out[1].score == pytest.approx(0.8 * math.exp(-2))
    assert out[1].score == pytest.approx(0.108, abs=1e-3)
    far = det((100, 100, 110, 110), 0.7)
    assert soft_suppress([a, far]) == [a, far]
    assert soft_suppress([a]) == [a]
    with pytest.raises(ValueError):
        soft_suppress([a], sigma=0)


def test_soft_floor_drops():
    a, b = det((0, 0, 10, 10), 0.9), det((0, 0, 10, 10), 0.001)
    assert soft_suppress([a, b]) == [a]


def test_wbf_examples():
    a = det((0, 0, 10, 10), 0.6)
    assert wbf([a]) == [a]
    b = det((0, 0, 10, 10), 0.8)
    out = wbf([a, b])
    assert len(out) == 1
    assert out[0].box == BBox(0, 0, 10, 10)
    assert out[0].score == pytest.approx(0.7)
    out = wbf([det((0, 0, 10, 10), 1.0), det((0, 0, 20, 10), 1.0)], threshold=0.4)
    assert len(out) == 1
    assert out[0].box.as_tuple() == pytest.approx((0, 0, 15, 10))
    assert out[0].score == 1.0


def test_wbf_class_separation():
    out = wbf([det((0, 0, 10, 10), 0.9, 0), det((0, 0, 10, 10), 0.8, 1)])
    assert len(out) == 2


@pytest.mark.parametrize("kind", list(Metric))
@pytest.mark.parametrize("eps", [0.3, 0.5, 0.7])
def test_cluster_equals_greedy_sweep(kind, eps):
    rng = np.random.default_rng(list(Metric).index(kind) * 100 + int(eps * 10))
    cfg = SuppressionConfig(kind, eps)
    for _ in range(25):
        dets = random_instance(rng, int(rng.integers(0, 120)))
        kept, passes = cluster_keep(dets, cfg)
        assert [dets[i] for i in kept] == greedy_suppress(dets, cfg)
        assert passes <= max(1, len(dets))


@given(st.integers(0, 2**32 - 1), st.sampled_from(list(Metric)), st.sampled_from([0.3, 0.5, 0.7]),
       st.booleans())
def test_cluster_matches_scalar_oracle(seed, kind, eps, class_aware):
    # oracle uses the scalar metric functions and plain loops
    rng = np.random.default_rng(seed)
    dets = random_instance(rng, int(rng.integers(0, 40)))
    cfg = SuppressionConfig(kind, eps, class_aware)
    items = [(d.class_id, d.score, d.box) for d in dets]
    expected = greedy_nms(items, lambda a, b: metric(a, b, kind), eps, class_aware)
    assert cluster_suppress(dets, cfg) == [dets[i] for i in expected]


@given(st.integers(0, 2**32 - 1), st.sampled_from(list(Metric)))
def test_idempotent_hard_suppression(seed, kind):
    rng = np.random.default_rng(seed)
    dets = random_instance(rng, 60)
    cfg = SuppressionConfig(kind, 0.5)
    for fn in (greedy_suppress, cluster_suppress):
        once = fn(dets, cfg)
        assert fn(once, cfg) == once


@given(st.integers(0, 2**32 - 1))
def test_output_sorted_and_stable(seed):
    rng = np.random.default_rng(seed)
    dets = random_instance(rng, 50)
    # force ties
    dets = [Detection(d.class_id, round(d.score, 1), d.box) for d in dets]
    for out in (cluster_suppress(dets), greedy_suppress(dets), soft_suppress(dets), wbf(dets)):
        scores = [d.score for d in out]
        assert scores == sorted(scores, reverse=True)
    out = cluster_suppress(dets)
    pos = {id(d): i for i, d in enumerate(dets)}
    for x, y in zip(out, out[1:]):
        if x.score == y.score:
            assert pos[id(x)] < pos[id(y)]


def test_class_isolation():
    a, b = det((0, 0, 10, 10), 0.9, 0), det((0, 0, 10, 10), 0.8, 1)
    for fn in (cluster_suppress, greedy_suppress):
        assert fn([a, b], CDN_CONFIG) == [a, b]
        assert fn([a, b], SuppressionConfig(Metric.DIOU, 0.5, class_aware=False)) == [a]


def test_eligibility_mask():
    a, b = det((0, 0, 10, 10), 0.9), det((0, 0, 10, 10), 0.8)
    mask = np.zeros((2, 2), dtype=bool)
    assert cluster_suppress([a, b], CDN_CONFIG, eligible=mask) == [a, b]
    mask[:] = True
    assert cluster_suppress([a, b], CDN_CONFIG, eligible=mask) == [a]
