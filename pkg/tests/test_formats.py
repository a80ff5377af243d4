import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from asahi.formats import (Annotation, InterchangeError, Scene, coco_dict, format_detections, load_coco,
                           parse_detections, read_raster, scenes_from_coco, write_ppm, dump_coco)
from asahi.geom import BBox, ImageDims
from asahi.nms import Detection

finite = st.floats(-1e5, 1e5, allow_nan=False)


@st.composite
def records(draw):
    x, y = draw(finite), draw(finite)
    w, h = draw(st.floats(0.01, 1e4)), draw(st.floats(0.01, 1e4))
    d = Detection(draw(st.integers(0, 1000)), draw(st.floats(0, 1)), BBox(x, y, x + w, y + h))
    return draw(st.integers(0, 10**9)), d


def test_format_line():
    d = Detection(3, 0.5, BBox(1, 2.25, 3, 4))
    assert format_detections([(7, d)]) == "7 3 0.500000 1.000000 2.250000 3.000000 4.000000\n"


def test_negative_zero_normalised():
    d = Detection(0, 0.5, BBox(-0.0000001, 0, 1, 1))
    assert format_detections([(1, d)]).split()[3] == "0.000000"


@given(st.lists(records(), max_size=20))
def test_round_trip_six_decimals(recs):
    text = format_detections(recs)
    back = parse_detections(text)
    assert len(back) == len(recs)
    for (i, d), (j, e) in zip(recs, back):
        assert i == j and d.class_id == e.class_id
        assert e.score == pytest.approx(d.score, abs=5e-7)
        for u, v in zip(d.box.as_tuple(), e.box.as_tuple()):
            assert v == pytest.approx(u, abs=5e-7 + 1e-12 * abs(u))
    # formatting is a fixed point after one round trip
    assert format_detections(back) == text


@pytest.mark.parametrize("line,reason", [
    ("1 2 0.5 0 0 1", "expected 7 fields"),
    ("1 2 x 0 0 1 1", "non-numeric"),
    ("1 2 0.5 0 0 nan 1", "non-finite"),
    ("1 2 1.5 0 0 1 1", "score"),
    ("1 2 0.5 5 0 1 1", "degenerate"),
])
def test_parse_errors_name_line(line, reason):
    with pytest.raises(InterchangeError) as info:
        parse_detections("# header\n\n1 0 0.9 0 0 1 1\n" + line + "\n")
    assert info.value.line_no == 4
    assert reason in str(info.value)


def test_ppm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (7, 11, 3), dtype=np.uint8)
    path = tmp_path / "x.ppm"
    write_ppm(path, img)
    assert path.read_bytes().startswith(b"P6")
    assert np.array_equal(read_raster(path), img)
    with pytest.raises(ValueError):
        write_ppm(path, img.astype(np.float32))


def test_coco_round_trip(tmp_path):
    scenes = [Scene(2, ImageDims(100, 50), (Annotation(1, BBox(1, 2, 11, 22)),), "b.ppm"),
              Scene(1, ImageDims(30, 40), (), "a.ppm")]
    path = tmp_path / "gt.json"
    dump_coco(path, scenes)
    back = load_coco(path)
    assert [s.image_id for s in back] == [1, 2]
    assert back[1].annotations == scenes[0].annotations
    assert back[1].dims == ImageDims(100, 50)
    data = coco_dict(scenes)
    assert data["annotations"][0]["bbox"] == [1, 2, 10, 20]


def test_coco_unknown_image():
    with pytest.raises(KeyError):
        scenes_from_coco({"images": [], "annotations": [{"id": 1, "image_id": 5, "category_id": 0,
                                                         "bbox": [0, 0, 1, 1]}]})
