import pytest
from hypothesis import given, strategies as st

from asahi.geom import ImageDims
from asahi.redundancy import (REFERENCE_REDUCTION, REFERENCE_RESOLUTIONS, analyze, analyze_plan, format_table_csv,
                              format_table_text, reduction_rate, reduction_table)
from asahi.slicing import AsahiConfig, asahi_plan, fixed_plan
from oracles import geometric_redundancy


def test_sahi_960x540():
    r = analyze(ImageDims(960, 540), 512, overlap_ratio=0.15)
    assert (r.a, r.b) == (3, 2)
    assert r.rx == pytest.approx(422.4)
    assert r.ry == pytest.approx(407.2)
    assert r.sr == pytest.approx(447006.72)
    assert r.sa == 960 * 540
    assert r.total >= r.sa


def test_exact_tiling_has_no_overrun():
    # 3 windows of 100 with mu 0.2 tile 100 + 2 * 80 = 260 exactly
    r = analyze(ImageDims(260, 260), 100, overlap_ratio=0.2)
    assert r.rx == 0 and r.ry == 0 and r.sr == 0


def test_sahi_1400x1050_against_oracle():
    dims = ImageDims(1400, 1050)
    r = analyze(dims, 512, overlap_ratio=0.15)
    assert (r.a, r.b) == (4, 3)
    # frozen from direct substitution: 4*512 - 0.15*512*3 - 1400 = 417.6; 3*512 - 0.15*512*2 - 1050 = 332.4
    assert r.rx == pytest.approx(417.6) and r.ry == pytest.approx(332.4)
    assert r.sr == pytest.approx(417.6 * 1050 + 332.4 * 1400 - 417.6 * 332.4)


@given(st.builds(ImageDims, st.integers(1, 5000), st.integers(1, 5000)), st.floats(0.001, 1),
       st.floats(0.001, 1), st.floats(0, 0.9))
def test_overruns_never_negative(dims, fx, fy, mu):
    # windows no larger than the image, as every generated plan guarantees
    r = analyze(dims, max(1.0, fx * dims.width), max(1.0, fy * dims.height), mu)
    assert r.rx >= 0 and r.ry >= 0 and r.sr >= 0 and r.a >= 1 and r.b >= 1


def test_reduction_rate_examples():
    dims = ImageDims(960, 540)
    r = analyze(dims, 512)
    assert reduction_rate(r, r) == 0
    zero = analyze(ImageDims(260, 260), 100, overlap_ratio=0.2)
    from dataclasses import replace
    assert reduction_rate(zero, replace(zero, sr=zero.sa)) == 0.5
    with pytest.raises(ValueError):
        reduction_rate(analyze(dims, 512), analyze(ImageDims(961, 540), 512))
    assert reduction_rate(analyze_plan(asahi_plan(dims)), r) > 0


@given(st.builds(ImageDims, st.integers(64, 4096), st.integers(64, 4096)),
       st.sampled_from([0.0, 0.1, 0.15, 0.3]))
def test_formula_matches_geometric_oracle(dims, mu):
    plan = asahi_plan(dims, AsahiConfig(overlap_ratio=mu))
    rep = analyze_plan(plan)
    assert (rep.a, rep.b) == (plan.grid[1], plan.grid[0])
    assert rep.sr == pytest.approx(geometric_redundancy(plan), abs=1.0)
    assert rep.sr >= 0


@given(st.builds(ImageDims, st.integers(600, 4096), st.integers(600, 4096)), st.sampled_from([0.0, 0.15, 0.3]))
def test_fixed_formula_matches_oracle_when_windows_unclamped(dims, mu):
    # for the fixed grid, the closed form describes windows laid end to end before clamping;
    # the oracle rebuilds that unclamped layout from stride and count
    plan = fixed_plan(dims, 512, mu)
    rep = analyze(dims, 512, overlap_ratio=mu)
    extent_x = rep.a * 512 - (rep.a - 1) * mu * 512
    assert rep.rx == pytest.approx(max(0.0, extent_x - dims.width))
    assert (rep.a, rep.b) == (plan.grid[1], plan.grid[0])


def test_reference_rows():
    rows = reduction_table()
    assert [r.dims for r in rows] == list(REFERENCE_RESOLUTIONS)
    assert [r.n_slices for r in rows] == [6, 6, 6, 12, 12, 12]
    for r in rows:
        assert r.reduction >= 0
        assert r.asahi_pixels <= r.sahi_pixels
        assert r.reported == REFERENCE_REDUCTION[(r.dims.width, r.dims.height)]
        assert r.delta == pytest.approx(100 * r.reduction - r.reported)


def test_reference_frozen_values():
    # computed values, frozen; they differ from the published column (see decisions ledger)
    got = [round(100 * r.reduction, 2) for r in reduction_table()]
    assert got == [45.88, 19.55, 33.88, 28.49, 23.33, 14.33]


def test_table_empty_and_duplicates():
    assert reduction_table([]) == []
    rows = reduction_table([ImageDims(960, 540)] * 2)
    assert rows[0] == rows[1]
    assert format_table_csv([]).strip() == format_table_csv([]).splitlines()[0]


def test_table_formats():
    rows = reduction_table()
    text = format_table_text(rows)
    assert len(text.splitlines()) == 7
    csv_text = format_table_csv(rows)
    assert csv_text.splitlines()[1].startswith("960x540,6,")
    assert "45.88" in csv_text
