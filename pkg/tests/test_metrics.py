import math
import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from berrycount.errors import FormatError
from berrycount.instancer import compute_descriptors
from berrycount.metrics import (CountRecord, EvalReport, detection_metrics, emit_correlation_plot, f1_score,
                                fit_counts, format_count_records, format_report, iou, iou_loss,
                                parse_count_records, parse_report, per_patch_counts, r_squared)
from berrycount.raster import Cls, DotSet, SemanticMask

import oracles
from conftest import semantic_masks

REPORTED_PRF = [(85.41, 93.90, 89.46), (81.21, 92.59, 86.53), (80.54, 89.00, 84.56), (78.65, 85.26, 81.82)]
BLANK = SemanticMask(np.zeros((64, 64)))


def blob(x0, y0, w=2, h=2, id=1):
    return compute_descriptors([(x, y) for y in range(y0, y0 + h) for x in range(x0, x0 + w)], BLANK, id)


# --- IoU ---------------------------------------------------------------------------

def test_identical_masks():
    m = SemanticMask(np.array([[0, 1, 2]]))
    assert iou(m, m) == {"background": 1.0, "berry": 1.0, "edge": 1.0, "mean": 1.0}


def test_iou_berry_three_one_one():
    # 3 TP, 1 FP, 1 FN for Berry
    ref = SemanticMask(np.array([[1, 1, 1, 1, 0]]))
    pred = SemanticMask(np.array([[1, 1, 1, 0, 1]]))
    assert iou(pred, ref)["berry"] == pytest.approx(0.6)


@settings(max_examples=80)
@given(st.data())
def test_iou_matches_set_oracle(data):
    a = data.draw(semantic_masks(max_side=8))
    b = SemanticMask(np.array(data.draw(st.lists(st.integers(0, 2), min_size=a.data.size,
                                                 max_size=a.data.size))).reshape(a.shape))
    got = iou(a, b)
    for c, name in enumerate(("background", "berry", "edge")):
        assert got[name] == pytest.approx(oracles.iou_sets(a.data.tolist(), b.data.tolist(), c))
    assert got == iou(b, a)


def test_disjoint_iou_zero():
    assert iou(SemanticMask([[1, 0]]), SemanticMask([[0, 1]]))["berry"] == 0.0


def test_iou_shape_mismatch():
    with pytest.raises(ValueError):
        iou(SemanticMask([[1]]), SemanticMask([[1, 1]]))


def test_iou_loss_values():
    assert iou_loss(1.0) == 0.0
    assert iou_loss(math.exp(-1)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        iou_loss(0.0)


@given(st.floats(1e-6, 1.0), st.floats(1e-6, 1.0))
def test_iou_loss_decreasing(a, b):
    if a < b:
        assert iou_loss(a) > iou_loss(b)


# --- detection ---------------------------------------------------------------------------

def test_perfect_single_detection():
    d = detection_metrics([blob(0, 0)], DotSet(((1, 1),)))
    assert (d.precision, d.recall, d.f1) == (1.0, 1.0, 1.0)


def test_four_components_three_hit_five_dots():
    cs = [blob(0, 0, id=1), blob(10, 0, id=2), blob(20, 0, id=3), blob(30, 0, id=4)]
    dots = DotSet(((0, 0), (11, 1), (20, 1), (50, 50), (60, 60)))
    d = detection_metrics(cs, dots)
    assert (d.tally.tp, d.precision, d.recall) == (3, 0.75, 0.6)


def test_merged_component_with_two_dots():
    d = detection_metrics([blob(0, 0, w=4)], DotSet(((0, 0), (3, 1))))
    assert (d.precision, d.recall) == (1.0, 0.5)


@pytest.mark.parametrize("p,r,f1", REPORTED_PRF)
def test_reported_f1_rows(p, r, f1):
    assert 100 * f1_score(p / 100, r / 100) == pytest.approx(f1, abs=0.01)


def test_empty_detection_flags():
    d = detection_metrics([], DotSet())
    assert (d.precision, d.recall, d.f1) == (0.0, 0.0, 0.0)
    assert set(d.flags) == {"no_components", "no_dots"}


@settings(max_examples=60)
@given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, 15)), unique=True, max_size=12),
       st.lists(st.tuples(st.integers(0, 63), st.integers(0, 63)), unique=True, max_size=20))
def test_detection_bounds(cells, dot_pts):
    cs = [blob(4 * x, 4 * y, 3, 3, i + 1) for i, (x, y) in enumerate(cells)]
    d = detection_metrics(cs, DotSet(tuple(dot_pts)))
    assert 0 <= d.precision <= 1 and 0 <= d.recall <= 1 and 0 <= d.f1 <= 1
    assert (d.f1 == 0) == (d.tally.tp == 0)


# --- per-patch counts ----------------------------------------------------------------------

def test_empty_counts():
    recs = per_patch_counts([], DotSet(), 100, 100, 250, 120)
    assert len(recs) == 3 * 2
    assert all(r.manual == 0 and r.predicted == 0 for r in recs)


def test_component_at_origin():
    c = compute_descriptors([(0, 0)], BLANK)
    recs = per_patch_counts([c], DotSet(), 100, 100, 300, 300)
    assert recs[0] == CountRecord(0, 0, 0, 1)
    assert sum(r.predicted for r in recs) == 1


def test_dot_anchor_keeps_straddling_berry_together():
    # component centroid on the far side of the x=10 border, its dot on the near side
    c = compute_descriptors([(x, 0) for x in range(8, 14)], BLANK)
    dots = DotSet(((9, 0),))
    by_dot = per_patch_counts([c], dots, 10, 10, 20, 10)
    by_centroid = per_patch_counts([c], dots, 10, 10, 20, 10, anchor="centroid")
    assert [(r.manual, r.predicted) for r in by_dot] == [(1, 1), (0, 0)]
    assert [(r.manual, r.predicted) for r in by_centroid] == [(1, 0), (0, 1)]


# --- regression ---------------------------------------------------------------------------

def test_perfect_fit():
    f = fit_counts([3, 5, 9, 1], [3, 5, 9, 1])
    assert (f.slope, f.intercept, f.r_squared) == (1.0, 0.0, 1.0)


def test_doubling_fit():
    f = fit_counts([1, 2, 3], [2, 4, 6])
    assert (f.slope, f.intercept, f.r_squared) == (2.0, 0.0, 1.0)


def normal_equations(x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    A = np.stack([np.ones_like(x), x], axis=1)
    b0, b1 = np.linalg.solve(A.T @ A, A.T @ y)
    res = y - (b0 + b1 * x)
    return b1, b0, 1 - (res @ res) / ((y - y.mean()) @ (y - y.mean()))


def test_ols_matches_normal_equations():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n = int(rng.integers(3, 60))
        x = rng.integers(0, 50, n)
        if np.all(x == x[0]):
            continue
        y = np.maximum(0, x + rng.integers(-6, 7, n))
        if np.all(y == y[0]):
            continue
        f = fit_counts(x.tolist(), y.tolist())
        s, i, r2 = normal_equations(x, y)
        assert abs(f.slope - s) < 1e-9 and abs(f.intercept - i) < 1e-9 and abs(f.r_squared - r2) < 1e-9


@given(st.lists(st.tuples(st.integers(0, 40), st.integers(0, 40)), min_size=2, max_size=30),
       st.randoms(use_true_random=False))
def test_r2_invariant_under_relabelling(pairs, rnd):
    xs = [p[0] for p in pairs]
    if len(set(xs)) < 2:
        return
    recs = [CountRecord(0, i, m, p) for i, (m, p) in enumerate(pairs)]
    shuffled = recs[:]
    rnd.shuffle(shuffled)
    assert r_squared(recs) == r_squared(shuffled)


def test_identity_mode():
    f = fit_counts([1, 2, 3], [2, 4, 6], mode="identity")
    assert f.r_squared < 1.0 and f.slope == 2.0
    assert fit_counts([1, 2, 3], [1, 2, 3], mode="identity").r_squared == 1.0


def test_fit_errors():
    with pytest.raises(ValueError):
        fit_counts([1], [1])
    with pytest.raises(ValueError):
        fit_counts([2, 2, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        fit_counts([1, 2], [1, 2], mode="pearson")


# --- emission --------------------------------------------------------------------------------

def _lines(svg, cls):
    m = re.search(rf'<line class="{cls}" x1="([\d.]+)" y1="([\d.]+)" x2="([\d.]+)" y2="([\d.]+)"', svg)
    return [float(v) for v in m.groups()]


def test_plot_point_count():
    recs = [CountRecord(0, i, i + 1, i + 2) for i in range(3)]
    svg, csv_text = emit_correlation_plot(recs, r_squared(recs))
    assert svg.count('class="point"') == 3
    assert svg.count('stroke-dasharray') == 1
    assert parse_count_records(csv_text) == recs


def test_plot_identity_fit_coincide():
    recs = [CountRecord(0, i, v, v) for i, v in enumerate([0, 4, 7, 12])]
    svg, _ = emit_correlation_plot(recs, r_squared(recs))
    for a, b in zip(_lines(svg, "identity"), _lines(svg, "fit")):
        assert abs(a - b) <= 0.5


@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9), st.integers(0, 99), st.integers(0, 99)),
                max_size=20))
def test_count_csv_roundtrip(rows):
    recs = [CountRecord(*r) for r in rows]
    text = format_count_records(recs)
    assert parse_count_records(text) == recs


def test_count_csv_errors():
    with pytest.raises(FormatError):
        parse_count_records("a,b\n")
    with pytest.raises(FormatError):
        parse_count_records("patch_row,patch_col,manual,predicted\n1,2,x,4\n")


def test_report_roundtrip():
    d = detection_metrics([blob(0, 0)], DotSet(((1, 1),)))
    recs = [CountRecord(0, 0, 1, 1), CountRecord(0, 1, 0, 0)]
    m = SemanticMask([[0, 1]])
    rep = EvalReport(d, recs, r_squared(recs), iou(m, m))
    text = format_report(rep)
    assert text.startswith("metric,class,value\n")
    vals = parse_report(text)
    assert vals[("precision", "berry")] == 1.0
    assert vals[("r_squared", "count")] == 1.0
    assert vals[("iou_loss", "mean")] == 0.0
    assert "-0.000000" not in text
