import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from berrycount.filters import (FilterConfig, filter_area, filter_axis, filter_edge, format_stage_report,
                                run_pipeline)
from berrycount.instancer import Component, compute_descriptors, connected_components
from berrycount.labelgen import synthesize_labels
from berrycount.raster import SemanticMask
from berrycount.synth import BENCHMARK_CORRUPTION, CorruptionSpec, corrupt

import oracles

BLANK = SemanticMask(np.zeros((40, 40)))


def comp(a_min=10.0, a_maj=10.0, area=None, enclosure=1.0, id=1):
    if area is None:
        area = round(math.pi * ((a_min + a_maj) / 4) ** 2)
    return Component(id, area, (0.0, 0.0), a_maj, a_min, enclosure)


def test_axis_round_kept():
    assert filter_axis([comp(10, 10)]) != []


def test_axis_thin_dropped():
    assert filter_axis([comp(2, 20)]) == []


def test_axis_boundary_is_strict():
    assert filter_axis([comp(3, 10)]) == []
    assert filter_axis([comp(3.0001, 10)]) != []


def test_area_filled_disk_kept():
    c = compute_descriptors(sorted(oracles.disk(20, 20, 10)), BLANK)
    assert c.area / (math.pi * c.mean_radius ** 2) == pytest.approx(1.0, abs=0.05)
    assert filter_area([c]) == [c]


def test_area_crescent_dropped():
    arc = {(x, y) for (x, y) in oracles.disk(20, 20, 10) - oracles.disk(20, 20, 9) if y <= 20}
    c = compute_descriptors(sorted(arc), BLANK)
    assert filter_area([c]) == []


def test_area_ring_dropped():
    ring = oracles.disk(20, 20, 10) - oracles.disk(20, 20, 9)
    c = compute_descriptors(sorted(ring), BLANK)
    assert c.axis_ratio > 0.9  # round by its axes
    assert filter_area([c]) == []


@pytest.mark.parametrize("enc,kept", [(1.0, True), (0.0, False), (0.5, True), (0.4, True), (0.39, False)])
def test_edge_threshold(enc, kept):
    assert bool(filter_edge([comp(enclosure=enc)])) is kept


def _random_components(draw_list):
    return [comp(a_min=min(a, b), a_maj=max(a, b), area=ar, enclosure=e, id=i + 1)
            for i, (a, b, ar, e) in enumerate(draw_list)]


comp_lists = st.lists(st.tuples(st.floats(0.5, 30), st.floats(0.5, 30), st.integers(1, 800), st.floats(0, 1)),
                      max_size=25).map(_random_components)


def test_all_off_is_identity():
    cs = [comp(2, 20, area=1, enclosure=0.0), comp()]
    res = run_pipeline(cs, FilterConfig.off())
    assert res.kept == cs
    assert res.removed == {"axis": 0, "area": 0, "edge": 0}


@given(comp_lists)
def test_pipeline_idempotent_and_ordered(cs):
    kept = run_pipeline(cs).kept
    assert run_pipeline(kept).kept == kept
    idx = [cs.index(c) for c in kept]
    assert idx == sorted(idx)


@given(comp_lists, st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_monotone_in_thresholds(cs, t1, t2, t3, bump):
    lo = FilterConfig(t1 * bump, t2 * bump, t3 * bump)
    hi = FilterConfig(t1, t2, t3)
    assert {id(c) for c in run_pipeline(cs, hi).kept} <= {id(c) for c in run_pipeline(cs, lo).kept}


@given(comp_lists)
def test_stage_counts_add_up(cs):
    res = run_pipeline(cs)
    assert sum(res.removed.values()) + len(res.kept) == len(cs)
    assert [s.n_in for s in res.stages][0] == len(cs)


def test_stage_chain_on_corrupted_scene(small_scene):
    ref = synthesize_labels(small_scene.instances, 2)
    pred = corrupt(ref, small_scene.instances, CorruptionSpec(**BENCHMARK_CORRUPTION, seed=1))
    res = run_pipeline(connected_components(pred))
    sets = [{c.id for c in s.kept} for s in res.stages]
    assert sets[0] >= sets[1] >= sets[2]
    assert res.stages[1].removed > 0  # crescents go at the area stage


def test_stage_report_format():
    res = run_pipeline([comp(2, 20), comp()], FilterConfig(use_edge=False))
    assert format_stage_report(res).splitlines() == [
        "stage,enabled,threshold,input,removed,kept",
        "axis,1,0.3000,2,1,1",
        "area,1,0.3000,1,0,1",
        "edge,0,0.4000,1,0,1",
    ]


@pytest.mark.parametrize("kw", [dict(axis_ratio_min=-0.1), dict(area_ratio_min=1.5), dict(enclosure_min=2)])
def test_config_ranges(kw):
    with pytest.raises(ValueError):
        FilterConfig(**kw)
