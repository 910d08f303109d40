import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from berrycount.errors import FormatError, SceneError
from berrycount.filters import filter_area
from berrycount.instancer import connected_components
from berrycount.labelgen import extract_dots, synthesize_labels
from berrycount.raster import Cls, InstanceMap, encode_gray_image, encode_instance_map
from berrycount.synth import (BENCHMARK_CORRUPTION, PRESETS, CorruptionSpec, SceneSpec, adjacent_pairs, corrupt,
                              format_scene_spec, generate_scene, parse_scene_spec, preset, shared_edge_band)

from conftest import SMALL

NO_OCCLUSION = SceneSpec(width=640, height=480, n_bunches=3, berries_per_bunch=(10, 10), radius=(6.0, 9.0),
                         bunch_spread=90.0, n_crescents=0, seed=42, separation=1.0)


def small(seed, **kw):
    return SceneSpec(**{**SMALL.__dict__, "seed": seed, **kw})


def test_same_seed_same_bytes():
    a, b = generate_scene(small(5)), generate_scene(small(5))
    assert encode_instance_map(a.instances) == encode_instance_map(b.instances)
    assert encode_gray_image(a.image) == encode_gray_image(b.image)
    assert a.dots == b.dots


def test_different_seeds_differ():
    assert generate_scene(small(5)).instances != generate_scene(small(6)).instances


def test_empty_scene():
    s = generate_scene(small(1, n_bunches=0))
    assert len(s.instances) == 0 and len(s.dots) == 0


def test_no_occlusion_conserves_count():
    s = generate_scene(NO_OCCLUSION)
    assert len(s.instances) == 30 and len(s.dots) == 30


def test_too_dense_scene_errors():
    # berries too small to keep a 3-step core are all removed
    with pytest.raises(SceneError):
        generate_scene(small(1, radius=(1.0, 1.5)))


def test_dots_are_extracted_from_final_map(small_scene):
    assert small_scene.dots == extract_dots(small_scene.instances)


def test_instances_are_single_pieces(small_scene):
    ids = small_scene.instances.ids
    for k in small_scene.instances.instance_ids():
        assert ndimage.label(ids == k, structure=ndimage.generate_binary_structure(2, 1))[1] == 1


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_load(name):
    s = preset(name, seed=3)
    assert s.seed == 3 and (s.width, s.height) == (2592, 2048)


def test_unknown_preset():
    with pytest.raises(SceneError):
        preset("guyot")


@pytest.mark.parametrize("kw", [dict(width=0), dict(radius=(5.0, 2.0)), dict(ellipticity=(0.5, 1.2)),
                                dict(n_bunches=-1), dict(radius=(0.0, 2.0))])
def test_spec_validation(kw):
    with pytest.raises(SceneError):
        SceneSpec(**kw)


def test_spec_text_roundtrip():
    spec = preset("smph", seed=9)
    assert parse_scene_spec(format_scene_spec(spec)) == spec
    with pytest.raises(FormatError):
        parse_scene_spec("colour=red\n")


# --- corruption --------------------------------------------------------------------

@pytest.fixture(scope="module")
def labelled(small_scene):
    return small_scene.instances, synthesize_labels(small_scene.instances, 2)


def test_noop_corruption(labelled):
    inst, mask = labelled
    assert corrupt(mask, inst, CorruptionSpec(seed=7)) == mask


def test_merge_touching_pair():
    ids = np.zeros((10, 16), dtype=np.int32)
    ids[2:8, 2:8] = 1
    ids[2:8, 8:14] = 2
    inst = InstanceMap(ids)
    mask = synthesize_labels(inst, 2)
    assert len(connected_components(mask)) == 2
    merged = corrupt(mask, inst, CorruptionSpec(merge_rate=1.0))
    assert len(connected_components(merged)) == 1


def test_crescents_bounded_and_fail_area(labelled):
    inst, mask = labelled
    before = connected_components(mask)
    out = corrupt(mask, inst, CorruptionSpec(crescent_noise=5, seed=3))
    after = connected_components(out)
    assert 0 < len(after) - len(before) <= 5
    old = {frozenset(map(tuple, c.pixels.tolist())) for c in before}
    added = [c for c in after if frozenset(map(tuple, c.pixels.tolist())) not in old]
    assert len(added) == len(after) - len(before)
    assert filter_area(added) == []


def test_merge_footprint(labelled):
    inst, mask = labelled
    out = corrupt(mask, inst, CorruptionSpec(merge_rate=0.5, seed=2))
    band = np.zeros(mask.shape, dtype=bool)
    for a, b in adjacent_pairs(inst.ids):
        sl, bd = shared_edge_band(inst.ids, a, b)
        band[sl] |= bd
    changed = out.data != mask.data
    assert changed.any()
    assert (mask.data[changed] == Cls.EDGE).all() and (out.data[changed] == Cls.BERRY).all()
    assert band[changed].all()


def test_drop_footprint(labelled):
    inst, mask = labelled
    big = 4.0
    out = corrupt(mask, inst, CorruptionSpec(drop_below=big))
    changed = out.data != mask.data
    assert (mask.data[changed] == Cls.BERRY).all() and (out.data[changed] == Cls.BACKGROUND).all()
    for c in connected_components(mask):
        gone = changed[c.pixels[:, 1], c.pixels[:, 0]]
        assert gone.all() == (c.mean_radius < big) and (gone.all() or not gone.any())


def test_crescent_footprint(labelled):
    inst, mask = labelled
    out = corrupt(mask, inst, CorruptionSpec(crescent_noise=10, seed=4))
    changed = out.data != mask.data
    assert (inst.ids[changed] == 0).all() and (out.data[changed] == Cls.BERRY).all()


@pytest.mark.parametrize("d", [1, 2])
def test_dilate_footprint(labelled, d):
    inst, mask = labelled
    out = corrupt(mask, inst, CorruptionSpec(dilate_edge=d))
    changed = out.data != mask.data
    assert (out.data[changed] == Cls.EDGE).all()
    dist = ndimage.distance_transform_cdt(mask.data != Cls.EDGE, metric="taxicab")
    assert (dist[changed] <= d).all()


def test_corruption_deterministic(labelled):
    inst, mask = labelled
    spec = CorruptionSpec(**BENCHMARK_CORRUPTION, seed=11)
    assert corrupt(mask, inst, spec) == corrupt(mask, inst, spec)


@pytest.mark.parametrize("kw", [dict(merge_rate=1.5), dict(drop_below=-1), dict(crescent_noise=-2)])
def test_corruption_spec_validation(kw):
    with pytest.raises(ValueError):
        CorruptionSpec(**kw)
