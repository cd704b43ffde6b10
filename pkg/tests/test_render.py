import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xdmap.geometry import Pose, SphericalCameraModel
from xdmap.primitives import Cylinder, Landmark, Plane, Rectangle, SemanticClass, expand_margin
from xdmap.render import (
    LabelImage,
    RenderConfig,
    derive_panoptic,
    derive_semantic,
    landmark_footprint,
    render_map,
    render_stages,
    select_landmarks,
)

Po, TS = SemanticClass.POLE, SemanticClass.TRAFFIC_SIGN
MODEL = SphericalCameraModel()
EGO = Pose.from_yaw(0.0, np.array([0.0, 0.0, 1.8]), 0.0)


def pole_at(x, y, i, radius=0.15, length=5.0):
    return Landmark(i, Po, Cylinder(np.array([x, y, 0.0]), np.array([0, 0, 1.0]), length, radius))


def sign_at(x, y, i, size=0.8):
    return Landmark(i, TS, Plane.upright(np.array([x, y, 2.0]), math.atan2(-y, -x), Rectangle(size, size)))


def test_select_landmarks_threshold_is_strict():
    lms = [pole_at(10.0, 0.0, 1, length=3.6)]  # anchor at (10, 0, 1.8): distance exactly 10
    assert select_landmarks(lms, EGO, 10.0) == []
    assert len(select_landmarks(lms, EGO, 10.0 + 1e-9)) == 1
    with pytest.raises(ValueError):
        select_landmarks(lms, EGO, 0.0)


def test_nearer_landmark_overwrites_farther():
    far = sign_at(20.0, 0.0, 1, size=2.0)
    near = pole_at(10.0, 0.0, 2)
    st_ = render_stages([far, near], EGO, MODEL)
    assert st_.order == [1, 2]
    fp_near = landmark_footprint(near, EGO, MODEL)
    assert np.all(st_.prefilter[fp_near] == 2)
    assert (st_.prefilter == 1).sum() > 0


def test_equal_distance_tie_paints_lower_id_last():
    a = pole_at(10.0, 0.0, 3)
    b = pole_at(10.0, 0.0, 5)
    st_ = render_stages([a, b], EGO, MODEL)
    assert st_.order == [5, 3]
    assert set(np.unique(st_.prefilter)) == {0, 3}


def test_duplicate_ids_rejected():
    with pytest.raises(ValueError):
        render_stages([pole_at(10, 0, 1), pole_at(12, 0, 1)], EGO, MODEL)


def test_small_segments_are_removed():
    tiny = pole_at(30.0, 2.0, 1, radius=0.05, length=0.3)
    cfg = RenderConfig(min_segment_pixels=4)
    st_ = render_stages([tiny], EGO, MODEL, cfg)
    n = int((st_.prefilter == 1).sum())
    assert 0 < n < 4
    assert not st_.predilation.any()
    kept = render_stages([tiny], EGO, MODEL, RenderConfig(min_segment_pixels=n))
    assert (kept.predilation == 1).sum() == n


def test_dilation_adds_exactly_one_pixel_ring():
    st_ = render_stages([pole_at(10.0, 3.0, 1)], EGO, MODEL, RenderConfig(dilation=1))
    core = st_.predilation == 1
    final = st_.image.instance == 1
    ring = final & ~core
    assert ring.any()
    from scipy import ndimage

    expected = ndimage.binary_dilation(core, np.ones((3, 3), bool))
    np.testing.assert_array_equal(final, expected)
    none = render_stages([pole_at(10.0, 3.0, 1)], EGO, MODEL, RenderConfig(dilation=0))
    np.testing.assert_array_equal(none.image.instance == 1, core)


def test_dilation_does_not_overwrite_other_instances():
    a, b = pole_at(10.0, 0.0, 1), pole_at(10.0, -0.35, 2)
    st_ = render_stages([a, b], EGO, MODEL)
    pre = st_.predilation
    fin = st_.image.instance
    assert np.array_equal(fin[pre > 0], pre[pre > 0])


def test_footprint_across_the_azimuth_seam():
    behind = pole_at(-10.0, 0.0, 1)
    rows, cols = landmark_footprint(behind, EGO, MODEL)
    assert cols.min() == 0 and cols.max() == MODEL.width - 1
    assert len(np.unique(cols)) < 20  # two short runs, not a band across the image


def test_semantic_and_depth_channels():
    img, expanded = render_map([pole_at(10.0, 0.0, 4), sign_at(20.0, 5.0, 9)], EGO, MODEL)
    lab = img.image
    assert set(np.unique(lab.semantic)) == {0, int(Po), int(TS)}
    assert all(lm.expanded for lm in expanded)
    d = lab.depth_hint[lab.instance == 4]
    assert d.min() == d.max() == pytest.approx(math.hypot(10.0, 0.7), rel=1e-6)
    sem, ign = derive_semantic(lab)
    np.testing.assert_array_equal(sem, lab.semantic)
    assert not ign.any()


def test_panoptic_segments():
    lab = render_map([pole_at(10.0, 0.0, 4), pole_at(15.0, 4.0, 7)], EGO, MODEL)[0].image
    pan = derive_panoptic(lab)
    segs = {s.segment_id: s for s in pan.segments()}
    assert set(segs) == {0, 4, 7}
    assert segs[0].cls == SemanticClass.BACKGROUND and segs[4].cls == Po
    assert segs[4].area == int((lab.instance == 4).sum())


def test_label_image_validation():
    img = LabelImage.empty(2, 3)
    with pytest.raises(ValueError):
        LabelImage(img.semantic, np.ones((2, 3)), img.ignore, img.depth_hint)
    with pytest.raises(ValueError):
        LabelImage(img.semantic, img.instance, img.ignore, np.zeros((3, 2)))


@given(st.lists(st.tuples(st.floats(-80, 80), st.floats(-80, 80)), min_size=1, max_size=12))
def test_prefilter_nested_in_tau(positions):
    lms = [pole_at(x, y, k + 1) for k, (x, y) in enumerate(positions) if math.hypot(x, y) > 1.0]
    sets = []
    for tau in (30.0, 50.0, 70.0):
        sel = select_landmarks([expand_margin(lm) for lm in lms], EGO, tau)
        sets.append(render_stages(sel, EGO, MODEL, RenderConfig(range_threshold=tau)).prefilter > 0)
    assert not np.any(sets[0] & ~sets[1]) and not np.any(sets[1] & ~sets[2])
