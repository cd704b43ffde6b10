import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xdmap.baselines import (
    FovPolicy,
    apply_fov_ignore,
    fov_ignore_columns,
    nearest_rank_percentile,
    xd_b1_lift,
    xd_b2_project,
)
from xdmap.frustum import LabeledPointCloud
from xdmap.geometry import Pose, SphericalCameraModel, TimedPoints
from xdmap.mapping import Detection
from xdmap.primitives import SemanticClass
from xdmap.render import LabelImage
from xdmap.synthetic import CameraRig

TS = SemanticClass.TRAFFIC_SIGN
MODEL = SphericalCameraModel()


def _sort_oracle(values, percent):
    v = sorted(values)
    k = 1
    while k < len(v) and k * 100 < percent * len(v):
        k += 1
    return v[k - 1]


@given(st.lists(st.integers(0, 50).map(float), min_size=1, max_size=40))
def test_percentile_matches_sort_oracle(values):
    assert nearest_rank_percentile(values, 30.0) == _sort_oracle(values, 30.0)


def test_percentile_examples():
    assert nearest_rank_percentile([5.0, 1.0, 3.0], 30.0) == 1.0  # ceil(0.9) = 1
    assert nearest_rank_percentile(list(range(1, 11)), 30.0) == 3.0
    assert nearest_rank_percentile([7.0], 30.0) == 7.0
    with pytest.raises(ValueError):
        nearest_rank_percentile([], 30.0)


def test_fov_columns_centre_on_camera_yaw():
    cols = fov_ignore_columns(MODEL, FovPolicy(math.radians(100.0)), 0.0)
    kept = np.flatnonzero(~cols)
    az = MODEL.azimuth_range[0] + (kept + 0.5) * MODEL.azimuth_resolution
    assert np.abs(az).max() <= math.radians(50.0)
    assert len(kept) == pytest.approx(MODEL.width * 100 / 360, abs=2)


def test_fov_ignore_clears_labels():
    img = LabelImage.empty(MODEL.height, MODEL.width)
    img.semantic[:, 0] = int(TS)
    img.instance[:, 0] = 1
    out = apply_fov_ignore(img, FovPolicy(), 0.0, MODEL)
    assert out.ignore[:, 0].all() and not out.instance[:, 0].any()
    cloud = LabeledPointCloud(np.array([[-5.0, 0.0, 0.0], [5.0, 0.0, 0.0]]), [5, 5], [0, 0], [TS, TS], [1, 2], [0, 0])
    out = apply_fov_ignore(cloud, FovPolicy(), 0.0)
    assert out.ignore.tolist() == [True, False]
    assert out.instance.tolist() == [0, 2]
    with pytest.raises(TypeError):
        apply_fov_ignore(object(), FovPolicy(), 0.0)


def _wall_scene():
    """A planar grid of returns 12 m ahead with a mask covering its middle."""
    pose = Pose.from_yaw(0.0, np.zeros(3), 0.0)
    rig = CameraRig()
    cam = rig.camera(pose)
    yy, zz = np.meshgrid(np.linspace(-3, 3, 61), np.linspace(-1, 1, 21))
    local = np.column_stack([np.full(yy.size, 12.0), yy.ravel(), zz.ravel()])
    local[::7, 0] = 11.0  # a nearer subset changes the percentile
    corner = cam.project(np.array([[12.0, 1.0, 0.5], [12.0, -1.0, -0.5]]))[0]
    lo, hi = corner.min(axis=0), corner.max(axis=0)
    poly = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    det = Detection(0, TS, poly, cam)
    return pose, cam, det, TimedPoints.from_positions(local, np.zeros(len(local)))


def test_b2_labels_exactly_the_points_inside_the_mask():
    pose, cam, det, pts = _wall_scene()
    res = xd_b2_project([det], pts, pose, MODEL)
    uv, z = cam.project(pose.apply(pts.positions))
    from xdmap.raster import points_in_polygon

    inside = points_in_polygon(uv, det.mask_polygon) & (z > 0)
    np.testing.assert_array_equal(res.cloud.instance > 0, inside)
    assert np.all(res.cloud.semantic[inside] == int(TS))
    assert (res.image.instance == 1).sum() > 0


def test_b1_uses_the_30th_percentile_depth():
    pose, cam, det, pts = _wall_scene()
    res = xd_b1_lift([det], pts, pose, MODEL)
    uv, z = cam.project(pose.apply(pts.positions))
    from xdmap.raster import points_in_polygon

    z_in = z[points_in_polygon(uv, det.mask_polygon)]
    assert res.depths == [nearest_rank_percentile(z_in, 30.0)]
    assert (res.image.instance == 1).sum() > 0
    # 3D labels are a lookup in the 2D result
    rows, cols = MODEL.pixel_indices(MODEL.project(pts.positions)[0])
    np.testing.assert_array_equal(res.cloud.instance, res.image.instance[rows, cols])


def test_baselines_without_points_skip_detections():
    pose, cam, det, _ = _wall_scene()
    empty = TimedPoints.from_positions(np.zeros((0, 3)), np.zeros(0))
    for fn in (xd_b1_lift, xd_b2_project):
        res = fn([det], empty, pose, MODEL)
        assert res.skipped and not res.image.instance.any()
