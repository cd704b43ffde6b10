import math

import numpy as np
import pytest

from xdmap.geometry import PinholeCamera, Pose
from xdmap.mapping import (
    Detection,
    ObservationSet,
    SolverConfig,
    associate_detections,
    extract_element_cloud,
    fit_cylinder,
    fit_landmark,
    fit_plane,
    foreground_cluster,
    resample_contour,
)
from xdmap.primitives import Cylinder, SemanticClass
from xdmap.synthetic import cylinder_observations, random_cylinder_problem, random_sign_problem

Po, TS = SemanticClass.POLE, SemanticClass.TRAFFIC_SIGN


def _axis_angle(a, b):
    return math.degrees(math.acos(min(1.0, abs(float(a @ b)))))


def test_noiseless_cylinder_fit_is_exact():
    rng = np.random.default_rng(4)
    cyl, pts, o, d = random_cylinder_problem(rng, range_sigma=0.0)
    got, res = fit_cylinder(pts, o, d)
    assert res.converged
    assert abs(got.radius - cyl.radius) < 1e-6
    assert _axis_angle(got.axis, cyl.axis) < 1e-4
    np.testing.assert_allclose(got.center, cyl.center, atol=1e-5)


def test_noisy_cylinder_fit_is_close():
    rng = np.random.default_rng(5)
    cyl, pts, o, d = random_cylinder_problem(rng, range_sigma=0.02)
    got, _ = fit_cylinder(pts, o, d)
    assert abs(got.radius - cyl.radius) < 0.01
    assert _axis_angle(got.axis, cyl.axis) < 0.5


@pytest.mark.parametrize("family", ["rectangle", "circle", "triangle"])
def test_sign_family_is_recovered(family):
    rng = np.random.default_rng(11)
    plane, dets, pts = random_sign_problem(rng, family)
    obs = ObservationSet(dets, [pts] + [np.zeros((0, 3))] * (len(dets) - 1))
    fr = fit_landmark(obs)
    assert fr.accepted and fr.family == family
    assert np.linalg.norm(fr.landmark.geometry.center - plane.center) < 0.05


def test_fit_plane_reports_all_family_costs():
    rng = np.random.default_rng(2)
    plane, dets, pts = random_sign_problem(rng, "circle")
    o = np.vstack([det.contour_rays()[0] for det in dets])
    d = np.vstack([det.contour_rays()[1] for det in dets])
    geom, _, costs = fit_plane(pts, o, d)
    assert set(costs) == {"rectangle", "circle", "triangle"}
    assert costs["circle"] <= min(costs.values()) * 1.05 + 1e-15


def test_insufficient_support_is_rejected():
    rng = np.random.default_rng(0)
    plane, dets, pts = random_sign_problem(rng, "rectangle")
    fr = fit_landmark(ObservationSet(dets[:1], [pts[:3]]), SolverConfig(min_support=10))
    assert not fr.accepted and "support" in fr.reason


def test_resample_contour_spacing():
    sq = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]])
    s = resample_contour(sq, 8)
    assert len(s) == 8
    gaps = np.linalg.norm(np.diff(np.vstack([s, s[:1]]), axis=0), axis=1)
    np.testing.assert_allclose(gaps.max(), 5.0)


def _camera_looking_x():
    # camera z forward along map +x
    rot = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    from xdmap.geometry import quat_from_matrix

    return PinholeCamera.with_fov(400, 300, math.radians(90), Pose(0.0, quat_from_matrix(rot), np.zeros(3)))


def test_extraction_takes_points_inside_the_mask():
    cam = _camera_looking_x()
    pts = np.array([[10.0, 0.0, 0.0], [10.0, 5.0, 0.0], [-10.0, 0.0, 0.0]])
    uv, _ = cam.project(pts[:1])
    c = uv[0]
    poly = c + np.array([[-5, -5], [5, -5], [5, 5], [-5, 5]], float)
    det = Detection(0, Po, poly, cam)
    got = extract_element_cloud(det, pts)
    np.testing.assert_array_equal(got, pts[:1])  # the point behind the camera projects there too


def test_foreground_cluster_drops_background_returns():
    near = np.column_stack([np.linspace(10, 10.3, 20), np.zeros(20), np.zeros(20)])
    far = np.column_stack([np.linspace(25, 26, 30), np.zeros(30), np.zeros(30)])
    got = foreground_cluster(np.vstack([far, near]), np.zeros(3), gap=0.5)
    np.testing.assert_array_equal(got, near)


def test_association_groups_by_centroid_and_class():
    cam = _camera_looking_x()
    poly = np.array([[0, 0], [5, 0], [5, 5]], float)
    dets = [Detection(k, cls, poly, cam) for k, cls in enumerate([Po, Po, TS, Po])]
    a = np.array([[10.0, 0.0, 0.0]])
    b = np.array([[10.0, 4.0, 0.0]])
    clouds = [a, a + 0.3, a, b]
    sets = associate_detections(dets, clouds, gating_distance=1.0)
    sizes = sorted(len(s.detections) for s in sets)
    assert sizes == [1, 1, 2]
    pole_sets = [s for s in sets if s.cls == Po and len(s.detections) == 2]
    assert [d.frame_id for d in pole_sets[0].detections] == [0, 1]


def test_cylinder_observation_rays_are_tangent():
    from xdmap.primitives import ray_hull_distance

    cyl = Cylinder(np.array([0.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]), 4.0, 0.2)
    centers = np.array([[10.0, 0.0, 1.5], [8.0, 6.0, 1.0]])
    _, o, d = cylinder_observations(cyl, centers, np.random.default_rng(0))
    assert np.abs(ray_hull_distance(cyl, o, d)).max() < 1e-9
