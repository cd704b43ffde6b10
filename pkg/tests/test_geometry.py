import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xdmap.geometry import (
    OutOfRangeError,
    PinholeCamera,
    Pose,
    SphericalCameraModel,
    TimedPoints,
    Trajectory,
    camera_mount,
    frame_indices_for_rate,
    interpolate_pose,
    motion_compensate,
    points_to_map,
    project_spherical,
    quat_angle,
    quat_from_axis_angle,
    quat_from_matrix,
    quat_to_matrix,
    slerp,
    unproject_spherical,
)

finite = st.floats(-50, 50, allow_nan=False)
unit_quats = arrays(float, 4, elements=st.floats(-1, 1)).filter(lambda q: np.linalg.norm(q) > 0.1).map(
    lambda q: q / np.linalg.norm(q)
)
vec3 = arrays(float, 3, elements=finite)


def _pose(q, t, stamp=0.0):
    return Pose(stamp, q, t)


@given(unit_quats, vec3, unit_quats, vec3)
def test_compose_matches_matrix_product(q1, t1, q2, t2):
    a, b = _pose(q1, t1), _pose(q2, t2)
    np.testing.assert_allclose(a.compose(b).matrix(), a.matrix() @ b.matrix(), atol=1e-9)


@given(unit_quats, vec3, arrays(float, (5, 3), elements=finite))
def test_inverse_round_trip(q, t, pts):
    p = _pose(q, t)
    np.testing.assert_allclose(p.apply_inverse(p.apply(pts)), pts, atol=1e-9)
    np.testing.assert_allclose(p.inverse().apply(p.apply(pts)), pts, atol=1e-9)


@given(unit_quats)
def test_quaternion_matrix_round_trip(q):
    q2 = quat_from_matrix(quat_to_matrix(q))
    # q and -q are the same rotation
    assert min(np.abs(q2 - q).max(), np.abs(q2 + q).max()) < 1e-9


def test_pose_rejects_non_unit_quaternion():
    with pytest.raises(ValueError):
        Pose(0.0, np.array([2.0, 0, 0, 0]), np.zeros(3))


def test_slerp_endpoints_and_midpoint():
    q0 = np.array([1.0, 0, 0, 0])
    q1 = quat_from_axis_angle([0, 0, 1], math.radians(90))
    np.testing.assert_allclose(slerp(q0, q1, 0.0), q0, atol=1e-12)
    np.testing.assert_allclose(slerp(q0, q1, 1.0), q1, atol=1e-12)
    assert quat_angle(slerp(q0, q1, 0.5)) == pytest.approx(math.radians(45))


def test_slerp_takes_the_short_arc():
    q0 = np.array([1.0, 0, 0, 0])
    q1 = -quat_from_axis_angle([0, 0, 1], math.radians(10))  # same rotation, far hemisphere
    mid = slerp(q0, q1, 0.5)
    assert quat_angle(mid) == pytest.approx(math.radians(5), abs=1e-9)


def _straight(speed=10.0, n=11, dt=0.1, yaw_rate=0.0):
    return Trajectory(tuple(
        Pose(k * dt, quat_from_axis_angle([0, 0, 1], yaw_rate * k * dt), np.array([speed * k * dt, 0.0, 1.8]))
        for k in range(n)
    ))


def test_interpolate_pose_linear_translation():
    traj = _straight()
    p = interpolate_pose(traj, 0.35)
    np.testing.assert_allclose(p.translation, [3.5, 0.0, 1.8], atol=1e-12)


def test_trajectory_rejects_unordered_times():
    p = Pose.identity()
    with pytest.raises(ValueError):
        Trajectory((p, p))


def test_motion_compensate_outside_span_raises():
    traj = _straight(n=3)
    pts = TimedPoints.from_positions(np.ones((2, 3)), [0.0, 5.0])
    with pytest.raises(OutOfRangeError):
        motion_compensate(pts, traj, 0.0)


def test_motion_compensate_constant_pose_is_identity():
    pose = Pose(0.0, quat_from_axis_angle([0.3, -0.2, 1.0], 0.7), np.array([120.0, -35.0, 2.0]))
    traj = Trajectory(tuple(Pose(t, pose.rotation, pose.translation) for t in (0.0, 0.05, 0.1)))
    rng = np.random.default_rng(0)
    pts = TimedPoints.from_positions(rng.uniform(-60, 60, (2000, 3)), rng.uniform(0, 0.1, 2000))
    out = motion_compensate(pts, traj, 0.0)
    assert np.abs(out - pts.positions).max() <= 1e-12


def test_motion_compensate_undoes_known_motion():
    traj = _straight(speed=10.0, yaw_rate=0.5)
    # a static world point observed at several times from the moving sensor
    world = np.array([20.0, 3.0, 1.0])
    times = np.linspace(0.0, 0.1, 7)
    local = np.array([interpolate_pose(traj, t).apply_inverse(world) for t in times])
    pts = TimedPoints.from_positions(local, times)
    np.testing.assert_allclose(points_to_map(pts, traj), np.tile(world, (7, 1)), atol=1e-9)
    ref = interpolate_pose(traj, 0.0).apply_inverse(world)
    np.testing.assert_allclose(motion_compensate(pts, traj, 0.0), np.tile(ref, (7, 1)), atol=1e-9)


def test_timed_points_validation():
    with pytest.raises(ValueError):
        TimedPoints(np.zeros((2, 3)), np.zeros(3), np.zeros(2))
    with pytest.raises(ValueError):
        TimedPoints(np.zeros((1, 3)), np.zeros(1), -np.ones(1))


# ---------------------------------------------------------------------------
# spherical model


def test_projection_conventions():
    m = SphericalCameraModel()
    u_left = project_spherical(m, [10.0, 1.0, 0.0])[0]
    u_right = project_spherical(m, [10.0, -1.0, 0.0])[0]
    assert u_left > u_right  # u grows with azimuth atan2(y, x)
    v_up = project_spherical(m, [10.0, 0.0, 1.0])[1]
    v_down = project_spherical(m, [10.0, 0.0, -1.0])[1]
    assert v_up < v_down  # v grows with decreasing elevation
    assert project_spherical(m, [3.0, 4.0, 0.0])[2] == pytest.approx(5.0)
    assert project_spherical(m, [1.0, 0.0, 5.0]) is None  # above the elevation range


def test_project_origin_is_an_error():
    with pytest.raises(ValueError):
        project_spherical(SphericalCameraModel(), [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        unproject_spherical(SphericalCameraModel(), 1.0, 1.0, 0.0)


@given(st.floats(1e-6, 1812 - 1e-6), st.floats(1e-6, 128 - 1e-6), st.floats(0.5, 200.0))
def test_unproject_project_round_trip(u, v, r):
    m = SphericalCameraModel()
    u2, v2, r2 = project_spherical(m, unproject_spherical(m, u, v, r))
    assert abs(u2 - u) < 1e-6 and abs(v2 - v) < 1e-6 and abs(r2 - r) < 1e-9


def test_pixel_indices_wrap_for_full_circle():
    m = SphericalCameraModel(width=8, height=4)
    rows, cols = m.pixel_indices(np.array([[8.2, 1.5], [-0.3, 2.5]]))
    assert cols.tolist() == [0, 7]
    assert rows.tolist() == [1, 2]


def test_pixel_center_directions_are_unit():
    d = SphericalCameraModel(width=32, height=8).pixel_center_directions()
    assert d.shape == (8, 32, 3)
    np.testing.assert_allclose(np.linalg.norm(d, axis=-1), 1.0)


# ---------------------------------------------------------------------------
# pinhole


def test_pinhole_projects_optical_axis_to_principal_point():
    # identity pose: camera axes (right, down, forward) coincide with the map axes
    cam = PinholeCamera.with_fov(4096, 1536, math.radians(100), Pose.identity())
    uv, z = cam.project(np.array([[0.0, 0.0, 10.0]]))
    np.testing.assert_allclose(uv[0], [cam.cx, cam.cy])
    assert z[0] == pytest.approx(10.0)
    uv, _ = cam.project(np.array([[1.0, 0.0, 10.0], [0.0, 1.0, 10.0]]))
    assert uv[0, 0] > cam.cx and uv[1, 1] > cam.cy
    assert cam.horizontal_fov() == pytest.approx(math.radians(100))


def test_pinhole_rays_hit_their_pixels():
    pose = Pose(0.0, quat_from_axis_angle([0, 0, 1], 0.3), np.array([1.0, 2.0, 1.5]))
    cam = PinholeCamera.with_fov(640, 480, math.radians(90), pose)
    uv = np.array([[10.5, 20.5], [320.0, 240.0], [600.25, 470.75]])
    pts = cam.center + 7.0 * cam.ray_directions(uv)
    np.testing.assert_allclose(cam.project(pts)[0], uv, atol=1e-9)


def test_camera_mount_offset():
    mount = camera_mount((0.5, 0.0, -0.3))
    np.testing.assert_allclose(mount.translation, [0.5, 0.0, -0.3])


@pytest.mark.parametrize("rate,step", [(10.0, 1), (2.0, 5), (0.5, 20)])
def test_frame_indices_for_rate(rate, step):
    idx = frame_indices_for_rate(100, rate)
    assert idx.tolist() == list(range(0, 100, step))


def test_frame_indices_for_rate_rejects_non_divisor():
    with pytest.raises(ValueError):
        frame_indices_for_rate(10, 3.0)
    with pytest.raises(ValueError):
        frame_indices_for_rate(10, 20.0)
