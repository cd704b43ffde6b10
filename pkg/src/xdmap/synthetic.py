"""Synthetic street scenes and analytic sensor simulators.

A scene is a straight (optionally curving) road lined with poles, floating
traffic lights and upright signs, plus clutter boxes standing in for
buildings and vegetation.  The LiDAR fires one ray per pixel centre with
column-by-column timestamps; the camera emits occlusion-resolved silhouette
polygons.  Every returned point carries its true object id in a sidecar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import shapely
from shapely.geometry import Polygon, box as shapely_box
from shapely.ops import unary_union

from .geometry import (
    PinholeCamera,
    Pose,
    SphericalCameraModel,
    TimedPoints,
    Trajectory,
    camera_mount,
    interpolate_pose,
    motion_compensate,
    poses_at,
    quat_from_axis_angle,
    quat_from_yaw,
    quat_multiply,
)
from .mapping import Detection, Frame
from .primitives import (
    Circle,
    Cylinder,
    Landmark,
    MarginPolicy,
    Plane,
    Rectangle,
    SemanticClass,
    Triangle,
    bounding_radius,
    contains_point,
    expand_margin,
    hull_keypoints,
    orthonormal_basis,
    ray_intersect,
    shape_outline,
    shape_signed_distance,
)
from .raster import convex_hull


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 1
    num_poles: int = 8
    num_lights: int = 4
    num_signs: int = 8
    min_spacing: float = 3.0
    road_length: float = 100.0
    lateral_range: Tuple[float, float] = (3.5, 8.0)
    pole_radius: Tuple[float, float] = (0.06, 0.15)
    pole_height: Tuple[float, float] = (3.0, 6.0)
    light_radius: Tuple[float, float] = (0.10, 0.20)
    light_length: Tuple[float, float] = (0.6, 1.0)
    light_elevation: Tuple[float, float] = (3.0, 4.5)
    sign_size: Tuple[float, float] = (0.5, 0.9)
    sign_elevation: Tuple[float, float] = (1.8, 2.8)
    sign_yaw_jitter: float = math.radians(30.0)
    sign_families: Tuple[str, ...] = ("rectangle", "circle", "triangle")
    num_clutter: int = 12
    clutter_lateral: Tuple[float, float] = (11.0, 16.0)
    speed: float = 10.0
    yaw_rate: float = 0.0
    start_x: float = -10.0
    num_frames: int = 50
    frame_rate: float = 10.0
    sensor_height: float = 1.8
    max_retries: int = 2000

    @property
    def num_objects(self) -> int:
        return self.num_poles + self.num_lights + self.num_signs


@dataclass(frozen=True)
class NoiseSpec:
    range_sigma: float = 0.0
    pose_sigma_translation: float = 0.0
    pose_sigma_rotation: float = 0.0
    mask_jitter: float = 0.0
    dropout: float = 0.0

    def __post_init__(self):
        if min(self.range_sigma, self.pose_sigma_translation, self.pose_sigma_rotation, self.mask_jitter) < 0:
            raise ValueError("noise levels must be nonnegative")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout must be in [0, 1]")


@dataclass(frozen=True)
class Box:
    """Axis-aligned clutter box."""

    lo: np.ndarray
    hi: np.ndarray

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    @property
    def corners(self) -> np.ndarray:
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])

    @property
    def radius(self) -> float:
        return 0.5 * float(np.linalg.norm(np.asarray(self.hi) - np.asarray(self.lo)))


@dataclass(frozen=True)
class CameraRig:
    """Camera intrinsics and the sensor-from-camera mount."""

    width: int = 4096
    height: int = 1536
    horizontal_fov: float = math.radians(100.0)
    mount: Pose = field(default_factory=lambda: camera_mount((0.5, 0.0, -0.3)))

    def camera(self, lidar_pose: Pose) -> PinholeCamera:
        return PinholeCamera.with_fov(self.width, self.height, self.horizontal_fov, lidar_pose @ self.mount)

    @property
    def axis_yaw(self) -> float:
        fwd = self.mount.rotate(np.array([0.0, 0.0, 1.0]))
        return math.atan2(fwd[1], fwd[0])


@dataclass(frozen=True, eq=False)
class Scene:
    landmarks: Tuple[Landmark, ...]
    trajectory: Trajectory
    clutter: Tuple[Box, ...]
    frame_times: np.ndarray
    scan_period: float = 0.1
    ground_height: float = 0.0


@dataclass(frozen=True, eq=False)
class Scan:
    """One simulated sweep with its truth sidecar."""

    points: TimedPoints
    truth_ids: np.ndarray  # 0 = ground/clutter
    truth_classes: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    start_time: float


# ---------------------------------------------------------------------------
# scene generation


def _uniform(rng, lo_hi):
    return float(rng.uniform(*lo_hi))


def _ego_trajectory(spec: SceneSpec) -> Trajectory:
    # knots at the frame rate; one extra period so the last sweep is covered
    dt = 1.0 / spec.frame_rate
    n = spec.num_frames + 2
    poses = []
    for k in range(n):
        t = k * dt
        yaw = spec.yaw_rate * t
        if abs(spec.yaw_rate) < 1e-12:
            x, y = spec.start_x + spec.speed * t, 0.0
        else:
            rad = spec.speed / spec.yaw_rate
            x = spec.start_x + rad * math.sin(yaw)
            y = rad * (1 - math.cos(yaw))
        poses.append(Pose(t, quat_from_yaw(yaw), np.array([x, y, spec.sensor_height])))
    return Trajectory(poses)


def _road_frame(traj: Trajectory, x: float) -> Tuple[np.ndarray, float]:
    """Point on the ego path nearest to arc position ``x`` and its heading."""
    times = np.array([p.timestamp for p in traj.poses])
    xs = np.array([p.translation[0] for p in traj.poses])
    t = float(np.clip(np.interp(x, xs, times), times[0], times[-1]))
    if x < xs[0] or x > xs[-1]:
        pose = traj.poses[0] if x < xs[0] else traj.poses[-1]
        fwd = pose.rotate(np.array([1.0, 0.0, 0.0]))
        base = pose.translation + (x - pose.translation[0]) / max(fwd[0], 1e-6) * fwd
        return base, pose.yaw()
    pose = interpolate_pose(traj, t)
    return pose.translation, pose.yaw()


def generate_scene(spec: SceneSpec) -> Scene:
    """Deterministic scene for ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    traj = _ego_trajectory(spec)
    classes = (
        [SemanticClass.POLE] * spec.num_poles
        + [SemanticClass.TRAFFIC_LIGHT] * spec.num_lights
        + [SemanticClass.TRAFFIC_SIGN] * spec.num_signs
    )
    order = rng.permutation(len(classes))
    placed: List[np.ndarray] = []
    landmarks: List[Landmark] = []
    for k, idx in enumerate(order):
        cls = classes[idx]
        for _ in range(spec.max_retries):
            along = rng.uniform(0.0, spec.road_length)
            side = 1.0 if rng.random() < 0.5 else -1.0
            lateral = side * _uniform(rng, spec.lateral_range)
            base, heading = _road_frame(traj, along)
            xy = base[:2] + lateral * np.array([-math.sin(heading), math.cos(heading)])
            if all(np.linalg.norm(xy - p) >= spec.min_spacing for p in placed):
                break
        else:
            raise GenerationError(f"could not place object {k + 1} with spacing {spec.min_spacing} m")
        placed.append(xy)
        if cls == SemanticClass.POLE:
            geom = Cylinder.vertical(xy[0], xy[1], 0.0, _uniform(rng, spec.pole_height), _uniform(rng, spec.pole_radius))
        elif cls == SemanticClass.TRAFFIC_LIGHT:
            length = _uniform(rng, spec.light_length)
            z0 = _uniform(rng, spec.light_elevation) - 0.5 * length
            geom = Cylinder.vertical(xy[0], xy[1], z0, length, _uniform(rng, spec.light_radius))
        else:
            family = spec.sign_families[int(rng.integers(len(spec.sign_families)))]
            size = _uniform(rng, spec.sign_size)
            if family == "rectangle":
                shape = Rectangle(size, size * float(rng.uniform(0.6, 1.4)))
            elif family == "circle":
                shape = Circle(0.5 * size)
            else:
                shape = Triangle(size, bool(rng.random() < 0.5))
            # signs face oncoming traffic
            yaw = heading + math.pi + float(rng.uniform(-1, 1)) * spec.sign_yaw_jitter
            geom = Plane.upright([xy[0], xy[1], _uniform(rng, spec.sign_elevation)], yaw, shape)
        landmarks.append(Landmark(k + 1, cls, geom))

    clutter = []
    for _ in range(spec.num_clutter):
        along = rng.uniform(-20.0, spec.road_length + 20.0)
        side = 1.0 if rng.random() < 0.5 else -1.0
        near = _uniform(rng, spec.clutter_lateral)
        depth = rng.uniform(1.0, 5.0)
        length = rng.uniform(2.0, 8.0)
        height = rng.uniform(2.0, 8.0)
        base, heading = _road_frame(traj, along)
        y_lo = base[1] + (near if side > 0 else -near - depth)
        clutter.append(Box(np.array([base[0] - length / 2, y_lo, 0.0]),
                           np.array([base[0] + length / 2, y_lo + depth, height])))
    frame_times = np.arange(spec.num_frames) / spec.frame_rate
    return Scene(tuple(landmarks), traj, tuple(clutter), frame_times, scan_period=1.0 / spec.frame_rate)


def perturb_trajectory(traj: Trajectory, noise: NoiseSpec, rng: np.random.Generator) -> Trajectory:
    """Per-knot Gaussian pose noise, standing in for localisation error."""
    if noise.pose_sigma_translation == 0 and noise.pose_sigma_rotation == 0:
        return traj
    out = []
    for p in traj.poses:
        dt = rng.normal(0.0, noise.pose_sigma_translation, 3)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        dq = quat_from_axis_angle(axis, float(rng.normal(0.0, noise.pose_sigma_rotation)))
        out.append(Pose(p.timestamp, quat_multiply(dq, p.rotation), p.translation + dt))
    return Trajectory(out)


# ---------------------------------------------------------------------------
# ray casting


def _ray_box(bx: Box, o, d):
    lo, hi = np.asarray(bx.lo), np.asarray(bx.hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    tmin = np.max(np.minimum(t1, t2), axis=1)
    tmax = np.min(np.maximum(t1, t2), axis=1)
    hit = (tmax >= np.maximum(tmin, 0.0))
    return np.where(hit, np.maximum(tmin, 0.0), np.inf)


def _angular_window(centers_s, radius, model: SphericalCameraModel, dirs_az, rows_el):
    """Pixel mask of rays that can possibly hit a sphere per column.

    ``centers_s`` holds the object centre in each column's sensor frame.
    """
    dist = np.linalg.norm(centers_s, axis=1)
    if np.all(dist <= radius):
        return np.ones((model.height, model.width), dtype=bool)
    half = np.where(dist > radius, np.arcsin(np.clip(radius / np.maximum(dist, 1e-12), 0, 1)), math.pi)
    half = half + 2 * max(model.azimuth_resolution, model.elevation_resolution)
    az = np.arctan2(centers_s[:, 1], centers_s[:, 0])
    el = np.arctan2(centers_s[:, 2], np.hypot(centers_s[:, 0], centers_s[:, 1]))
    daz = np.abs(np.mod(dirs_az - az + math.pi, 2 * math.pi) - math.pi)
    # azimuth window widens near the poles of the sphere
    cos_el = np.maximum(np.cos(np.clip(np.abs(el) + half, 0, math.pi / 2 - 1e-3)), 1e-3)
    col_ok = (daz <= half / cos_el) | (dist <= radius)
    el_ok = np.abs(rows_el[:, None] - el[None, :]) <= half[None, :]
    return el_ok & col_ok[None, :]


def raycast(
    origins: np.ndarray,
    directions: np.ndarray,
    landmarks: Sequence[Landmark],
    clutter: Sequence[Box] = (),
    ground_height: Optional[float] = 0.0,
    max_range: float = 100.0,
    candidates: Optional[Sequence[np.ndarray]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest hit distance and hit index for flat ray arrays.

    The index is ``k + 1`` for ``landmarks[k]``, 0 for ground and clutter,
    and -1 for no return.  ``candidates`` optionally restricts each landmark
    and clutter box (in that order) to a subset of ray indices.
    """
    n = len(origins)
    best = np.full(n, np.inf)
    idx = np.full(n, -1, dtype=np.int64)
    if ground_height is not None:
        dz = directions[:, 2]
        ok = dz < -1e-12
        t = np.where(ok, (ground_height - origins[:, 2]) / np.where(ok, dz, -1.0), np.inf)
        t = np.where(t >= 0, t, np.inf)
        better = t < best
        best[better] = t[better]
        idx[better] = 0
    objects = list(landmarks) + list(clutter)
    for k, obj in enumerate(objects):
        sel = candidates[k] if candidates is not None else np.arange(n)
        if len(sel) == 0:
            continue
        if isinstance(obj, Box):
            t = _ray_box(obj, origins[sel], directions[sel])
            label = 0
        else:
            t = ray_intersect(obj, origins[sel], directions[sel])
            label = k + 1
        better = t < best[sel]
        best[sel[better]] = t[better]
        idx[sel[better]] = label
    miss = best > max_range
    best[miss] = np.inf
    idx[miss] = -1
    return best, idx


def simulate_lidar(
    scene: Scene,
    start_time: float,
    model: SphericalCameraModel = SphericalCameraModel(),
    noise: NoiseSpec = NoiseSpec(),
    rng: Optional[np.random.Generator] = None,
    max_range: float = 100.0,
    trajectory: Optional[Trajectory] = None,
) -> Scan:
    """One sweep starting at ``start_time``; column ``c`` fires at ``start + period * c / W``."""
    rng = rng if rng is not None else np.random.default_rng(0)
    traj = trajectory if trajectory is not None else scene.trajectory
    H, W = model.height, model.width
    col_times = start_time + scene.scan_period * np.arange(W) / W
    rot, trans = poses_at(traj, col_times)
    d_sensor = model.pixel_center_directions()  # (H, W, 3)
    d_map = np.einsum("wij,hwj->hwi", rot, d_sensor)
    o_map = np.broadcast_to(trans[None, :, :], (H, W, 3))
    flat_o = o_map.reshape(-1, 3)
    flat_d = d_map.reshape(-1, 3)

    dirs_az = model.azimuth_range[0] + (np.arange(W) + 0.5) * model.azimuth_resolution
    rows_el = model.elevation_range[1] - (np.arange(H) + 0.5) * model.elevation_resolution
    cands = []
    for obj in list(scene.landmarks) + list(scene.clutter):
        center = obj.center if isinstance(obj, Box) else obj.anchor
        radius = obj.radius if isinstance(obj, Box) else bounding_radius(obj)
        centers_s = np.einsum("wji,wj->wi", rot, center[None, :] - trans)
        if np.min(np.linalg.norm(centers_s, axis=1)) - radius > max_range:
            cands.append(np.zeros(0, dtype=np.int64))
            continue
        win = _angular_window(centers_s, radius, model, dirs_az, rows_el)
        cands.append(np.flatnonzero(win.ravel()))
    dist, hit = raycast(flat_o, flat_d, scene.landmarks, scene.clutter, scene.ground_height, max_range, cands)
    valid = hit >= 0
    keep = valid.copy()
    if noise.dropout > 0:
        keep &= rng.random(len(keep)) >= noise.dropout
    ranges = dist[keep]
    if noise.range_sigma > 0:
        ranges = np.maximum(ranges + rng.normal(0.0, noise.range_sigma, len(ranges)), 1e-3)
    pix = np.flatnonzero(keep)
    rows, cols = np.divmod(pix, W)
    positions = d_sensor.reshape(-1, 3)[pix] * ranges[:, None]
    truth = hit[pix]
    classes = np.zeros(len(truth), dtype=np.int64)
    for k, lm in enumerate(scene.landmarks):
        classes[truth == k + 1] = int(lm.cls)
    ids = np.array([0] + [lm.instance_id for lm in scene.landmarks])[truth]
    return Scan(
        points=TimedPoints(positions, col_times[cols], ranges),
        truth_ids=ids,
        truth_classes=classes,
        rows=rows,
        cols=cols,
        start_time=start_time,
    )


# ---------------------------------------------------------------------------
# camera


def _silhouette(points_map: np.ndarray, camera: PinholeCamera, near: float = 0.1) -> Optional[Polygon]:
    uv, depth = camera.project(points_map)
    if np.any(depth <= near):
        return None
    hull = convex_hull(uv)
    if len(hull) < 3:
        return None
    return Polygon(hull)


def simulate_camera(
    scene: Scene,
    lidar_pose: Pose,
    rig: CameraRig = CameraRig(),
    noise: NoiseSpec = NoiseSpec(),
    rng: Optional[np.random.Generator] = None,
    frame_id: int = 0,
    max_range: float = 100.0,
    min_area: float = 30.0,
    samples_per_arc: int = 64,
) -> List[Detection]:
    """Occlusion-resolved silhouettes of every visible landmark."""
    rng = rng if rng is not None else np.random.default_rng(0)
    camera = rig.camera(lidar_pose)
    image = shapely_box(0, 0, camera.width, camera.height)
    items = []
    for lm in scene.landmarks:
        dist = float(np.linalg.norm(lm.anchor - camera.center))
        if dist > max_range:
            continue
        poly = _silhouette(hull_keypoints(lm, samples_per_arc), camera)
        if poly is not None:
            items.append((dist, lm, poly))
    for bx in scene.clutter:
        poly = _silhouette(bx.corners, camera)
        if poly is not None:
            dist = float(np.linalg.norm(np.clip(camera.center, bx.lo, bx.hi) - camera.center))
            items.append((dist, None, poly))
    items.sort(key=lambda it: it[0])
    occluder = Polygon()
    detections = []
    for dist, lm, poly in items:
        visible = poly.intersection(image).difference(occluder)
        occluder = unary_union([occluder, poly])
        if lm is None or visible.is_empty:
            continue
        parts = list(visible.geoms) if hasattr(visible, "geoms") else [visible]
        parts = [p for p in parts if isinstance(p, Polygon)]
        if not parts:
            continue
        part = max(parts, key=lambda p: p.area)
        if part.area < min_area:
            continue
        contour = np.asarray(part.exterior.coords)[:-1]
        if noise.mask_jitter > 0:
            contour = contour + rng.normal(0.0, noise.mask_jitter, contour.shape)
        contour[:, 0] = np.clip(contour[:, 0], 0.0, camera.width)
        contour[:, 1] = np.clip(contour[:, 1], 0.0, camera.height)
        if len(contour) < 3 or abs(shapely.area(Polygon(contour))) < 1e-9:
            continue
        detections.append(Detection(frame_id, lm.cls, contour, camera, truth_id=lm.instance_id))
    return detections


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True, eq=False)
class SimulatedFrame:
    frame: Frame
    truth_scan: Scan
    camera: PinholeCamera


@dataclass(frozen=True, eq=False)
class SimulatedSequence:
    scene: Scene
    frames: Tuple[SimulatedFrame, ...]
    trajectory: Trajectory  # what the pipeline sees (possibly noisy)
    rig: CameraRig
    model: SphericalCameraModel

    def truth_compensated(self, k: int) -> np.ndarray:
        """Points of frame ``k`` in its reference sensor frame using the true motion."""
        sf = self.frames[k]
        return motion_compensate(sf.truth_scan.points, self.scene.trajectory, sf.frame.timestamp)


def frame_rng(seed: int, frame_index: int, stream: int) -> np.random.Generator:
    """Independent RNG per (frame, purpose) so frames can be simulated in any order."""
    return np.random.default_rng(np.random.SeedSequence([seed, frame_index, stream]))


def simulate_frame(scene: Scene, k: int, model, rig, noise, seed) -> SimulatedFrame:
    t0 = float(scene.frame_times[k])
    scan = simulate_lidar(scene, t0, model, noise, frame_rng(seed, k, 0))
    pose = interpolate_pose(scene.trajectory, t0)
    dets = simulate_camera(scene, pose, rig, noise, frame_rng(seed, k, 1), frame_id=k)
    frame = Frame(k, t0, scan.points, tuple(dets))
    return SimulatedFrame(frame, scan, dets[0].camera if dets else rig.camera(pose))


def simulate_sequence(
    spec: SceneSpec,
    noise: NoiseSpec = NoiseSpec(),
    model: SphericalCameraModel = SphericalCameraModel(),
    rig: CameraRig = CameraRig(),
    frame_indices: Optional[Sequence[int]] = None,
    scene: Optional[Scene] = None,
) -> SimulatedSequence:
    scene = scene if scene is not None else generate_scene(spec)
    ks = range(len(scene.frame_times)) if frame_indices is None else frame_indices
    frames = tuple(simulate_frame(scene, k, model, rig, noise, spec.seed) for k in ks)
    observed = perturb_trajectory(scene.trajectory, noise, np.random.default_rng([spec.seed, 99]))
    if observed is not scene.trajectory:
        # detections carry camera poses, which must come from the same estimate
        fixed = []
        for sf in frames:
            pose = interpolate_pose(observed, sf.frame.timestamp)
            cam = rig.camera(pose)
            dets = tuple(Detection(d.frame_id, d.cls, d.mask_polygon, cam, d.truth_id) for d in sf.frame.detections)
            fixed.append(SimulatedFrame(Frame(sf.frame.frame_id, sf.frame.timestamp, sf.frame.scan, dets), sf.truth_scan, cam))
        frames = tuple(fixed)
    return SimulatedSequence(scene, frames, observed, rig, model)


# ---------------------------------------------------------------------------
# label oracles


def landmarks_in_range(landmarks: Sequence[Landmark], position, tau: Optional[float]) -> List[Landmark]:
    if tau is None:
        return list(landmarks)
    position = np.asarray(position, dtype=float)
    return [lm for lm in landmarks if float(np.linalg.norm(lm.anchor - position)) < tau]


def containment_labels(
    landmarks: Sequence[Landmark],
    points_map: np.ndarray,
    margins: MarginPolicy = MarginPolicy(),
) -> Tuple[np.ndarray, np.ndarray]:
    """Class and id of the margin-expanded landmark containing each map-frame point."""
    n = len(points_map)
    cls = np.zeros(n, np.uint8)
    ids = np.zeros(n, np.uint32)
    for lm in landmarks:
        inside = contains_point(expand_margin(lm, margins), points_map) & (ids == 0)
        cls[inside] = int(lm.cls)
        ids[inside] = lm.instance_id
    return cls, ids


def raycast_label_image(
    landmarks: Sequence[Landmark],
    pose: Pose,
    model: SphericalCameraModel,
    margins: MarginPolicy = MarginPolicy(),
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pixel class and id of the nearest expanded landmark hit by the pixel-centre ray."""
    expanded = [expand_margin(lm, margins) for lm in landmarks]
    dirs = pose.rotate(model.pixel_center_directions().reshape(-1, 3))
    origins = np.broadcast_to(pose.translation, dirs.shape).copy()
    _, hit = raycast(origins, dirs, expanded, (), None, np.inf)
    cls = np.zeros(len(dirs), np.uint8)
    ids = np.zeros(len(dirs), np.uint32)
    for k, lm in enumerate(expanded, start=1):
        m = hit == k
        cls[m] = int(lm.cls)
        ids[m] = lm.instance_id
    return cls.reshape(model.shape), ids.reshape(model.shape)


# ---------------------------------------------------------------------------
# fitting oracles


def cylinder_observations(
    cyl: Cylinder,
    camera_centers: np.ndarray,
    rng: np.random.Generator,
    num_points: int = 200,
    range_sigma: float = 0.0,
    rays_per_view: int = 24,
):
    """Surface points seen from the given centres plus exact silhouette rays.

    Silhouette rays are the two tangent generator lines of every view and,
    where visible, rays grazing the top and bottom rims.  Returns
    ``(points, ray_origins, ray_directions)``.
    """
    a = cyl.axis
    e1, e2 = orthonormal_basis(a)
    pts = []
    per_view = int(math.ceil(num_points / len(camera_centers)))
    for c in camera_centers:
        rel = c - cyl.base_point
        rel_perp = rel - (rel @ a) * a
        dist = np.linalg.norm(rel_perp)
        phi_c = math.atan2(rel_perp @ e2, rel_perp @ e1)
        half = math.acos(min(cyl.radius / dist, 1.0))
        phis = phi_c + rng.uniform(-half, half, per_view) * 0.95
        hs = rng.uniform(0.02, 0.98, per_view) * cyl.length
        p = cyl.base_point + np.outer(hs, a) + cyl.radius * (np.outer(np.cos(phis), e1) + np.outer(np.sin(phis), e2))
        if range_sigma > 0:
            view = p - c
            view /= np.linalg.norm(view, axis=1, keepdims=True)
            p = p + view * rng.normal(0.0, range_sigma, (len(p), 1))
        pts.append(p)
    points = np.vstack(pts)[:num_points] if num_points > 0 else np.zeros((0, 3))

    origins, dirs = [], []
    n_side = max(rays_per_view // 2, 1)
    for c in camera_centers:
        rel = c - cyl.base_point
        axial_c = rel @ a
        rel_perp = rel - axial_c * a
        dist = np.linalg.norm(rel_perp)
        phi_c = math.atan2(rel_perp @ e2, rel_perp @ e1)
        half = math.acos(cyl.radius / dist)
        for sgn in (-1.0, 1.0):
            phi = phi_c + sgn * half
            n = math.cos(phi) * e1 + math.sin(phi) * e2
            for h in np.linspace(0.1, 0.9, max(n_side // 2, 1)) * cyl.length:
                target = cyl.base_point + h * a + cyl.radius * n
                d = target - c
                origins.append(c)
                dirs.append(d / np.linalg.norm(d))
        # rims: rays through rim points on the near side graze the solid's outline
        for h, outward in ((0.0, -1.0), (cyl.length, 1.0)):
            if outward * (axial_c - h) > 0:
                continue  # cap faces the camera: its far arc is the outline instead
            for phi in phi_c + np.linspace(-0.8, 0.8, 5) * half:
                n = math.cos(phi) * e1 + math.sin(phi) * e2
                target = cyl.base_point + h * a + cyl.radius * n
                d = target - c
                origins.append(c)
                dirs.append(d / np.linalg.norm(d))
    return points, np.array(origins), np.array(dirs)


def random_cylinder_problem(rng: np.random.Generator, radius_range=(0.05, 0.30), max_tilt=math.radians(5.0),
                            num_views: int = 3, num_points: int = 200, range_sigma: float = 0.02):
    """A random cylinder and views around it; returns ``(cylinder, points, origins, dirs)``."""
    radius = float(rng.uniform(*radius_range))
    length = float(rng.uniform(2.0, 5.0))
    tilt = float(rng.uniform(0, max_tilt))
    az = float(rng.uniform(0, 2 * math.pi))
    axis = np.array([math.sin(tilt) * math.cos(az), math.sin(tilt) * math.sin(az), math.cos(tilt)])
    base = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), 0.0])
    cyl = Cylinder(base, axis, length, radius)
    heading = rng.uniform(0, 2 * math.pi)
    centers = []
    for k in range(num_views):
        ang = heading + (k - (num_views - 1) / 2) * math.radians(25.0)
        dist = rng.uniform(6.0, 15.0)
        centers.append(cyl.center + dist * np.array([math.cos(ang), math.sin(ang), 0.0])
                       + np.array([0, 0, rng.uniform(-0.3, 0.3) * length]))
    centers = np.array(centers)
    points, o, d = cylinder_observations(cyl, centers, rng, num_points, range_sigma)
    return cyl, points, o, d


def sign_views(plane: Plane, rng: np.random.Generator, num_views: int = 3, distance=(6.0, 14.0),
               obliqueness=math.radians(35.0), rig: CameraRig = CameraRig()) -> List[PinholeCamera]:
    """Cameras in front of a sign at oblique angles, looking at it."""
    cams = []
    for k in range(num_views):
        ang = plane.yaw + (k - (num_views - 1) / 2) * obliqueness + rng.uniform(-0.1, 0.1)
        dist = rng.uniform(*distance)
        pos = plane.center + dist * np.array([math.cos(ang), math.sin(ang), 0.0])
        pos[2] = plane.center[2] - rng.uniform(0.3, 1.0)
        look = plane.center - pos
        yaw = math.atan2(look[1], look[0])
        lidar = Pose(0.0, quat_from_yaw(yaw), pos - Pose(0.0, quat_from_yaw(yaw), np.zeros(3)).rotate(rig.mount.translation))
        cams.append(rig.camera(lidar))
    return cams


def random_sign_problem(rng: np.random.Generator, family: str, num_views: int = 3, num_points: int = 150,
                        range_sigma: float = 0.02, mask_jitter: float = 0.5):
    """A random sign of ``family`` with simulated detections and face points.

    Returns ``(plane, detections, points)``.
    """
    size = float(rng.uniform(0.5, 0.9))
    if family == "rectangle":
        shape = Rectangle(size, size * float(rng.uniform(0.6, 1.4)))
    elif family == "circle":
        shape = Circle(0.5 * size)
    elif family == "triangle":
        shape = Triangle(size, bool(rng.random() < 0.5))
    else:
        raise ValueError(f"unknown sign family {family!r}")
    center = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(1.8, 2.8)])
    plane = Plane.upright(center, float(rng.uniform(0, 2 * math.pi)), shape)
    lm = Landmark(1, SemanticClass.TRAFFIC_SIGN, plane)
    scene = Scene((lm,), Trajectory([Pose.identity(0.0), Pose.identity(1.0)]), (), np.zeros(1))
    dets, points = [], []
    rig = CameraRig()
    outline = shape_outline(shape, 64)
    for k, cam in enumerate(sign_views(plane, rng, num_views, rig=rig)):
        lidar_pose = cam.pose @ rig.mount.inverse()
        noise = NoiseSpec(mask_jitter=mask_jitter)
        dets.extend(simulate_camera(scene, lidar_pose, rig, noise, rng, frame_id=k))
        # uniform face samples by rejection inside the outline's bounding box
        lo, hi = outline.min(axis=0), outline.max(axis=0)
        ab = rng.uniform(lo, hi, (4 * num_points, 2))
        ab = ab[shape_signed_distance(shape, ab) <= 0][: int(math.ceil(num_points / num_views))]
        p = plane.from_local(ab)
        if range_sigma > 0:
            view = p - cam.center
            view /= np.linalg.norm(view, axis=1, keepdims=True)
            p = p + view * rng.normal(0.0, range_sigma, (len(p), 1))
        points.append(p)
    return plane, dets, np.vstack(points)
