"""Single-shot camera-to-LiDAR label transfer baselines.

B1 lifts each mask contour to one representative depth and reprojects it
into the range image, keeping the 2D shape.  B2 hands the mask label to
every LiDAR point inside it and takes the convex hull of their range-image
coordinates, keeping the measured depth.  Both only see the camera's field
of view; everything else is marked ignore.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .frustum import LabeledPointCloud
from .geometry import Pose, SphericalCameraModel, TimedPoints
from .mapping import Detection, extract_element_cloud
from .raster import convex_hull, fill_convex_inclusive, fill_polygon, points_in_polygon, unwrap_columns
from .render import LabelImage

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FovPolicy:
    supervised_azimuth_span: float = math.radians(100.0)

    def __post_init__(self):
        if not 0 < self.supervised_azimuth_span <= 2 * math.pi:
            raise ValueError("azimuth span must be in (0, 2*pi]")


@dataclass
class BaselineResult:
    image: LabelImage
    cloud: LabeledPointCloud
    depths: List[float] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)


def nearest_rank_percentile(values, percent: float = 30.0) -> float:
    """The k-th smallest value with ``k = ceil(percent / 100 * n)`` (k >= 1)."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    n = len(v)
    if n == 0:
        raise ValueError("percentile of an empty set")
    if not 0 < percent <= 100:
        raise ValueError("percent must be in (0, 100]")
    k = max(1, math.ceil(percent * n / 100.0 - 1e-9))
    return float(v[k - 1])


def _wrap(a):
    return np.mod(a + math.pi, 2 * math.pi) - math.pi


def fov_ignore_columns(model: SphericalCameraModel, fov: FovPolicy, camera_yaw: float) -> np.ndarray:
    az = model.azimuth_range[0] + (np.arange(model.width) + 0.5) * model.azimuth_resolution
    return np.abs(_wrap(az - camera_yaw)) > fov.supervised_azimuth_span / 2


def apply_fov_ignore(target, fov: FovPolicy, camera_yaw: float, model: SphericalCameraModel = SphericalCameraModel()):
    """Mark pixels or points outside the supervised azimuth span as ignore.

    Labels there are cleared (ignore never carries an instance).
    """
    if isinstance(target, LabelImage):
        cols = fov_ignore_columns(model, fov, camera_yaw)
        mask = np.broadcast_to(cols[None, :], target.semantic.shape)
        sem, inst, dep = target.semantic.copy(), target.instance.copy(), target.depth_hint.copy()
        sem[mask], inst[mask], dep[mask] = 0, 0, 0
        return LabelImage(sem, inst, target.ignore | mask, dep)
    if isinstance(target, LabeledPointCloud):
        p = target.positions
        mask = np.abs(_wrap(np.arctan2(p[:, 1], p[:, 0]) - camera_yaw)) > fov.supervised_azimuth_span / 2
        sem, inst = target.semantic.copy(), target.instance.copy()
        sem[mask], inst[mask] = 0, 0
        return LabeledPointCloud(p, target.ranges, target.timestamps, sem, inst, target.ignore | mask)
    raise TypeError(f"cannot apply an FOV policy to {type(target).__name__}")


def _spherical_fill(uv: np.ndarray, model: SphericalCameraModel, convex_inclusive: bool):
    pts = uv.copy()
    if model.full_circle:
        ref = pts[0, 0]
        pts[:, 0] = unwrap_columns(pts[:, 0], model.width, ref)
    if convex_inclusive:
        rows, cols = fill_convex_inclusive(convex_hull(pts), model.height)
    else:
        rows, cols = fill_polygon(pts, model.height)
    if model.full_circle:
        cols = np.mod(cols, model.width)
    else:
        keep = (cols >= 0) & (cols < model.width)
        rows, cols = rows[keep], cols[keep]
    return rows, cols


def _label_cloud_from_image(points: TimedPoints, image: LabelImage, model: SphericalCameraModel) -> LabeledPointCloud:
    n = len(points)
    sem = np.zeros(n, np.uint8)
    inst = np.zeros(n, np.uint32)
    ign = np.zeros(n, bool)
    if n:
        uv, _, valid = model.project(points.positions)
        rows, cols = model.pixel_indices(uv)
        idx = np.flatnonzero(valid)
        sem[idx] = image.semantic[rows[valid], cols[valid]]
        inst[idx] = image.instance[rows[valid], cols[valid]]
        ign[idx] = image.ignore[rows[valid], cols[valid]]
    return LabeledPointCloud(points.positions, points.ranges, points.timestamps, sem, inst, ign)


def _camera_yaw(detections: Sequence[Detection], lidar_pose: Pose, default: float) -> float:
    if not detections:
        return default
    fwd = lidar_pose.inverse().rotate(detections[0].camera.pose.rotate(np.array([0.0, 0.0, 1.0])))
    return math.atan2(fwd[1], fwd[0])


def _paint(entries, model: SphericalCameraModel) -> LabelImage:
    """Far-to-near painting of ``(depth, instance, cls, rows, cols)`` entries."""
    img = LabelImage.empty(model.height, model.width)
    for depth, i, cls, rows, cols in sorted(entries, key=lambda e: (-e[0], -e[1])):
        img.instance[rows, cols] = i
        img.semantic[rows, cols] = int(cls)
        img.depth_hint[rows, cols] = depth
    return img


def xd_b1_lift(
    detections: Sequence[Detection],
    points: TimedPoints,
    lidar_pose: Pose,
    model: SphericalCameraModel = SphericalCameraModel(),
    fov: FovPolicy = FovPolicy(),
    percent: float = 30.0,
    camera_yaw: float = 0.0,
) -> BaselineResult:
    """Shape-preserving lifting.

    ``points`` are in the LiDAR frame of ``lidar_pose``; detections carry
    cameras in the map frame.  3D labels are read off the 2D result.
    """
    scan_map = lidar_pose.apply(points.positions) if len(points) else np.zeros((0, 3))
    entries, depths, skipped = [], [], []
    for k, det in enumerate(detections, start=1):
        inside = extract_element_cloud(det, scan_map)
        if len(inside) == 0:
            skipped.append(f"detection {k}: no LiDAR points in mask")
            continue
        _, z = det.camera.project(inside)
        depth = nearest_rank_percentile(z, percent)
        depths.append(depth)
        cam = det.camera
        c = det.mask_polygon
        ray_cam = np.stack([(c[:, 0] - cam.cx) / cam.fx, (c[:, 1] - cam.cy) / cam.fy, np.ones(len(c))], axis=1)
        contour_map = cam.pose.apply(ray_cam * depth)
        uv, rng, _ = model.project(lidar_pose.apply_inverse(contour_map))
        rows, cols = _spherical_fill(uv, model, convex_inclusive=False)
        if len(rows) == 0:
            skipped.append(f"detection {k}: reprojected contour covers no pixel centre")
            continue
        entries.append((float(np.median(rng)), k, det.cls, rows, cols))
    for msg in skipped:
        log.debug("B1 %s", msg)
    image = apply_fov_ignore(_paint(entries, model), fov, _camera_yaw(detections, lidar_pose, camera_yaw), model)
    cloud = _label_cloud_from_image(points, image, model)
    return BaselineResult(image, cloud, depths, skipped)


def xd_b2_project(
    detections: Sequence[Detection],
    points: TimedPoints,
    lidar_pose: Pose,
    model: SphericalCameraModel = SphericalCameraModel(),
    fov: FovPolicy = FovPolicy(),
    camera_yaw: float = 0.0,
) -> BaselineResult:
    """Depth-preserving projection: masks act as a lookup table for points."""
    n = len(points)
    sem = np.zeros(n, np.uint8)
    inst = np.zeros(n, np.uint32)
    scan_map = lidar_pose.apply(points.positions) if n else np.zeros((0, 3))
    uv_all, rng_all, valid_all = model.project(points.positions) if n else (np.zeros((0, 2)), np.zeros(0), np.zeros(0, bool))
    entries, skipped = [], []
    for k, det in enumerate(detections, start=1):
        uv_cam, depth = det.camera.project(scan_map)
        cand = np.flatnonzero((depth > 1e-6) & (inst == 0))
        inside = cand[points_in_polygon(uv_cam[cand], det.mask_polygon)] if len(cand) else cand
        if len(inside) == 0:
            skipped.append(f"detection {k}: no LiDAR points in mask")
            continue
        sem[inside] = int(det.cls)
        inst[inside] = k
        vis = inside[valid_all[inside]]
        if len(vis) == 0:
            continue
        uv = uv_all[vis]
        if len(vis) >= 3:
            rows, cols = _spherical_fill(uv, model, convex_inclusive=True)
        else:
            rows, cols = np.zeros(0, np.int64), np.zeros(0, np.int64)
        prow, pcol = model.pixel_indices(uv)
        rows = np.concatenate([rows, prow])
        cols = np.concatenate([cols, pcol])
        entries.append((float(np.median(rng_all[vis])), k, det.cls, rows, cols))
    yaw = _camera_yaw(detections, lidar_pose, camera_yaw)
    image = apply_fov_ignore(_paint(entries, model), fov, yaw, model)
    cloud = LabeledPointCloud(points.positions, points.ranges, points.timestamps, sem, inst, np.zeros(n, bool))
    cloud = apply_fov_ignore(cloud, fov, yaw)
    return BaselineResult(image, cloud, [], skipped)
