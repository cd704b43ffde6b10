"""Point-wise labels from rendered segments and per-landmark depth intervals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .geometry import Pose, SphericalCameraModel, TimedPoints
from .primitives import Landmark, SemanticClass, hull_keypoints, signed_distance
from .render import LabelImage, RenderStages

DEPTH_PADDING = 0.10


@dataclass(eq=False)
class LabeledPointCloud:
    positions: np.ndarray  # (N, 3) sensor frame
    ranges: np.ndarray
    timestamps: np.ndarray
    semantic: np.ndarray  # uint8
    instance: np.ndarray  # uint32
    ignore: np.ndarray  # bool

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        n = len(self.positions)
        self.ranges = np.asarray(self.ranges, dtype=float).reshape(n)
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(n)
        self.semantic = np.asarray(self.semantic, dtype=np.uint8).reshape(n)
        self.instance = np.asarray(self.instance, dtype=np.uint32).reshape(n)
        self.ignore = np.asarray(self.ignore, dtype=bool).reshape(n)
        if np.any(self.ranges < 0):
            raise ValueError("ranges must be nonnegative")
        if np.any((self.instance != 0) & (self.semantic == SemanticClass.BACKGROUND)):
            raise ValueError("instance points must carry an object class")

    @classmethod
    def unlabeled(cls, positions, timestamps=None, ranges=None) -> "LabeledPointCloud":
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        n = len(positions)
        ranges = np.linalg.norm(positions, axis=1) if ranges is None else ranges
        timestamps = np.zeros(n) if timestamps is None else timestamps
        return cls(positions, ranges, timestamps, np.zeros(n), np.zeros(n), np.zeros(n, bool))

    def __len__(self):
        return len(self.positions)

    def __eq__(self, other):
        if not isinstance(other, LabeledPointCloud):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("positions", "ranges", "timestamps", "semantic", "instance", "ignore")
        )


@dataclass(frozen=True, eq=False)
class Frustum:
    instance_id: int
    cls: SemanticClass
    pixel_region: np.ndarray  # (H, W) bool, pre-dilation
    depth_interval: Tuple[float, float]

    def __post_init__(self):
        near, far = self.depth_interval
        if not 0 < near < far:
            raise ValueError(f"bad depth interval {self.depth_interval}")


def landmark_depth_interval(
    landmark: Landmark,
    ego_pose: Pose,
    model: Optional[SphericalCameraModel] = None,
    padding: float = DEPTH_PADDING,
    samples_per_arc: int = 16,
) -> Optional[Tuple[float, float]]:
    """Range interval covering the landmark, padded outwards.

    The far end is the farthest hull keypoint.  The near end also considers
    the closest point of the solid, which for a cylinder seen from the side
    lies on its mantle rather than on a rim.
    """
    kp = hull_keypoints(landmark, samples_per_arc)
    dists = np.linalg.norm(kp - ego_pose.translation, axis=1)
    if model is not None:
        _, _, valid = model.project(ego_pose.apply_inverse(kp))
        if not np.any(valid):
            return None
    closest = max(float(signed_distance(landmark, ego_pose.translation[None, :])[0]), 0.0)
    near = max(min(float(dists.min()), closest) - padding, 1e-6)
    far = float(dists.max()) + padding
    return near, far


def build_frusta(
    expanded: Sequence[Landmark],
    stages: RenderStages,
    ego_pose: Pose,
    model: SphericalCameraModel,
    padding: float = DEPTH_PADDING,
) -> Dict[int, Frustum]:
    by_id = {lm.instance_id: lm for lm in expanded}
    out = {}
    for i in np.unique(stages.predilation[stages.predilation > 0]):
        lm = by_id[int(i)]
        interval = landmark_depth_interval(lm, ego_pose, None, padding)
        if interval is None:
            continue
        out[int(i)] = Frustum(int(i), lm.cls, stages.predilation == i, interval)
    return out


def label_points(
    points: TimedPoints,
    image: LabelImage,
    frusta: Dict[int, Frustum],
    model: SphericalCameraModel = SphericalCameraModel(),
) -> LabeledPointCloud:
    """Label points (reference sensor frame) falling inside a landmark frustum.

    Membership uses the dilated raster of ``image``; the range must lie in
    the instance's closed depth interval.
    """
    n = len(points)
    semantic = np.zeros(n, np.uint8)
    instance = np.zeros(n, np.uint32)
    ignore = np.zeros(n, bool)
    if n:
        uv, rng, valid = model.project(points.positions)
        rows, cols = model.pixel_indices(uv)
        rows, cols = rows[valid], cols[valid]
        idx = np.flatnonzero(valid)
        inst = image.instance[rows, cols].astype(np.int64)
        ignore[idx] = image.ignore[rows, cols]
        near = np.full(len(idx), np.inf)
        far = np.full(len(idx), -np.inf)
        for i, fr in frusta.items():
            m = inst == i
            near[m], far[m] = fr.depth_interval
        r = rng[idx]
        hit = (inst > 0) & (r >= near) & (r <= far)
        instance[idx[hit]] = inst[hit]
        semantic[idx[hit]] = image.semantic[rows[hit], cols[hit]]
    return LabeledPointCloud(points.positions, points.ranges, points.timestamps, semantic, instance, ignore)
