"""Rendering the parametric map into the LiDAR range image.

Landmarks within range are projected with the spherical model, filled far
to near so that nearer ones overwrite, small leftovers are erased and the
survivors are grown by a pixel margin.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import Pose, SphericalCameraModel
from .primitives import Landmark, MarginPolicy, SemanticClass, expand_margin, hull_keypoints
from .raster import convex_hull, dilate, fill_polygon, unwrap_columns

log = logging.getLogger(__name__)


@dataclass(eq=False)
class LabelImage:
    semantic: np.ndarray  # (H, W) uint8 SemanticClass values
    instance: np.ndarray  # (H, W) uint32, 0 = none
    ignore: np.ndarray  # (H, W) bool
    depth_hint: np.ndarray  # (H, W) float32 metres, 0 = none

    def __post_init__(self):
        self.semantic = np.asarray(self.semantic, dtype=np.uint8)
        self.instance = np.asarray(self.instance, dtype=np.uint32)
        self.ignore = np.asarray(self.ignore, dtype=bool)
        self.depth_hint = np.asarray(self.depth_hint, dtype=np.float32)
        shapes = {a.shape for a in (self.semantic, self.instance, self.ignore, self.depth_hint)}
        if len(shapes) != 1 or self.semantic.ndim != 2:
            raise ValueError(f"label channels must share one 2D shape, got {shapes}")
        if np.any((self.instance != 0) & (self.semantic == SemanticClass.BACKGROUND)):
            raise ValueError("instance pixels must carry an object class")
        if np.any(self.ignore & (self.instance != 0)):
            raise ValueError("ignore pixels cannot carry an instance")

    @classmethod
    def empty(cls, height: int, width: int) -> "LabelImage":
        return cls(
            np.zeros((height, width), np.uint8),
            np.zeros((height, width), np.uint32),
            np.zeros((height, width), bool),
            np.zeros((height, width), np.float32),
        )

    @property
    def height(self) -> int:
        return self.semantic.shape[0]

    @property
    def width(self) -> int:
        return self.semantic.shape[1]

    def __eq__(self, other):
        if not isinstance(other, LabelImage):
            return NotImplemented
        return (
            np.array_equal(self.semantic, other.semantic)
            and np.array_equal(self.instance, other.instance)
            and np.array_equal(self.ignore, other.ignore)
            and np.array_equal(self.depth_hint.view(np.uint32), other.depth_hint.view(np.uint32))
        )


@dataclass(frozen=True)
class RenderConfig:
    range_threshold: float = 50.0
    min_segment_pixels: int = 4
    dilation: int = 1
    roi: Optional[Tuple[int, int, int, int]] = None  # (col0, row0, col1, row1), exclusive ends
    samples_per_arc: int = 16

    def __post_init__(self):
        if self.range_threshold <= 0:
            raise ValueError("range threshold must be positive")
        if self.min_segment_pixels < 1:
            raise ValueError("min_segment_pixels must be >= 1")
        if self.dilation < 0:
            raise ValueError("dilation must be nonnegative")


@dataclass(eq=False)
class RenderStages:
    """Intermediate rasters, kept for diagnostics and property checks."""

    prefilter: np.ndarray  # instance ids after painting, before size filtering
    predilation: np.ndarray  # after size filtering
    image: LabelImage
    order: List[int] = field(default_factory=list)  # instance ids in paint order
    distances: Dict[int, float] = field(default_factory=dict)


def select_landmarks(landmarks: Sequence[Landmark], ego_pose: Pose, tau: float) -> List[Landmark]:
    """Landmarks whose anchor is strictly closer than ``tau`` to the ego position."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    out = []
    for lm in landmarks:
        if float(np.linalg.norm(lm.anchor - ego_pose.translation)) < tau:
            out.append(lm)
    return out


def _in_roi(uv: np.ndarray, valid: np.ndarray, model: SphericalCameraModel, roi) -> bool:
    if roi is None:
        c0, r0, c1, r1 = 0, 0, model.width, model.height
    else:
        c0, r0, c1, r1 = roi
    inside = valid & (uv[:, 0] >= c0) & (uv[:, 0] < c1) & (uv[:, 1] >= r0) & (uv[:, 1] < r1)
    return bool(np.any(inside))


def landmark_footprint(
    landmark: Landmark,
    ego_pose: Pose,
    model: SphericalCameraModel,
    config: RenderConfig = RenderConfig(),
) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Pixels ``(rows, cols)`` covered by the projected hull, or None if not retained."""
    kp = ego_pose.apply_inverse(hull_keypoints(landmark, config.samples_per_arc))
    if np.any(np.linalg.norm(kp, axis=1) < 1e-9):
        return None
    uv, _, valid = model.project(kp)
    if not _in_roi(uv, valid, model, config.roi):
        return None
    anchor = ego_pose.apply_inverse(landmark.anchor)
    if np.linalg.norm(anchor) > 0:
        ref = model.project(anchor[None, :])[0][0, 0]
    else:
        ref = uv[0, 0]
    pts = uv.copy()
    if model.full_circle:
        pts[:, 0] = unwrap_columns(pts[:, 0], model.width, ref)
        if np.ptp(pts[:, 0]) >= model.width / 2:
            log.debug("landmark %d surrounds the sensor; skipped", landmark.instance_id)
            return None
    hull = convex_hull(pts)
    rows, cols = fill_polygon(hull, model.height)
    if model.full_circle:
        cols = np.mod(cols, model.width)
    else:
        keep = (cols >= 0) & (cols < model.width)
        rows, cols = rows[keep], cols[keep]
    return rows, cols


def render_stages(
    landmarks: Sequence[Landmark],
    ego_pose: Pose,
    model: SphericalCameraModel = SphericalCameraModel(),
    config: RenderConfig = RenderConfig(),
) -> RenderStages:
    """Painter's-algorithm rendering with every intermediate raster."""
    H, W = model.height, model.width
    by_id = {lm.instance_id: lm for lm in landmarks}
    if len(by_id) != len(landmarks):
        raise ValueError("instance ids must be unique")
    dist = {lm.instance_id: float(np.linalg.norm(lm.anchor - ego_pose.translation)) for lm in landmarks}
    # far to near; equal distances paint the lower id last
    order = sorted(by_id, key=lambda i: (-dist[i], -i))
    ids = np.zeros((H, W), dtype=np.uint32)
    painted = []
    for i in order:
        fp = landmark_footprint(by_id[i], ego_pose, model, config)
        if fp is None:
            continue
        ids[fp] = i
        painted.append(i)
    prefilter = ids.copy()

    present, counts = np.unique(ids[ids > 0], return_counts=True)
    for i, c in zip(present, counts):
        if c < config.min_segment_pixels:
            ids[ids == i] = 0
    predilation = ids.copy()

    final = predilation.copy()
    if config.dilation > 0:
        background = predilation == 0
        for i in sorted(np.unique(predilation[predilation > 0]), key=lambda i: (dist[int(i)], int(i))):
            grown = dilate(predilation == i, config.dilation, wrap_columns=model.full_circle)
            claim = grown & background & (final == 0)
            final[claim] = i

    semantic = np.zeros((H, W), dtype=np.uint8)
    depth = np.zeros((H, W), dtype=np.float32)
    for i in np.unique(final[final > 0]):
        m = final == i
        semantic[m] = int(by_id[int(i)].cls)
        depth[m] = dist[int(i)]
    image = LabelImage(semantic, final, np.zeros((H, W), bool), depth)
    return RenderStages(prefilter, predilation, image, painted, dist)


def render_labels(
    landmarks: Sequence[Landmark],
    ego_pose: Pose,
    model: SphericalCameraModel = SphericalCameraModel(),
    config: RenderConfig = RenderConfig(),
) -> LabelImage:
    return render_stages(landmarks, ego_pose, model, config).image


def render_map(
    landmarks: Sequence[Landmark],
    ego_pose: Pose,
    model: SphericalCameraModel = SphericalCameraModel(),
    config: RenderConfig = RenderConfig(),
    margins: MarginPolicy = MarginPolicy(),
) -> Tuple[RenderStages, List[Landmark]]:
    """Select by range, expand margins and render; returns stages and the expanded set."""
    selected = select_landmarks(landmarks, ego_pose, config.range_threshold)
    expanded = [lm if lm.expanded else expand_margin(lm, margins) for lm in selected]
    return render_stages(expanded, ego_pose, model, config), expanded


# ---------------------------------------------------------------------------
# derived task labels


def derive_semantic(image: LabelImage) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pixel classes and the unchanged ignore mask."""
    return image.semantic.copy(), image.ignore.copy()


@dataclass(frozen=True)
class Segment:
    segment_id: int
    cls: SemanticClass
    area: int


@dataclass(eq=False)
class PanopticImage:
    """Segment ids per pixel (0 = the background stuff region) plus classes."""

    ids: np.ndarray
    classes: Dict[int, int]
    ignore: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.ignore = np.asarray(self.ignore, dtype=bool)
        if self.ids.shape != self.ignore.shape:
            raise ValueError("ids and ignore must have the same shape")
        self.classes = {int(k): int(v) for k, v in self.classes.items()}
        self.classes.setdefault(0, int(SemanticClass.BACKGROUND))

    def segments(self) -> List[Segment]:
        valid = ~self.ignore
        ids, counts = np.unique(self.ids[valid], return_counts=True)
        return [Segment(int(i), SemanticClass(self.classes[int(i)]), int(c)) for i, c in zip(ids, counts)]


def derive_panoptic(image: LabelImage) -> PanopticImage:
    """One thing segment per instance id, background as the single stuff segment."""
    ids = image.instance.astype(np.int64)
    classes = {0: int(SemanticClass.BACKGROUND)}
    for i in np.unique(ids[ids > 0]):
        classes[int(i)] = int(image.semantic[ids == i][0])
    return PanopticImage(ids, classes, image.ignore.copy())
