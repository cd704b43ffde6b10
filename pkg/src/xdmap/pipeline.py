"""End-to-end runs on simulated sequences: map, label, baselines, evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .baselines import BaselineResult, xd_b1_lift, xd_b2_project
from .config import PipelineConfig
from .frustum import LabeledPointCloud, build_frusta, label_points
from .geometry import SphericalCameraModel, TimedPoints, Trajectory, frame_indices_for_rate, interpolate_pose, motion_compensate
from .mapping import Frame, ParametricMap, build_map
from .metrics import ConfusionAccumulator, PanopticAccumulator, report_row
from .primitives import Landmark
from .render import LabelImage, RenderStages, derive_panoptic, render_map
from .synthetic import SimulatedSequence, containment_labels, landmarks_in_range, simulate_sequence


def reference_points(frame: Frame, trajectory: Trajectory, motion_compensation: bool) -> TimedPoints:
    """Scan points in the sensor frame at the sweep start, compensated or raw."""
    scan = frame.scan
    if not motion_compensation:
        return scan
    pos = motion_compensate(scan, trajectory, frame.timestamp)
    return TimedPoints.from_positions(pos, scan.timestamps)


def mapping_frames(seq: SimulatedSequence, sampling_hz: float) -> List[int]:
    return [int(k) for k in frame_indices_for_rate(len(seq.frames), sampling_hz)]


def run_mapping(seq: SimulatedSequence, cfg: PipelineConfig, workers: int = 1) -> ParametricMap:
    frames = [seq.frames[k].frame for k in mapping_frames(seq, cfg.sampling_hz)]
    return build_map(frames, seq.trajectory, cfg.solver, cfg.motion_compensation, workers)


@dataclass(eq=False)
class FrameLabels:
    image: LabelImage
    cloud: LabeledPointCloud
    stages: RenderStages
    expanded: List[Landmark]


def label_frame(landmarks: Sequence[Landmark], frame: Frame, trajectory: Trajectory,
                cfg: PipelineConfig) -> FrameLabels:
    model = cfg.lidar.model()
    pose = interpolate_pose(trajectory, frame.timestamp)
    stages, expanded = render_map(landmarks, pose, model, cfg.render, cfg.margins)
    frusta = build_frusta(expanded, stages, pose, model)
    pts = reference_points(frame, trajectory, cfg.motion_compensation)
    cloud = label_points(pts, stages.image, frusta, model)
    return FrameLabels(stages.image, cloud, stages, expanded)


def run_baseline(name: str, frame: Frame, trajectory: Trajectory, cfg: PipelineConfig) -> BaselineResult:
    model = cfg.lidar.model()
    pose = interpolate_pose(trajectory, frame.timestamp)
    pts = reference_points(frame, trajectory, cfg.motion_compensation)
    dets = frame.detections
    yaw = cfg.camera.rig().axis_yaw
    if name == "b1":
        return xd_b1_lift(dets, pts, pose, model, cfg.fov, camera_yaw=yaw)
    if name == "b2":
        return xd_b2_project(dets, pts, pose, model, cfg.fov, camera_yaw=yaw)
    raise ValueError(f"unknown baseline {name!r}")


# ---------------------------------------------------------------------------
# truth


@dataclass(eq=False)
class FrameTruth:
    classes: np.ndarray  # per scan point
    ids: np.ndarray
    image: LabelImage  # nearest return per pixel; pixels without a return are ignore


def truth_from_points(positions: np.ndarray, classes: np.ndarray, ids: np.ndarray,
                      model: SphericalCameraModel) -> FrameTruth:
    """``positions`` are true-motion-compensated points in the sweep-start sensor frame."""
    uv, rng, valid = model.project(positions)
    rows, cols = model.pixel_indices(uv)
    H, W = model.shape
    sem = np.zeros((H, W), np.uint8)
    inst = np.zeros((H, W), np.uint32)
    has = np.zeros((H, W), bool)
    # nearest return wins: write far to near
    order = np.flatnonzero(valid)[np.argsort(-rng[valid], kind="stable")]
    sem[rows[order], cols[order]] = classes[order]
    inst[rows[order], cols[order]] = ids[order]
    has[rows[order], cols[order]] = True
    image = LabelImage(sem, inst, ~has, np.zeros((H, W), np.float32))
    return FrameTruth(np.asarray(classes, np.uint8), np.asarray(ids, np.uint32), image)


def frame_truth(seq: SimulatedSequence, k: int) -> FrameTruth:
    scan = seq.frames[k].truth_scan
    return truth_from_points(seq.truth_compensated(k), scan.truth_classes, scan.truth_ids, seq.model)


def prediction_as_evaluated(image: LabelImage) -> LabelImage:
    """Prediction-side ignore carries no label, so it counts as background."""
    return LabelImage(image.semantic, image.instance, np.zeros_like(image.ignore), image.depth_hint)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class MethodScores:
    conf2d: ConfusionAccumulator = field(default_factory=ConfusionAccumulator)
    pan2d: PanopticAccumulator = field(default_factory=PanopticAccumulator)
    conf3d: ConfusionAccumulator = field(default_factory=ConfusionAccumulator)
    tp3d: int = 0
    fn3d: int = 0
    fp3d: int = 0

    def add(self, image: LabelImage, cloud: LabeledPointCloud, truth: FrameTruth, restrict: Optional[np.ndarray] = None,
            restrict_points: Optional[np.ndarray] = None):
        pred = prediction_as_evaluated(image)
        ignore2d = truth.image.ignore if restrict is None else truth.image.ignore | restrict
        self.conf2d.update(pred.semantic, truth.image.semantic, ignore2d)
        ref_pan = derive_panoptic(LabelImage(truth.image.semantic, np.where(ignore2d, 0, truth.image.instance),
                                             ignore2d, truth.image.depth_hint))
        pred_pan = derive_panoptic(pred)
        self.pan2d.update(pred_pan, ref_pan)
        keep = np.ones(len(truth.classes), bool) if restrict_points is None else ~restrict_points
        self.conf3d.update(cloud.semantic[keep], truth.classes[keep])
        obj = truth.classes[keep] > 0
        lab = cloud.semantic[keep] > 0
        same = cloud.semantic[keep] == truth.classes[keep]
        self.tp3d += int(np.sum(obj & same))
        self.fn3d += int(np.sum(obj & ~same))
        self.fp3d += int(np.sum(lab & ~same))

    def merge(self, other: "MethodScores") -> "MethodScores":
        return MethodScores(self.conf2d.merge(other.conf2d), self.pan2d.merge(other.pan2d),
                            self.conf3d.merge(other.conf3d), self.tp3d + other.tp3d,
                            self.fn3d + other.fn3d, self.fp3d + other.fp3d)

    @property
    def recall3d(self) -> float:
        return self.tp3d / max(self.tp3d + self.fn3d, 1)

    @property
    def precision3d(self) -> float:
        return self.tp3d / max(self.tp3d + self.fp3d, 1)

    def rows(self) -> Tuple[Dict[str, float], Dict[str, float]]:
        return report_row(self.conf2d.result(), self.pan2d.result()), report_row(self.conf3d.result())


@dataclass
class Evaluation:
    scores: Dict[str, MethodScores]
    map: ParametricMap
    frames: List[int]


def evaluate_sequence(seq: SimulatedSequence, cfg: PipelineConfig, methods=("xdmap", "b2", "b1"),
                      frames: Optional[Sequence[int]] = None, workers: int = 1,
                      map_: Optional[ParametricMap] = None) -> Evaluation:
    pmap = map_ if map_ is not None else (run_mapping(seq, cfg, workers) if "xdmap" in methods else ParametricMap([]))
    ks = list(range(0, len(seq.frames), cfg.eval_stride)) if frames is None else list(frames)
    scores = {m: MethodScores() for m in methods}
    for k in ks:
        truth = frame_truth(seq, k)
        for m in methods:
            if m == "xdmap":
                out = label_frame(pmap.landmarks, seq.frames[k].frame, seq.trajectory, cfg)
                scores[m].add(out.image, out.cloud, truth)
            else:
                res = run_baseline(m, seq.frames[k].frame, seq.trajectory, cfg)
                scores[m].add(res.image, res.cloud, truth)
    return Evaluation(scores, pmap, ks)


@dataclass
class PointScores:
    tp: int = 0
    fn: int = 0
    fp: int = 0

    @property
    def recall(self) -> float:
        return self.tp / max(self.tp + self.fn, 1)

    @property
    def precision(self) -> float:
        return self.tp / max(self.tp + self.fp, 1)


def containment_scores(seq: SimulatedSequence, cfg: PipelineConfig, pmap: ParametricMap,
                       frames: Optional[Sequence[int]] = None) -> PointScores:
    """XD-MAP point labels against the containment oracle.

    Object points are those inside a margin-expanded true landmark within
    ``range_threshold`` of the true sensor position, restricted to points
    that project into the range image (nothing else can be labeled).
    """
    model = cfg.lidar.model()
    ks = list(range(0, len(seq.frames), cfg.eval_stride)) if frames is None else list(frames)
    out = PointScores()
    for k in ks:
        sf = seq.frames[k]
        true_pose = interpolate_pose(seq.scene.trajectory, sf.frame.timestamp)
        pts_map = true_pose.apply(seq.truth_compensated(k))
        near = landmarks_in_range(seq.scene.landmarks, true_pose.translation, cfg.range_threshold)
        ref, _ = containment_labels(near, pts_map, cfg.margins)
        res = label_frame(pmap.landmarks, sf.frame, seq.trajectory, cfg)
        _, _, valid = model.project(res.cloud.positions)
        ref[~valid] = 0
        pred = res.cloud.semantic
        obj = ref > 0
        out.tp += int(np.sum(obj & (pred == ref)))
        out.fn += int(np.sum(obj & (pred != ref)))
        out.fp += int(np.sum((pred > 0) & (pred != ref)))
    return out


def simulate_from_config(cfg: PipelineConfig) -> SimulatedSequence:
    return simulate_sequence(cfg.scene, cfg.noise, cfg.lidar.model(), cfg.camera.rig())
