"""Directory layout for a simulated (or recorded) drive.

::

    manifest.json
    <seq>/trajectory.txt              poses the pipeline uses
    <seq>/scans/NNNNNN.cloud          raw scans, sensor frame, labels empty
    <seq>/detections/NNNNNN.json      2D masks with their cameras
    <seq>/truth/trajectory.txt        true poses
    <seq>/truth/map.jsonl             true landmarks
    <seq>/truth/NNNNNN.cloud          true labels, positions compensated with the true motion

Everything under ``truth/`` is a sidecar for evaluation only; nothing in
the mapping or labeling path reads it.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .config import PipelineConfig, config_from_dict, config_to_dict
from .frustum import LabeledPointCloud
from .geometry import TimedPoints, Trajectory
from .io import (
    FormatError,
    detections_from_json,
    detections_to_json,
    read_cloud,
    read_map,
    read_trajectory,
    write_cloud,
    write_map,
    write_trajectory,
)
from .mapping import Frame, ParametricMap
from .synthetic import SimulatedSequence

DATASET_FORMAT = "xdmap-dataset"
DATASET_VERSION = 1


def frame_name(k: int) -> str:
    return f"{k:06d}"


@dataclass
class FrameEntry:
    frame_id: int
    timestamp: float
    scan: str
    detections: str
    truth: Optional[str] = None


@dataclass
class SequenceEntry:
    name: str
    split: str
    extent_x: List[float]  # along-road extent, used to keep splits geographically apart
    trajectory: str
    frames: List[FrameEntry]
    truth_trajectory: Optional[str] = None
    truth_map: Optional[str] = None


@dataclass
class DatasetManifest:
    sequences: List[SequenceEntry]
    config: Dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        seqs = []
        for s in self.sequences:
            d = dict(vars(s))
            d["frames"] = [dict(vars(f)) for f in s.frames]
            seqs.append(d)
        data = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "config": self.config, "sequences": seqs}
        return json.dumps(data, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str, path=None) -> "DatasetManifest":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"malformed manifest: {exc.msg}", exc.pos, path) from exc
        if data.get("format") != DATASET_FORMAT:
            raise FormatError("not a dataset manifest", 0, path)
        if data.get("version") != DATASET_VERSION:
            raise FormatError(f"unsupported manifest version {data.get('version')!r}", 0, path)
        try:
            seqs = []
            for s in data["sequences"]:
                frames = [FrameEntry(**f) for f in s["frames"]]
                seqs.append(SequenceEntry(**{**s, "frames": frames}))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"invalid manifest entry: {exc}", 0, path) from exc
        return cls(seqs, data.get("config", {}))


def write_sequence(seq: SimulatedSequence, cfg: PipelineConfig, root: os.PathLike, name: str = "seq000",
                   split: str = "eval") -> DatasetManifest:
    root = Path(root)
    base = root / name
    for sub in ("scans", "detections", "truth"):
        (base / sub).mkdir(parents=True, exist_ok=True)
    write_trajectory(seq.trajectory, base / "trajectory.txt")
    write_trajectory(seq.scene.trajectory, base / "truth" / "trajectory.txt")
    write_map(ParametricMap(list(seq.scene.landmarks)), base / "truth" / "map.jsonl")
    entries = []
    for k, sf in enumerate(seq.frames):
        n = frame_name(k)
        scan = sf.frame.scan
        write_cloud(LabeledPointCloud.unlabeled(scan.positions, scan.timestamps, scan.ranges), base / "scans" / f"{n}.cloud")
        (base / "detections" / f"{n}.json").write_text(detections_to_json(sf.frame.detections))
        truth_pos = seq.truth_compensated(k)
        ts = sf.truth_scan
        write_cloud(
            LabeledPointCloud(truth_pos, np.linalg.norm(truth_pos, axis=1), scan.timestamps,
                              ts.truth_classes, ts.truth_ids, np.zeros(len(scan), bool)),
            base / "truth" / f"{n}.cloud",
        )
        entries.append(FrameEntry(int(sf.frame.frame_id), float(sf.frame.timestamp),
                                  f"{name}/scans/{n}.cloud", f"{name}/detections/{n}.json", f"{name}/truth/{n}.cloud"))
    xs = np.array([p.translation[0] for p in seq.scene.trajectory.poses])
    entry = SequenceEntry(name, split, [float(xs.min()), float(xs.max())], f"{name}/trajectory.txt", entries,
                          f"{name}/truth/trajectory.txt", f"{name}/truth/map.jsonl")
    manifest = DatasetManifest([entry], config_to_dict(cfg))
    (root / "manifest.json").write_text(manifest.to_json())
    return manifest


@dataclass
class LoadedSequence:
    root: Path
    entry: SequenceEntry
    trajectory: Trajectory

    def frame(self, k: int) -> Frame:
        fe = self.entry.frames[k]
        cloud = read_cloud(self.root / fe.scan)
        dets = detections_from_json((self.root / fe.detections).read_text(), self.root / fe.detections)
        return Frame(fe.frame_id, fe.timestamp, TimedPoints(cloud.positions, cloud.timestamps, cloud.ranges), tuple(dets))

    def truth_cloud(self, k: int) -> LabeledPointCloud:
        fe = self.entry.frames[k]
        if fe.truth is None:
            raise FileNotFoundError(f"frame {fe.frame_id} has no truth sidecar")
        return read_cloud(self.root / fe.truth)

    def truth_map(self) -> ParametricMap:
        if self.entry.truth_map is None:
            raise FileNotFoundError("sequence has no truth map")
        return read_map(self.root / self.entry.truth_map)

    def __len__(self):
        return len(self.entry.frames)


def load_manifest(root: os.PathLike) -> DatasetManifest:
    path = Path(root) / "manifest.json"
    return DatasetManifest.from_json(path.read_text(), path)


def load_sequence(root: os.PathLike, name: Optional[str] = None) -> LoadedSequence:
    root = Path(root)
    manifest = load_manifest(root)
    if not manifest.sequences:
        raise FormatError("manifest lists no sequences", 0, root / "manifest.json")
    entry = manifest.sequences[0] if name is None else next((s for s in manifest.sequences if s.name == name), None)
    if entry is None:
        raise KeyError(f"no sequence named {name!r}")
    return LoadedSequence(root, entry, read_trajectory(root / entry.trajectory))


def dataset_config(root: os.PathLike) -> PipelineConfig:
    return config_from_dict(load_manifest(root).config)
