"""On-disk formats.

* map: JSON lines.  A header record, then one record per landmark.
* label image: little-endian binary.  Header ``magic, version, width,
  height``, then per pixel ``class u8, instance u32, ignore u8, depth f32``,
  then a CRC-32 of everything before it.
* labeled cloud: little-endian binary.  Header ``magic, version, count``,
  then per point ``3 x f32 position, f32 range, f64 timestamp, u8 class,
  u32 instance, u8 ignore``, then a CRC-32.
* trajectory: text, ``t x y z qw qx qy qz`` per line.
* detections: JSON, one file per frame.

Readers never return partial objects: any truncation, version mismatch or
checksum failure raises :class:`FormatError` carrying the byte offset.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .frustum import LabeledPointCloud
from .geometry import PinholeCamera, Pose, Trajectory
from .mapping import Detection, FitResult, ParametricMap
from .primitives import Circle, Cylinder, Landmark, Plane, Rectangle, SemanticClass, Triangle
from .render import LabelImage

MAP_FORMAT = "xdmap-map"
MAP_VERSION = 1
LABEL_MAGIC = b"XDLI"
LABEL_VERSION = 1
CLOUD_MAGIC = b"XDPC"
CLOUD_VERSION = 1
TRAJECTORY_HEADER = "# xdmap-trajectory v1: t x y z qw qx qy qz"

_LABEL_HEADER = struct.Struct("<4sHII")
_CLOUD_HEADER = struct.Struct("<4sHQ")
_CRC = struct.Struct("<I")
LABEL_PIXEL = np.dtype([("cls", "<u1"), ("instance", "<u4"), ("ignore", "<u1"), ("depth", "<f4")])
CLOUD_POINT = np.dtype(
    [("position", "<f4", (3,)), ("range", "<f4"), ("timestamp", "<f8"), ("cls", "<u1"), ("instance", "<u4"), ("ignore", "<u1")]
)


class FormatError(ValueError):
    def __init__(self, message: str, offset: int, path: Optional[os.PathLike] = None):
        where = f"{path}: " if path is not None else ""
        super().__init__(f"{where}byte {offset}: {message}")
        self.offset = offset
        self.path = path


# ---------------------------------------------------------------------------
# landmarks and maps


def geometry_to_dict(g) -> Dict[str, Any]:
    if isinstance(g, Cylinder):
        return {
            "type": "cylinder",
            "base_point": [float(v) for v in g.base_point],
            "axis": [float(v) for v in g.axis],
            "length": float(g.length),
            "radius": float(g.radius),
        }
    shape = g.shape
    if isinstance(shape, Rectangle):
        sd = {"family": "rectangle", "width": float(shape.width), "height": float(shape.height)}
    elif isinstance(shape, Circle):
        sd = {"family": "circle", "radius": float(shape.radius)}
    else:
        sd = {"family": "triangle", "side": float(shape.side), "apex_up": bool(shape.apex_up)}
    return {
        "type": "plane",
        "center": [float(v) for v in g.center],
        "normal": [float(v) for v in g.normal],
        "up": [float(v) for v in g.up],
        "shape": sd,
        "thickness": float(g.thickness),
    }


def geometry_from_dict(d: Dict[str, Any]):
    if d["type"] == "cylinder":
        return Cylinder(np.array(d["base_point"]), np.array(d["axis"]), d["length"], d["radius"])
    if d["type"] != "plane":
        raise ValueError(f"unknown geometry type {d['type']!r}")
    s = d["shape"]
    if s["family"] == "rectangle":
        shape = Rectangle(s["width"], s["height"])
    elif s["family"] == "circle":
        shape = Circle(s["radius"])
    elif s["family"] == "triangle":
        shape = Triangle(s["side"], s["apex_up"])
    else:
        raise ValueError(f"unknown shape family {s['family']!r}")
    return Plane(np.array(d["center"]), np.array(d["normal"]), np.array(d["up"]), shape, d.get("thickness", 0.0))


def _fit_to_dict(fr: Optional[FitResult]) -> Optional[Dict[str, Any]]:
    if fr is None:
        return None
    return {
        "final_cost": float(fr.final_cost),
        "iterations": int(fr.iterations),
        "converged": bool(fr.converged),
        "inlier_fraction": float(fr.inlier_fraction),
        "gradient_norm": float(fr.gradient_norm),
        "family": fr.family,
        "support": int(fr.support),
        "num_detections": int(fr.num_detections),
    }


def _fit_from_dict(lm: Landmark, d: Optional[Dict[str, Any]]) -> Optional[FitResult]:
    if d is None:
        return None
    return FitResult(lm, d["final_cost"], d["iterations"], d["converged"], d["inlier_fraction"],
                     d["gradient_norm"], d["family"], "", d["support"], d["num_detections"])


def map_to_text(pmap: ParametricMap) -> str:
    fits = {id(fr.landmark): fr for fr in pmap.diagnostics if fr.landmark is not None}
    lines = [json.dumps({"format": MAP_FORMAT, "version": MAP_VERSION, "count": len(pmap.landmarks)}, sort_keys=True)]
    for lm in pmap.landmarks:
        rec = {
            "id": lm.instance_id,
            "class": lm.cls.name,
            "expanded": lm.expanded,
            "geometry": geometry_to_dict(lm.geometry),
            "fit": _fit_to_dict(fits.get(id(lm))),
        }
        lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + "\n"


def map_from_text(text: str, path: Optional[os.PathLike] = None) -> ParametricMap:
    raw = text.encode()
    offset = 0
    records = []
    for line in raw.split(b"\n"):
        if line.strip():
            try:
                records.append((offset, json.loads(line)))
            except json.JSONDecodeError as exc:
                raise FormatError(f"malformed record: {exc.msg}", offset + exc.pos, path) from exc
        offset += len(line) + 1
    if not records:
        raise FormatError("empty map file", 0, path)
    off, head = records[0]
    if head.get("format") != MAP_FORMAT:
        raise FormatError("not a map file", off, path)
    if head.get("version") != MAP_VERSION:
        raise FormatError(f"unsupported map version {head.get('version')!r}", off, path)
    if head.get("count") != len(records) - 1:
        raise FormatError(f"header announces {head.get('count')} landmarks, found {len(records) - 1}", off, path)
    landmarks, fits = [], []
    for off, rec in records[1:]:
        try:
            lm = Landmark(rec["id"], SemanticClass[rec["class"]], geometry_from_dict(rec["geometry"]), rec["expanded"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"invalid landmark record: {exc}", off, path) from exc
        landmarks.append(lm)
        fr = _fit_from_dict(lm, rec.get("fit"))
        if fr is not None:
            fits.append(fr)
    ids = [lm.instance_id for lm in landmarks]
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate landmark ids", records[1][0], path)
    return ParametricMap(landmarks, fits)


def write_map(pmap: ParametricMap, path: os.PathLike) -> None:
    Path(path).write_text(map_to_text(pmap))


def read_map(path: os.PathLike) -> ParametricMap:
    return map_from_text(_read_bytes(path).decode(), path)


# ---------------------------------------------------------------------------
# binary rasters and clouds


def _read_bytes(path: os.PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise FormatError(str(exc), 0, path) from exc


def _check_crc(buf: bytes, end: int, path) -> None:
    if len(buf) < end + _CRC.size:
        raise FormatError(f"truncated: expected {end + _CRC.size} bytes, got {len(buf)}", len(buf), path)
    if len(buf) > end + _CRC.size:
        raise FormatError(f"{len(buf) - end - _CRC.size} trailing bytes", end + _CRC.size, path)
    (crc,) = _CRC.unpack_from(buf, end)
    if crc != zlib.crc32(buf[:end]):
        raise FormatError("checksum mismatch", end, path)


def label_image_to_bytes(img: LabelImage) -> bytes:
    rec = np.empty(img.semantic.size, dtype=LABEL_PIXEL)
    rec["cls"] = img.semantic.ravel()
    rec["instance"] = img.instance.ravel()
    rec["ignore"] = img.ignore.ravel()
    rec["depth"] = img.depth_hint.ravel()
    body = _LABEL_HEADER.pack(LABEL_MAGIC, LABEL_VERSION, img.width, img.height) + rec.tobytes()
    return body + _CRC.pack(zlib.crc32(body))


def label_image_from_bytes(buf: bytes, path=None) -> LabelImage:
    if len(buf) < _LABEL_HEADER.size:
        raise FormatError("truncated header", len(buf), path)
    magic, version, width, height = _LABEL_HEADER.unpack_from(buf, 0)
    if magic != LABEL_MAGIC:
        raise FormatError("bad magic, not a label image", 0, path)
    if version != LABEL_VERSION:
        raise FormatError(f"unsupported label image version {version}", 4, path)
    end = _LABEL_HEADER.size + width * height * LABEL_PIXEL.itemsize
    _check_crc(buf, end, path)
    rec = np.frombuffer(buf, dtype=LABEL_PIXEL, count=width * height, offset=_LABEL_HEADER.size)
    shape = (height, width)
    try:
        return LabelImage(
            rec["cls"].reshape(shape).copy(),
            rec["instance"].reshape(shape).copy(),
            rec["ignore"].reshape(shape).astype(bool),
            rec["depth"].reshape(shape).copy(),
        )
    except ValueError as exc:
        raise FormatError(f"invalid label content: {exc}", _LABEL_HEADER.size, path) from exc


def write_label_image(img: LabelImage, path: os.PathLike) -> None:
    Path(path).write_bytes(label_image_to_bytes(img))


def read_label_image(path: os.PathLike) -> LabelImage:
    return label_image_from_bytes(_read_bytes(path), path)


def cloud_to_bytes(cloud: LabeledPointCloud) -> bytes:
    rec = np.empty(len(cloud), dtype=CLOUD_POINT)
    rec["position"] = cloud.positions
    rec["range"] = cloud.ranges
    rec["timestamp"] = cloud.timestamps
    rec["cls"] = cloud.semantic
    rec["instance"] = cloud.instance
    rec["ignore"] = cloud.ignore
    body = _CLOUD_HEADER.pack(CLOUD_MAGIC, CLOUD_VERSION, len(cloud)) + rec.tobytes()
    return body + _CRC.pack(zlib.crc32(body))


def cloud_from_bytes(buf: bytes, path=None) -> LabeledPointCloud:
    if len(buf) < _CLOUD_HEADER.size:
        raise FormatError("truncated header", len(buf), path)
    magic, version, count = _CLOUD_HEADER.unpack_from(buf, 0)
    if magic != CLOUD_MAGIC:
        raise FormatError("bad magic, not a point cloud", 0, path)
    if version != CLOUD_VERSION:
        raise FormatError(f"unsupported point cloud version {version}", 4, path)
    end = _CLOUD_HEADER.size + count * CLOUD_POINT.itemsize
    _check_crc(buf, end, path)
    rec = np.frombuffer(buf, dtype=CLOUD_POINT, count=count, offset=_CLOUD_HEADER.size)
    try:
        return LabeledPointCloud(
            rec["position"].astype(np.float64),
            rec["range"].astype(np.float64),
            rec["timestamp"].copy(),
            rec["cls"].copy(),
            rec["instance"].copy(),
            rec["ignore"].astype(bool),
        )
    except ValueError as exc:
        raise FormatError(f"invalid point content: {exc}", _CLOUD_HEADER.size, path) from exc


def quantize_cloud(cloud: LabeledPointCloud) -> LabeledPointCloud:
    """The cloud as it reads back from disk (positions and ranges in float32)."""
    return cloud_from_bytes(cloud_to_bytes(cloud))


def write_cloud(cloud: LabeledPointCloud, path: os.PathLike) -> None:
    Path(path).write_bytes(cloud_to_bytes(cloud))


def read_cloud(path: os.PathLike) -> LabeledPointCloud:
    return cloud_from_bytes(_read_bytes(path), path)


# ---------------------------------------------------------------------------
# trajectories


def trajectory_to_text(traj: Trajectory) -> str:
    lines = [TRAJECTORY_HEADER]
    for p in traj.poses:
        vals = [p.timestamp, *p.translation, *p.rotation]
        lines.append(" ".join(repr(float(v)) for v in vals))
    return "\n".join(lines) + "\n"


def trajectory_from_text(text: str, path=None) -> Trajectory:
    poses = []
    offset = 0
    for line in text.split("\n"):
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            parts = stripped.split()
            if len(parts) != 8:
                raise FormatError(f"expected 8 fields, got {len(parts)}", offset, path)
            try:
                v = [float(x) for x in parts]
                poses.append(Pose(v[0], np.array(v[4:8]), np.array(v[1:4])))
            except ValueError as exc:
                raise FormatError(f"invalid pose: {exc}", offset, path) from exc
        offset += len(line.encode()) + 1
    if not poses:
        raise FormatError("trajectory has no poses", 0, path)
    try:
        return Trajectory(poses)
    except ValueError as exc:
        raise FormatError(str(exc), 0, path) from exc


def write_trajectory(traj: Trajectory, path: os.PathLike) -> None:
    Path(path).write_text(trajectory_to_text(traj))


def read_trajectory(path: os.PathLike) -> Trajectory:
    return trajectory_from_text(_read_bytes(path).decode(), path)


# ---------------------------------------------------------------------------
# detections


def _pose_to_list(p: Pose) -> List[float]:
    return [float(p.timestamp), *map(float, p.translation), *map(float, p.rotation)]


def _pose_from_list(v: Sequence[float]) -> Pose:
    return Pose(v[0], np.array(v[4:8]), np.array(v[1:4]))


def detections_to_json(dets: Sequence[Detection]) -> str:
    out = []
    for d in dets:
        cam = d.camera
        out.append({
            "frame_id": int(d.frame_id),
            "class": d.cls.name,
            "polygon": [[float(u), float(v)] for u, v in d.mask_polygon],
            "camera": {
                "fx": float(cam.fx), "fy": float(cam.fy), "cx": float(cam.cx), "cy": float(cam.cy),
                "width": int(cam.width), "height": int(cam.height), "pose": _pose_to_list(cam.pose),
            },
        })
    return json.dumps({"version": 1, "detections": out}, sort_keys=True) + "\n"


def detections_from_json(text: str, path=None) -> List[Detection]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed detections: {exc.msg}", exc.pos, path) from exc
    if data.get("version") != 1:
        raise FormatError(f"unsupported detections version {data.get('version')!r}", 0, path)
    dets = []
    cams: Dict[str, PinholeCamera] = {}
    for rec in data["detections"]:
        c = rec["camera"]
        key = json.dumps(c, sort_keys=True)
        if key not in cams:  # shared camera objects let extraction project once per frame
            cams[key] = PinholeCamera(c["fx"], c["fy"], c["cx"], c["cy"], c["width"], c["height"], _pose_from_list(c["pose"]))
        dets.append(Detection(rec["frame_id"], SemanticClass[rec["class"]], np.array(rec["polygon"]), cams[key]))
    return dets
