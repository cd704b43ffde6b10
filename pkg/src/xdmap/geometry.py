"""Rigid-body math, spherical range-image projection and motion compensation.

Conventions used throughout the package:

* Quaternions are stored ``(w, x, y, z)``.
* A :class:`Pose` maps sensor-frame coordinates into the map frame,
  ``p_map = R @ p_sensor + t``.
* The LiDAR sensor frame is x forward, y left, z up.  Camera frames are
  x right, y down, z forward.
* Pixel coordinates are continuous; pixel ``(col, row)`` covers
  ``[col, col + 1) x [row, row + 1)`` and its center sits at ``+0.5``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

TWO_PI = 2.0 * math.pi


class OutOfRangeError(ValueError):
    """Raised when a time lies outside a trajectory's span."""


# ---------------------------------------------------------------------------
# quaternion helpers (vectorised over a leading axis where it matters)


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_multiply(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q):
    """Rotation matrix (or stack of them) for unit quaternion(s)."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def quat_from_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    tr = np.trace(m)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[math.cos(half)], math.sin(half) * axis])


def quat_from_yaw(yaw: float) -> np.ndarray:
    return quat_from_axis_angle([0.0, 0.0, 1.0], yaw)


def quat_angle(q) -> float:
    """Rotation angle in radians of a unit quaternion."""
    q = quat_normalize(q)
    v = float(np.linalg.norm(q[1:]))
    return 2.0 * math.atan2(v, abs(float(q[0])))


def slerp(q0, q1, frac):
    """Shortest-arc spherical interpolation; ``frac`` may be an array."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    frac = np.asarray(frac, dtype=float)
    dot = np.sum(q0 * q1, axis=-1)
    q1 = np.where((dot < 0)[..., None], -q1, q1)
    dot = np.abs(dot)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sin_theta = np.sin(theta)
    small = sin_theta < 1e-12
    safe = np.where(small, 1.0, sin_theta)
    w0 = np.where(small, 1.0 - frac, np.sin((1.0 - frac) * theta) / safe)
    w1 = np.where(small, frac, np.sin(frac * theta) / safe)
    out = w0[..., None] * q0 + w1[..., None] * q1
    return quat_normalize(out)


# ---------------------------------------------------------------------------
# poses


@dataclass(frozen=True, eq=False)
class Pose:
    """Map-from-sensor rigid transform at a point in time."""

    timestamp: float
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    translation: np.ndarray  # sensor origin in the map frame

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        n = float(np.linalg.norm(q))
        if not math.isfinite(n) or abs(n - 1.0) > 1e-6:
            raise ValueError(f"rotation quaternion must be unit norm, got |q|={n}")
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", q / n)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "timestamp", float(self.timestamp))

    @classmethod
    def identity(cls, timestamp: float = 0.0) -> "Pose":
        return cls(timestamp, np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_yaw(cls, timestamp: float, translation, yaw: float) -> "Pose":
        return cls(timestamp, quat_from_yaw(yaw), np.asarray(translation, dtype=float))

    @classmethod
    def from_matrix(cls, timestamp: float, matrix) -> "Pose":
        matrix = np.asarray(matrix, dtype=float)
        return cls(timestamp, quat_from_matrix(matrix[:3, :3]), matrix[:3, 3])

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Transform sensor-frame point(s) into the map frame."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation_matrix.T + self.translation

    def apply_inverse(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return (points - self.translation) @ self.rotation_matrix

    def rotate(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation_matrix.T

    def inverse(self) -> "Pose":
        qi = quat_conjugate(self.rotation)
        return Pose(self.timestamp, qi, -quat_to_matrix(qi) @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        q = quat_normalize(quat_multiply(self.rotation, other.rotation))
        t = self.rotation_matrix @ other.translation + self.translation
        return Pose(self.timestamp, q, t)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def yaw(self) -> float:
        r = self.rotation_matrix
        return math.atan2(r[1, 0], r[0, 0])

    def distance_to(self, other: "Pose") -> Tuple[float, float]:
        """(rotation angle, translation distance) between two poses."""
        rel = self.inverse().compose(other)
        return quat_angle(rel.rotation), float(np.linalg.norm(rel.translation))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-ordered poses with linear/slerp interpolation in between."""

    poses: Tuple[Pose, ...]
    timestamps: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        poses = tuple(self.poses)
        if not poses:
            raise ValueError("trajectory needs at least one pose")
        ts = np.array([p.timestamp for p in poses], dtype=float)
        if np.any(np.diff(ts) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "_quats", np.array([p.rotation for p in poses]))
        object.__setattr__(self, "_trans", np.array([p.translation for p in poses]))

    def __len__(self):
        return len(self.poses)

    @property
    def start(self) -> float:
        return float(self.timestamps[0])

    @property
    def end(self) -> float:
        return float(self.timestamps[-1])

    def covers(self, t) -> bool:
        t = np.asarray(t, dtype=float)
        return bool(np.all((t >= self.start) & (t <= self.end)))

    def _locate(self, times: np.ndarray):
        if times.size and not self.covers(times):
            bad = times[(times < self.start) | (times > self.end)]
            raise OutOfRangeError(
                f"time {float(bad[0])!r} outside trajectory span [{self.start}, {self.end}]"
            )
        ts = self.timestamps
        if len(ts) == 1:
            idx = np.zeros(times.shape, dtype=int)
            return idx, idx, np.zeros(times.shape), np.ones(times.shape, dtype=bool)
        hi = np.clip(np.searchsorted(ts, times, side="right"), 1, len(ts) - 1)
        lo = hi - 1
        frac = (times - ts[lo]) / (ts[hi] - ts[lo])
        # exact knots must reproduce the stored pose bit-for-bit
        exact_lo = times == ts[lo]
        exact_hi = times == ts[hi]
        lo = np.where(exact_hi, hi, lo)
        exact = exact_lo | exact_hi
        return lo, hi, frac, exact

    def interpolate_arrays(self, times) -> Tuple[np.ndarray, np.ndarray]:
        """Quaternions ``(N, 4)`` and translations ``(N, 3)`` at ``times``."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        lo, hi, frac, exact = self._locate(times)
        q = slerp(self._quats[lo], self._quats[hi], frac)
        t = self._trans[lo] + frac[:, None] * (self._trans[hi] - self._trans[lo])
        q = np.where(exact[:, None], self._quats[lo], q)
        t = np.where(exact[:, None], self._trans[lo], t)
        return q, t

    def at(self, t: float) -> Pose:
        return interpolate_pose(self, t)


def interpolate_pose(trajectory: Trajectory, t: float) -> Pose:
    """Pose at time ``t``; translation is linear, rotation shortest-arc slerp."""
    q, tr = trajectory.interpolate_arrays([t])
    return Pose(float(t), q[0], tr[0])


# ---------------------------------------------------------------------------
# spherical projection


@dataclass(frozen=True)
class SphericalCameraModel:
    """Range-image projection with independent azimuth/elevation resolution.

    Column ``u`` grows with azimuth ``atan2(y, x)`` starting at the azimuth
    minimum; row ``v`` grows with decreasing elevation starting at the
    elevation maximum.
    """

    width: int = 1812
    height: int = 128
    azimuth_range: Tuple[float, float] = (-math.pi, math.pi)
    elevation_range: Tuple[float, float] = (math.radians(-25.0), math.radians(15.0))

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be >= 1")
        a0, a1 = self.azimuth_range
        e0, e1 = self.elevation_range
        if not (a1 > a0 and a1 - a0 <= TWO_PI + 1e-12):
            raise ValueError(f"bad azimuth range {self.azimuth_range}")
        if not (e1 > e0 and -math.pi / 2 <= e0 and e1 <= math.pi / 2):
            raise ValueError(f"bad elevation range {self.elevation_range}")
        object.__setattr__(self, "azimuth_range", (float(a0), float(a1)))
        object.__setattr__(self, "elevation_range", (float(e0), float(e1)))

    @property
    def azimuth_resolution(self) -> float:
        return (self.azimuth_range[1] - self.azimuth_range[0]) / self.width

    @property
    def elevation_resolution(self) -> float:
        return (self.elevation_range[1] - self.elevation_range[0]) / self.height

    @property
    def full_circle(self) -> bool:
        return self.azimuth_range[1] - self.azimuth_range[0] >= TWO_PI - 1e-12

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def project(self, points) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorised projection.

        Returns ``(uv, ranges, valid)`` where ``uv`` is ``(N, 2)`` continuous
        pixel coordinates (garbage where ``valid`` is false).
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        rng = np.sqrt(x * x + y * y + z * z)
        az = np.arctan2(y, x)
        el = np.arctan2(z, np.hypot(x, y))
        a0, a1 = self.azimuth_range
        e0, e1 = self.elevation_range
        u = (az - a0) / self.azimuth_resolution
        v = (e1 - el) / self.elevation_resolution
        valid = (rng > 0) & (el > e0) & (el <= e1)
        if self.full_circle:
            u = np.mod(u, self.width)
            # mod can round up to exactly width for tiny negative inputs
            u = np.where(u >= self.width, 0.0, u)
        else:
            valid &= (az >= a0) & (az < a1)
        return np.stack([u, v], axis=1), rng, valid

    def pixel_indices(self, uv) -> Tuple[np.ndarray, np.ndarray]:
        """Floor continuous coordinates to (row, col) bins."""
        uv = np.asarray(uv, dtype=float)
        cols = np.floor(uv[:, 0]).astype(np.int64)
        rows = np.floor(uv[:, 1]).astype(np.int64)
        if self.full_circle:
            cols = np.mod(cols, self.width)
        cols = np.clip(cols, 0, self.width - 1)
        rows = np.clip(rows, 0, self.height - 1)
        return rows, cols

    def unproject(self, u, v, ranges) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        ranges = np.asarray(ranges, dtype=float)
        if np.any(ranges <= 0):
            raise ValueError("range must be positive")
        az = self.azimuth_range[0] + u * self.azimuth_resolution
        el = self.elevation_range[1] - v * self.elevation_resolution
        ce = np.cos(el)
        d = np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=-1)
        return d * ranges[..., None]

    def pixel_center_directions(self) -> np.ndarray:
        """Unit ray directions for every pixel center, shape ``(H, W, 3)``."""
        cols = np.arange(self.width) + 0.5
        rows = np.arange(self.height) + 0.5
        uu, vv = np.meshgrid(cols, rows)
        return self.unproject(uu, vv, np.ones_like(uu))


def project_spherical(model: SphericalCameraModel, point) -> Optional[Tuple[float, float, float]]:
    """Project one sensor-frame point to ``(u, v, range)`` or ``None``."""
    point = np.asarray(point, dtype=float).reshape(3)
    if not np.any(point):
        raise ValueError("cannot project the sensor origin")
    uv, rng, valid = model.project(point[None, :])
    if not valid[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1]), float(rng[0])


def unproject_spherical(model: SphericalCameraModel, u: float, v: float, range_: float) -> np.ndarray:
    if range_ <= 0:
        raise ValueError("range must be positive")
    return model.unproject(u, v, range_)


# ---------------------------------------------------------------------------
# pinhole camera


def _camera_from_vehicle() -> np.ndarray:
    # columns are the camera axes (right, down, forward) in the x-fwd/z-up frame
    return np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


CAMERA_AXES = _camera_from_vehicle()


@dataclass(frozen=True, eq=False)
class PinholeCamera:
    """Pinhole intrinsics plus the map-from-camera pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: Pose

    @classmethod
    def with_fov(cls, width: int, height: int, horizontal_fov: float, pose: Pose) -> "PinholeCamera":
        f = 0.5 * width / math.tan(0.5 * horizontal_fov)
        return cls(f, f, 0.5 * width, 0.5 * height, width, height, pose)

    def with_pose(self, pose: Pose) -> "PinholeCamera":
        return PinholeCamera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, pose)

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation

    def to_camera(self, points_map) -> np.ndarray:
        return self.pose.apply_inverse(points_map)

    def project(self, points_map) -> Tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates ``(N, 2)`` and depths ``(N,)`` of map points."""
        pc = np.atleast_2d(self.to_camera(points_map))
        z = pc[:, 2]
        safe = np.where(np.abs(z) < 1e-12, 1e-12, z)
        u = self.fx * pc[:, 0] / safe + self.cx
        v = self.fy * pc[:, 1] / safe + self.cy
        return np.stack([u, v], axis=1), z

    def ray_directions(self, uv) -> np.ndarray:
        """Unit viewing directions (map frame) through pixel coordinates."""
        uv = np.atleast_2d(np.asarray(uv, dtype=float))
        d = np.stack(
            [(uv[:, 0] - self.cx) / self.fx, (uv[:, 1] - self.cy) / self.fy, np.ones(len(uv))],
            axis=1,
        )
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return self.pose.rotate(d)

    def horizontal_fov(self) -> float:
        return 2.0 * math.atan(0.5 * self.width / self.fx)


def camera_mount(offset, yaw: float = 0.0) -> Pose:
    """Sensor-from-camera pose for a camera looking along sensor yaw ``yaw``."""
    r = quat_to_matrix(quat_from_yaw(yaw)) @ CAMERA_AXES
    return Pose(0.0, quat_from_matrix(r), np.asarray(offset, dtype=float))


# ---------------------------------------------------------------------------
# timed points and motion compensation


@dataclass(frozen=True, eq=False)
class TimedPoints:
    """A LiDAR scan: sensor-frame positions with per-point firing times."""

    positions: np.ndarray  # (N, 3)
    timestamps: np.ndarray  # (N,)
    ranges: np.ndarray  # (N,)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        ts = np.asarray(self.timestamps, dtype=float).reshape(-1)
        rng = np.asarray(self.ranges, dtype=float).reshape(-1)
        if not (len(pos) == len(ts) == len(rng)):
            raise ValueError("positions, timestamps and ranges must have equal length")
        if np.any(rng < 0):
            raise ValueError("ranges must be nonnegative")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "ranges", rng)

    @classmethod
    def from_positions(cls, positions, timestamps) -> "TimedPoints":
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        return cls(positions, timestamps, np.linalg.norm(positions, axis=1))

    def __len__(self):
        return len(self.positions)

    def subset(self, mask) -> "TimedPoints":
        return TimedPoints(self.positions[mask], self.timestamps[mask], self.ranges[mask])


def poses_at(trajectory: Trajectory, times) -> Tuple[np.ndarray, np.ndarray]:
    """Rotation matrices ``(N, 3, 3)`` and translations ``(N, 3)``.

    Interpolation happens once per unique time; scans share firing times
    across a column so this is much cheaper than per point.
    """
    times = np.asarray(times, dtype=float)
    uniq, inverse = np.unique(times, return_inverse=True)
    q, t = trajectory.interpolate_arrays(uniq)
    return quat_to_matrix(q)[inverse], t[inverse]


def points_to_map(points: TimedPoints, trajectory: Trajectory) -> np.ndarray:
    """Each point transformed by the pose at its own firing time."""
    rot, tr = poses_at(trajectory, points.timestamps)
    return np.einsum("nij,nj->ni", rot, points.positions) + tr


def motion_compensate(points: TimedPoints, trajectory: Trajectory, reference_time: float) -> np.ndarray:
    """Re-express every point in the sensor frame of the reference pose.

    Raises :class:`OutOfRangeError` if any timestamp (or the reference time)
    falls outside the trajectory; partial scans are never returned.
    """
    if not trajectory.covers(reference_time):
        raise OutOfRangeError(f"reference time {reference_time} outside trajectory span")
    if len(points) == 0:
        return np.zeros((0, 3))
    world = points_to_map(points, trajectory)
    ref = interpolate_pose(trajectory, reference_time)
    return ref.apply_inverse(world)


def frame_indices_for_rate(num_frames: int, rate_hz: float, base_hz: float = 10.0) -> np.ndarray:
    """Indices of frames kept when decimating a ``base_hz`` stream to ``rate_hz``."""
    if rate_hz <= 0 or rate_hz > base_hz:
        raise ValueError(f"sampling rate must be in (0, {base_hz}] Hz")
    step = base_hz / rate_hz
    if abs(step - round(step)) > 1e-9:
        raise ValueError(f"{base_hz} Hz is not an integer multiple of {rate_hz} Hz")
    return np.arange(0, num_frames, int(round(step)))


def as_points(points: Sequence) -> np.ndarray:
    return np.asarray(points, dtype=float).reshape(-1, 3)
