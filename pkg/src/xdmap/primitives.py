"""Semantic geometric primitives: cylinders and upright shaped planes.

All geometry lives in the map frame.  Functions accept arrays of points or
rays and are vectorised over the leading axis.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Tuple, Union

import numpy as np

DEFAULT_SAMPLES_PER_ARC = 16
_EPS = 1e-12


class SemanticClass(enum.IntEnum):
    BACKGROUND = 0
    POLE = 1
    TRAFFIC_LIGHT = 2
    TRAFFIC_SIGN = 3

    @property
    def short(self) -> str:
        return {0: "BG", 1: "Po", 2: "TL", 3: "TS"}[int(self)]


OBJECT_CLASSES = (SemanticClass.POLE, SemanticClass.TRAFFIC_LIGHT, SemanticClass.TRAFFIC_SIGN)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(3)
    n = np.linalg.norm(v)
    if n < _EPS:
        raise ValueError("zero-length direction")
    return v / n


def orthonormal_basis(a) -> Tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing ``a`` to a right-handed frame."""
    a = _unit(a)
    helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(a, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(a, e1)


# ---------------------------------------------------------------------------
# value types


@dataclass(frozen=True, eq=False)
class Cylinder:
    base_point: np.ndarray
    axis: np.ndarray
    length: float
    radius: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        n = float(np.linalg.norm(axis))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"cylinder axis must be a unit vector, got norm {n}")
        if not (self.length > 0 and self.radius > 0):
            raise ValueError("cylinder length and radius must be positive")
        object.__setattr__(self, "axis", axis / n)
        object.__setattr__(self, "base_point", np.asarray(self.base_point, dtype=float).reshape(3))
        object.__setattr__(self, "length", float(self.length))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def top_point(self) -> np.ndarray:
        return self.base_point + self.length * self.axis

    @property
    def center(self) -> np.ndarray:
        return self.base_point + 0.5 * self.length * self.axis

    @classmethod
    def vertical(cls, x: float, y: float, z0: float, length: float, radius: float) -> "Cylinder":
        return cls(np.array([x, y, z0]), np.array([0.0, 0.0, 1.0]), length, radius)


@dataclass(frozen=True)
class Rectangle:
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError("rectangle dimensions must be positive")
        object.__setattr__(self, "width", float(self.width))
        object.__setattr__(self, "height", float(self.height))

    family = "rectangle"


@dataclass(frozen=True)
class Circle:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("circle radius must be positive")
        object.__setattr__(self, "radius", float(self.radius))

    family = "circle"


@dataclass(frozen=True)
class Triangle:
    """Equilateral triangle centred on its centroid."""

    side: float
    apex_up: bool = True

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError("triangle side must be positive")
        object.__setattr__(self, "side", float(self.side))
        object.__setattr__(self, "apex_up", bool(self.apex_up))

    family = "triangle"

    def vertices(self) -> np.ndarray:
        s = self.side
        k = 1.0 if self.apex_up else -1.0
        verts = np.array(
            [[-s / 2, -s / (2 * math.sqrt(3))], [s / 2, -s / (2 * math.sqrt(3))], [0.0, s / math.sqrt(3)]]
        )
        verts[:, 1] *= k
        if not self.apex_up:
            verts = verts[::-1]  # keep counter-clockwise order
        return verts


Shape = Union[Rectangle, Circle, Triangle]


@dataclass(frozen=True, eq=False)
class Plane:
    """Upright planar sign; ``thickness`` > 0 once extruded to a box."""

    center: np.ndarray
    normal: np.ndarray
    up: np.ndarray
    shape: Shape
    thickness: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        u = np.asarray(self.up, dtype=float).reshape(3)
        if abs(np.linalg.norm(n) - 1) > 1e-6 or abs(np.linalg.norm(u) - 1) > 1e-6:
            raise ValueError("normal and up must be unit vectors")
        if abs(n[2]) > 1e-9:
            raise ValueError("sign planes must be upright (horizontal normal)")
        if abs(float(n @ u)) > 1e-9:
            raise ValueError("up must be orthogonal to the normal")
        if self.thickness < 0:
            raise ValueError("thickness must be nonnegative")
        object.__setattr__(self, "normal", n / np.linalg.norm(n))
        object.__setattr__(self, "up", u / np.linalg.norm(u))
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "thickness", float(self.thickness))

    @classmethod
    def upright(cls, center, yaw: float, shape: Shape, thickness: float = 0.0) -> "Plane":
        normal = np.array([math.cos(yaw), math.sin(yaw), 0.0])
        return cls(np.asarray(center, dtype=float), normal, np.array([0.0, 0.0, 1.0]), shape, thickness)

    @property
    def right(self) -> np.ndarray:
        return np.cross(self.up, self.normal)

    @property
    def yaw(self) -> float:
        return math.atan2(self.normal[1], self.normal[0])

    def to_local(self, points) -> np.ndarray:
        """(right, up, normal) coordinates relative to the center."""
        rel = np.asarray(points, dtype=float) - self.center
        return np.stack([rel @ self.right, rel @ self.up, rel @ self.normal], axis=-1)

    def from_local(self, ab, offset: float = 0.0) -> np.ndarray:
        ab = np.asarray(ab, dtype=float)
        return (
            self.center
            + ab[..., :1] * self.right
            + ab[..., 1:2] * self.up
            + offset * self.normal
        )


Geometry = Union[Cylinder, Plane]

_CYLINDER_CLASSES = (SemanticClass.POLE, SemanticClass.TRAFFIC_LIGHT)


@dataclass(frozen=True, eq=False)
class Landmark:
    instance_id: int
    cls: SemanticClass
    geometry: Geometry
    expanded: bool = False

    def __post_init__(self):
        object.__setattr__(self, "cls", SemanticClass(self.cls))
        if int(self.instance_id) < 1:
            raise ValueError("instance ids must be positive")
        object.__setattr__(self, "instance_id", int(self.instance_id))
        if self.cls == SemanticClass.BACKGROUND:
            raise ValueError("background cannot be a landmark")
        if self.cls in _CYLINDER_CLASSES and not isinstance(self.geometry, Cylinder):
            raise ValueError(f"{self.cls.name} landmarks carry a cylinder")
        if self.cls == SemanticClass.TRAFFIC_SIGN and not isinstance(self.geometry, Plane):
            raise ValueError("TRAFFIC_SIGN landmarks carry a plane")

    @property
    def anchor(self) -> np.ndarray:
        g = self.geometry
        return g.center

    def with_id(self, instance_id: int) -> "Landmark":
        return replace(self, instance_id=instance_id)


@dataclass(frozen=True)
class MarginPolicy:
    traffic_light_radius_margin: float = 0.05
    pole_radius_margin: float = 0.07
    plane_box_width: float = 0.10
    pixel_dilation: int = 1

    def __post_init__(self):
        if min(self.traffic_light_radius_margin, self.pole_radius_margin, self.plane_box_width) < 0:
            raise ValueError("margins must be nonnegative")
        if self.pixel_dilation < 0:
            raise ValueError("pixel dilation must be nonnegative")


# ---------------------------------------------------------------------------
# hulls and margins


def _ring(center, e1, e2, radius, n) -> np.ndarray:
    ang = 2 * math.pi * np.arange(n) / n
    return center + radius * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)


def shape_outline(shape: Shape, samples_per_arc: int = DEFAULT_SAMPLES_PER_ARC) -> np.ndarray:
    """Counter-clockwise 2D outline in (right, up) plane coordinates."""
    if isinstance(shape, Rectangle):
        w, h = shape.width / 2, shape.height / 2
        return np.array([[-w, -h], [w, -h], [w, h], [-w, h]])
    if isinstance(shape, Triangle):
        return shape.vertices()
    if samples_per_arc < 3:
        raise ValueError("samples_per_arc must be >= 3 for circular outlines")
    ang = 2 * math.pi * np.arange(samples_per_arc) / samples_per_arc
    return shape.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def hull_keypoints(landmark: Landmark, samples_per_arc: int = DEFAULT_SAMPLES_PER_ARC) -> np.ndarray:
    """Boundary keypoints of the primitive in the map frame.

    Cylinders give the bottom ring, the top ring and then the two axis
    endpoints.  Planes give their outline; extruded planes give the front
    outline followed by the back outline.
    """
    g = landmark.geometry
    if isinstance(g, Cylinder):
        if samples_per_arc < 3:
            raise ValueError("samples_per_arc must be >= 3 for cylinders")
        e1, e2 = orthonormal_basis(g.axis)
        bottom = _ring(g.base_point, e1, e2, g.radius, samples_per_arc)
        top = _ring(g.top_point, e1, e2, g.radius, samples_per_arc)
        return np.vstack([bottom, top, g.base_point, g.top_point])
    outline = shape_outline(g.shape, samples_per_arc)
    if g.thickness > 0:
        half = g.thickness / 2
        return np.vstack([g.from_local(outline, half), g.from_local(outline, -half)])
    return g.from_local(outline)


def expand_margin(landmark: Landmark, policy: MarginPolicy = MarginPolicy()) -> Landmark:
    """Grow the primitive by the uncertainty margins; refuses double expansion."""
    if landmark.expanded:
        raise ValueError(f"landmark {landmark.instance_id} is already margin-expanded")
    g = landmark.geometry
    if landmark.cls == SemanticClass.TRAFFIC_LIGHT:
        g = replace(g, radius=g.radius + policy.traffic_light_radius_margin)
    elif landmark.cls == SemanticClass.POLE:
        g = replace(g, radius=g.radius + policy.pole_radius_margin)
    else:
        g = replace(g, thickness=policy.plane_box_width)
    return replace(landmark, geometry=g, expanded=True)


# ---------------------------------------------------------------------------
# 2D shape distances


def shape_signed_distance(shape: Shape, ab) -> np.ndarray:
    """Signed distance (negative inside) from plane coordinates to the outline."""
    ab = np.atleast_2d(np.asarray(ab, dtype=float))
    a, b = ab[:, 0], ab[:, 1]
    if isinstance(shape, Circle):
        return np.hypot(a, b) - shape.radius
    if isinstance(shape, Rectangle):
        qx = np.abs(a) - shape.width / 2
        qy = np.abs(b) - shape.height / 2
        outside = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0))
        return outside + np.minimum(np.maximum(qx, qy), 0)
    return _convex_polygon_sdf(shape.vertices(), ab)


def _convex_polygon_sdf(verts: np.ndarray, p: np.ndarray) -> np.ndarray:
    n = len(verts)
    best = np.full(len(p), np.inf)
    inside = np.ones(len(p), dtype=bool)
    for i in range(n):
        v0, v1 = verts[i], verts[(i + 1) % n]
        e = v1 - v0
        w = p - v0
        t = np.clip((w @ e) / (e @ e), 0.0, 1.0)
        d = np.hypot(w[:, 0] - t * e[0], w[:, 1] - t * e[1])
        best = np.minimum(best, d)
        inside &= (e[0] * w[:, 1] - e[1] * w[:, 0]) >= 0
    return np.where(inside, -best, best)


# ---------------------------------------------------------------------------
# containment and signed distance


def _cylinder_local(cyl: Cylinder, points) -> Tuple[np.ndarray, np.ndarray]:
    rel = np.atleast_2d(np.asarray(points, dtype=float)) - cyl.base_point
    axial = rel @ cyl.axis
    radial_vec = rel - axial[:, None] * cyl.axis
    return axial, np.linalg.norm(radial_vec, axis=1)


def contains_point(landmark: Landmark, points) -> np.ndarray:
    """Membership of point(s) in the (usually margin-expanded) solid.

    Extruded planes are prisms of the sign outline; for rectangles this is
    exactly a box.  Unexpanded planes have zero thickness and only contain
    points lying on them.
    """
    g = landmark.geometry
    if isinstance(g, Cylinder):
        axial, radial = _cylinder_local(g, points)
        return (axial >= 0) & (axial <= g.length) & (radial <= g.radius)
    loc = np.atleast_2d(g.to_local(points))
    inside2d = shape_signed_distance(g.shape, loc[:, :2]) <= 0
    return inside2d & (np.abs(loc[:, 2]) <= g.thickness / 2)


def signed_distance(landmark_or_geometry, points) -> np.ndarray:
    """Euclidean signed distance to the solid (negative inside)."""
    g = getattr(landmark_or_geometry, "geometry", landmark_or_geometry)
    if isinstance(g, Cylinder):
        axial, radial = _cylinder_local(g, points)
        qx = radial - g.radius
        qy = np.abs(axial - g.length / 2) - g.length / 2
    else:
        loc = np.atleast_2d(g.to_local(points))
        qx = shape_signed_distance(g.shape, loc[:, :2])
        qy = np.abs(loc[:, 2]) - g.thickness / 2
    outside = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0))
    return outside + np.minimum(np.maximum(qx, qy), 0)


# ---------------------------------------------------------------------------
# ray residuals


def _ellipse_outside_distance(X, Y, A, B) -> np.ndarray:
    """Distance from first-quadrant points outside an axis-aligned ellipse.

    Newton iteration on the Lagrange multiplier, started from a lower bound
    so that it converges monotonically.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    A = np.broadcast_to(np.asarray(A, dtype=float), X.shape)
    B = np.broadcast_to(np.asarray(B, dtype=float), X.shape)
    degenerate = A < 1e-12 * np.maximum(B, 1e-300)
    seg = np.hypot(X, np.maximum(Y - B, 0.0))
    A_ = np.where(degenerate, 1.0, A)
    a2, b2 = A_ * A_, B * B
    ax, by = A_ * X, B * Y
    t = np.maximum(np.maximum(ax - a2, by - b2), 0.0)
    for _ in range(30):
        ra = ax / (t + a2)
        rb = by / (t + b2)
        f = ra * ra + rb * rb - 1.0
        fp = -2.0 * (ra * ra / (t + a2) + rb * rb / (t + b2))
        step = np.where(fp < 0, -f / np.where(fp < 0, fp, -1.0), 0.0)
        t = t + np.maximum(step, 0.0)
    xs = a2 * X / (t + a2)
    ys = b2 * Y / (t + b2)
    return np.where(degenerate, seg, np.hypot(X - xs, Y - ys))


def cylinder_ray_residual(cyl: Cylinder, origins, directions) -> np.ndarray:
    """Signed distance from viewing lines to the cylinder silhouette.

    Each line is collapsed to a point by projecting along its direction;
    the cylinder projects to a segment swept by an ellipse.  Outside the
    silhouette the value is the true line-to-solid distance; inside it is
    negative and reaches zero exactly on the silhouette boundary.
    """
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    o, d = np.broadcast_arrays(o, d)
    a = cyl.axis
    ad = d @ a
    w = a[None, :] - ad[:, None] * d
    s = np.linalg.norm(w, axis=1)
    ok = s > 1e-12
    safe_s = np.where(ok, s, 1.0)
    e = w / safe_s[:, None]
    u = np.cross(np.broadcast_to(a, d.shape), d) / safe_s[:, None]
    if not np.all(ok):
        for i in np.flatnonzero(~ok):
            e[i], u[i] = orthonormal_basis(d[i])
    rel = o - cyl.center
    p = rel - np.sum(rel * d, axis=1)[:, None] * d
    x = np.abs(np.sum(p * e, axis=1))
    y = np.abs(np.sum(p * u, axis=1))
    h = 0.5 * cyl.length * s
    A = cyl.radius * np.abs(ad)
    B = cyl.radius
    X = x - h

    with np.errstate(divide="ignore", invalid="ignore"):
        in_ellipse = np.where(A > 0, (X / np.where(A > 0, A, 1.0)) ** 2 + (y / B) ** 2 <= 1.0, False)
    inside = np.where(X <= 0, y <= B, in_ellipse)
    inner = np.maximum(y - B, X - A * np.sqrt(np.clip(1.0 - (y / B) ** 2, 0.0, 1.0)))
    out = np.where(inside, inner, y - B)
    ends = np.flatnonzero(~inside & (X > 0))
    if len(ends):
        out[ends] = _ellipse_outside_distance(X[ends], y[ends], A[ends], B)
    return out


def plane_ray_residual(plane: Plane, origins, directions, samples: int = 256) -> np.ndarray:
    """In-plane signed distance from the ray/plane intersection to the outline."""
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    o, d = np.broadcast_arrays(o, d)
    denom = d @ plane.normal
    parallel = np.abs(denom) < 1e-12
    sden = np.where(parallel, 1.0, denom)
    s = ((plane.center - o) @ plane.normal) / sden
    q = o + s[:, None] * d
    loc = plane.to_local(q)
    out = shape_signed_distance(plane.shape, loc[:, :2])
    if np.any(parallel):
        hull = plane.from_local(shape_outline(plane.shape, samples))
        for i in np.flatnonzero(parallel):
            rel = hull - o[i]
            perp = rel - np.outer(rel @ d[i], d[i])
            out[i] = float(np.min(np.linalg.norm(perp, axis=1)))
    return out


def ray_hull_distance(landmark_or_geometry, ray_origin, ray_direction) -> np.ndarray:
    """Contour residual of viewing rays against the primitive's hull.

    Negative when the ray passes through the silhouette, zero on it and
    positive outside.  The supporting line of each ray is used.
    """
    g = getattr(landmark_or_geometry, "geometry", landmark_or_geometry)
    if isinstance(g, Cylinder):
        return cylinder_ray_residual(g, ray_origin, ray_direction)
    return plane_ray_residual(g, ray_origin, ray_direction)


# ---------------------------------------------------------------------------
# analytic ray casting


def _interval_intersect(lo1, hi1, lo2, hi2):
    return np.maximum(lo1, lo2), np.minimum(hi1, hi2)


def _ray_cylinder_interval(cyl: Cylinder, o, d):
    rel = o - cyl.base_point
    ra = rel @ cyl.axis
    da = d @ cyl.axis
    rp = rel - ra[:, None] * cyl.axis
    dp = d - da[:, None] * cyl.axis
    qa = np.sum(dp * dp, axis=1)
    qb = 2 * np.sum(rp * dp, axis=1)
    qc = np.sum(rp * rp, axis=1) - cyl.radius ** 2
    disc = qb * qb - 4 * qa * qc
    lat = qa > 1e-18
    sq = np.sqrt(np.maximum(disc, 0.0))
    safe_qa = np.where(lat, qa, 1.0)
    t0 = np.where(lat, (-qb - sq) / (2 * safe_qa), np.where(qc <= 0, -np.inf, np.inf))
    t1 = np.where(lat, (-qb + sq) / (2 * safe_qa), np.where(qc <= 0, np.inf, -np.inf))
    miss = lat & (disc < 0)
    t0 = np.where(miss, np.inf, t0)
    t1 = np.where(miss, -np.inf, t1)
    axial_ok = np.abs(da) > 1e-18
    safe_da = np.where(axial_ok, da, 1.0)
    s0 = (0.0 - ra) / safe_da
    s1 = (cyl.length - ra) / safe_da
    inside_slab = (ra >= 0) & (ra <= cyl.length)
    a0 = np.where(axial_ok, np.minimum(s0, s1), np.where(inside_slab, -np.inf, np.inf))
    a1 = np.where(axial_ok, np.maximum(s0, s1), np.where(inside_slab, np.inf, -np.inf))
    return _interval_intersect(t0, t1, a0, a1)


def _ray_convex2d_interval(shape: Shape, o2, d2):
    """Parameter interval where a 2D line lies inside a convex outline."""
    n = len(o2)
    if isinstance(shape, Circle):
        qa = np.sum(d2 * d2, axis=1)
        qb = 2 * np.sum(o2 * d2, axis=1)
        qc = np.sum(o2 * o2, axis=1) - shape.radius ** 2
        disc = qb * qb - 4 * qa * qc
        lat = qa > 1e-18
        sq = np.sqrt(np.maximum(disc, 0.0))
        safe = np.where(lat, qa, 1.0)
        lo = np.where(lat, (-qb - sq) / (2 * safe), np.where(qc <= 0, -np.inf, np.inf))
        hi = np.where(lat, (-qb + sq) / (2 * safe), np.where(qc <= 0, np.inf, -np.inf))
        miss = lat & (disc < 0)
        return np.where(miss, np.inf, lo), np.where(miss, -np.inf, hi)
    verts = shape_outline(shape)
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    m = len(verts)
    for i in range(m):
        v0, v1 = verts[i], verts[(i + 1) % m]
        e = v1 - v0
        inward = np.array([-e[1], e[0]])
        num = (o2 - v0) @ inward  # >= 0 inside
        den = d2 @ inward
        par = np.abs(den) < 1e-18
        safe = np.where(par, 1.0, den)
        t = -num / safe
        lo = np.where(~par & (den > 0), np.maximum(lo, t), lo)
        hi = np.where(~par & (den < 0), np.minimum(hi, t), hi)
        blocked = par & (num < 0)
        lo = np.where(blocked, np.inf, lo)
        hi = np.where(blocked, -np.inf, hi)
    return lo, hi


def ray_intersect(landmark_or_geometry, origins, directions) -> np.ndarray:
    """Distance along each ray to the first hit, ``inf`` on a miss."""
    g = getattr(landmark_or_geometry, "geometry", landmark_or_geometry)
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    o, d = np.broadcast_arrays(o, d)
    if isinstance(g, Cylinder):
        lo, hi = _ray_cylinder_interval(g, o, d)
    else:
        loc_o = g.to_local(o)
        loc_d = np.stack([d @ g.right, d @ g.up, d @ g.normal], axis=1)
        if g.thickness == 0:
            dn = loc_d[:, 2]
            ok = np.abs(dn) > 1e-18
            t = np.where(ok, -loc_o[:, 2] / np.where(ok, dn, 1.0), np.inf)
            hit2 = loc_o[:, :2] + t[:, None] * loc_d[:, :2]
            inside = shape_signed_distance(g.shape, hit2) <= 0
            good = ok & inside & (t >= 0)
            return np.where(good, t, np.inf)
        half = g.thickness / 2
        dn = loc_d[:, 2]
        ok = np.abs(dn) > 1e-18
        safe = np.where(ok, dn, 1.0)
        s0 = (-half - loc_o[:, 2]) / safe
        s1 = (half - loc_o[:, 2]) / safe
        inside_slab = np.abs(loc_o[:, 2]) <= half
        a0 = np.where(ok, np.minimum(s0, s1), np.where(inside_slab, -np.inf, np.inf))
        a1 = np.where(ok, np.maximum(s0, s1), np.where(inside_slab, np.inf, -np.inf))
        p0, p1 = _ray_convex2d_interval(g.shape, loc_o[:, :2], loc_d[:, :2])
        lo, hi = _interval_intersect(a0, a1, p0, p1)
    hit = (lo <= hi) & (hi >= 0)
    entry = np.where(lo >= 0, lo, 0.0)
    return np.where(hit, entry, np.inf)


def bounding_radius(landmark_or_geometry) -> float:
    g = getattr(landmark_or_geometry, "geometry", landmark_or_geometry)
    if isinstance(g, Cylinder):
        return math.hypot(g.length / 2, g.radius)
    outline = shape_outline(g.shape, 8)
    return float(np.max(np.linalg.norm(outline, axis=1))) + g.thickness / 2 + 1e-9
