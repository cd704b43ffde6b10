"""Semantic parametric mapping.

Camera detections are turned into element-specific point clouds, associated
across frames in the map frame and fitted with class-specific primitives by
robust Levenberg-Marquardt over two residual families: element points
against the primitive surface and contour viewing rays against the hull.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PinholeCamera, TimedPoints, Trajectory, interpolate_pose, points_to_map
from .primitives import (
    Circle,
    Cylinder,
    Landmark,
    Plane,
    Rectangle,
    SemanticClass,
    Triangle,
    orthonormal_basis,
    ray_hull_distance,
    signed_distance,
)
from .raster import points_in_polygon
from .solver import LMResult, levenberg_marquardt

log = logging.getLogger(__name__)

# simplest first; used to break near-ties in the shape prior
SHAPE_FAMILIES = ("circle", "triangle", "rectangle")


@dataclass(frozen=True, eq=False)
class Detection:
    """An instance mask (as a contour polygon) in one camera image."""

    frame_id: int
    cls: SemanticClass
    mask_polygon: np.ndarray
    camera: PinholeCamera
    truth_id: Optional[int] = None  # simulator sidecar, never read by the pipeline

    def __post_init__(self):
        object.__setattr__(self, "cls", SemanticClass(self.cls))
        poly = np.asarray(self.mask_polygon, dtype=float).reshape(-1, 2)
        if len(poly) < 3:
            raise ValueError("mask contour needs at least 3 vertices")
        if self.cls == SemanticClass.BACKGROUND:
            raise ValueError("detections cannot be background")
        object.__setattr__(self, "mask_polygon", poly)

    def contour_rays(self, max_samples: int = 32, border: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
        """Viewing rays through contour samples away from the image border."""
        samples = resample_contour(self.mask_polygon, max_samples)
        cam = self.camera
        keep = (
            (samples[:, 0] > border)
            & (samples[:, 0] < cam.width - border)
            & (samples[:, 1] > border)
            & (samples[:, 1] < cam.height - border)
        )
        samples = samples[keep]
        dirs = cam.ray_directions(samples) if len(samples) else np.zeros((0, 3))
        origins = np.broadcast_to(cam.center, dirs.shape).copy()
        return origins, dirs

    def center_ray(self) -> Tuple[np.ndarray, np.ndarray]:
        c = self.mask_polygon.mean(axis=0)
        return self.camera.center, self.camera.ray_directions(c[None, :])[0]


def resample_contour(poly: np.ndarray, max_samples: int) -> np.ndarray:
    """Points spaced evenly by arc length along a closed polygon (>= 1 px apart)."""
    poly = np.asarray(poly, dtype=float)
    seg = np.roll(poly, -1, axis=0) - poly
    lengths = np.linalg.norm(seg, axis=1)
    perimeter = float(lengths.sum())
    n = int(min(max_samples, max(3, math.floor(perimeter))))
    if perimeter <= 0:
        return poly[:1]
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    s = np.arange(n) * perimeter / n
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(poly) - 1)
    frac = (s - cum[idx]) / np.where(lengths[idx] > 0, lengths[idx], 1.0)
    return poly[idx] + frac[:, None] * seg[idx]


@dataclass
class ObservationSet:
    detections: List[Detection]
    element_clouds: List[np.ndarray]

    @property
    def cls(self) -> SemanticClass:
        return self.detections[0].cls

    @property
    def element_cloud(self) -> np.ndarray:
        clouds = [c for c in self.element_clouds if len(c)]
        return np.vstack(clouds) if clouds else np.zeros((0, 3))

    @property
    def first_frame(self) -> int:
        return min(d.frame_id for d in self.detections)


@dataclass
class FitResult:
    landmark: Optional[Landmark]
    final_cost: float
    iterations: int
    converged: bool
    inlier_fraction: float
    gradient_norm: float = float("nan")
    family: str = ""
    reason: str = ""
    support: int = 0
    num_detections: int = 0
    cost_history: List[float] = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return self.landmark is not None


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    huber_scale: float = 0.05
    ray_weight_ratio: float = 1.0
    min_support: int = 10
    min_inlier_fraction: float = 0.5
    inlier_distance: float = 0.15
    gradient_tolerance: float = 1e-6
    shape_preference_margin: float = 0.05
    gating_distance: float = 1.0
    max_points: int = 2000
    max_rays: int = 600
    contour_samples: int = 32
    border_margin: float = 1.0
    core_radius: float = 1.0
    foreground_gap: float = 0.5  # 0 keeps whole element clouds
    min_views: int = 2


# ---------------------------------------------------------------------------
# extraction and association


def extract_element_cloud(detection: Detection, scan_map: np.ndarray) -> np.ndarray:
    """Map-frame points projecting strictly inside the mask, in front of the camera."""
    pts = np.asarray(scan_map, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return pts
    uv, depth = detection.camera.project(pts)
    return pts[_mask_members(detection, uv, depth)]


def _mask_members(detection: Detection, uv: np.ndarray, depth: np.ndarray) -> np.ndarray:
    poly = detection.mask_polygon
    lo, hi = poly.min(axis=0), poly.max(axis=0)
    cand = (depth > 1e-6) & np.all(uv > lo, axis=1) & np.all(uv < hi, axis=1)
    idx = np.flatnonzero(cand)
    return idx[points_in_polygon(uv[idx], poly)]


def extract_element_clouds(detections: Sequence[Detection], scan_map: np.ndarray) -> List[np.ndarray]:
    """Element clouds for several detections, projecting once per camera."""
    pts = np.asarray(scan_map, dtype=float).reshape(-1, 3)
    out = []
    cache = {}
    for det in detections:
        if len(pts) == 0:
            out.append(pts)
            continue
        key = id(det.camera)
        if key not in cache:
            cache[key] = det.camera.project(pts)
        uv, depth = cache[key]
        out.append(pts[_mask_members(det, uv, depth)])
    return out


def foreground_cluster(cloud: np.ndarray, viewpoint, gap: float = 0.5, min_points: int = 3) -> np.ndarray:
    """The nearest depth cluster of an element cloud.

    Masks of thin or distant objects also catch returns from whatever lies
    behind them; the object itself is the first group of points, in depth
    order, whose consecutive gaps stay below ``gap``.
    """
    if len(cloud) < min_points:
        return cloud
    depth = np.linalg.norm(cloud - np.asarray(viewpoint), axis=1)
    order = np.argsort(depth, kind="stable")
    d = depth[order]
    breaks = np.flatnonzero(np.diff(d) > gap) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [len(d)]])
    for a, b in zip(starts, ends):
        if b - a >= min_points:
            return cloud[np.sort(order[a:b])]
    return cloud[np.sort(order[starts[0]:ends[0]])]


def _robust_centroid(cloud: np.ndarray) -> np.ndarray:
    return np.median(cloud, axis=0)


def _ray_point_distance(origin, direction, point) -> float:
    rel = np.asarray(point) - origin
    return float(np.linalg.norm(rel - (rel @ direction) * direction))


def associate_detections(
    detections: Sequence[Detection],
    element_clouds: Sequence[np.ndarray],
    gating_distance: float = 1.0,
) -> List[ObservationSet]:
    """Greedy nearest-neighbour association on element-cloud centroids.

    Detections are visited in the given order.  Ones without element points
    are held back and attached to the nearest set whose centroid lies within
    the gate of their central viewing ray, otherwise dropped.
    """
    sets: List[ObservationSet] = []
    sums: List[np.ndarray] = []
    counts: List[int] = []
    held = []
    for det, cloud in zip(detections, element_clouds):
        if len(cloud) == 0:
            held.append((det, cloud))
            continue
        c = _robust_centroid(cloud)
        best, best_d = -1, gating_distance
        for k, s in enumerate(sets):
            if s.cls != det.cls:
                continue
            d = float(np.linalg.norm(sums[k] / counts[k] - c))
            if d < best_d:
                best, best_d = k, d
        if best < 0:
            sets.append(ObservationSet([det], [cloud]))
            sums.append(c.copy())
            counts.append(1)
        else:
            sets[best].detections.append(det)
            sets[best].element_clouds.append(cloud)
            sums[best] += c
            counts[best] += 1
    for det, cloud in held:
        origin, direction = det.center_ray()
        best, best_d = -1, gating_distance
        for k, s in enumerate(sets):
            if s.cls != det.cls:
                continue
            d = _ray_point_distance(origin, direction, sums[k] / counts[k])
            if d < best_d:
                best, best_d = k, d
        if best < 0:
            log.debug("dropping detection in frame %s: no element points, no set in gate", det.frame_id)
            continue
        sets[best].detections.append(det)
        sets[best].element_clouds.append(cloud)
    return sets


# ---------------------------------------------------------------------------
# parameterisations (all in a local frame centred on the initial guess)


class _CylinderModel:
    nparams = 7

    def __init__(self, center0, axis0):
        self.center0 = np.asarray(center0, dtype=float)
        self.axis0 = np.asarray(axis0, dtype=float) / np.linalg.norm(axis0)
        self.e1, self.e2 = orthonormal_basis(self.axis0)

    def geometry(self, x) -> Cylinder:
        axis = self.axis0 + x[3] * self.e1 + x[4] * self.e2
        axis = axis / np.linalg.norm(axis)
        length, radius = x[5], x[6]
        center = self.center0 + x[:3]
        return Cylinder(center - 0.5 * length * axis, axis, length, radius)

    def valid(self, x) -> bool:
        return x[5] > 1e-4 and x[6] > 1e-4 and abs(x[3]) < 10 and abs(x[4]) < 10


class _PlaneModel:
    def __init__(self, center0, yaw0, family: str, apex_up: bool = True):
        self.center0 = np.asarray(center0, dtype=float)
        self.yaw0 = yaw0
        self.family = family
        self.apex_up = apex_up
        self.nparams = 6 if family == "rectangle" else 5

    def shape(self, x):
        if self.family == "rectangle":
            return Rectangle(x[4], x[5])
        if self.family == "circle":
            return Circle(x[4])
        return Triangle(x[4], self.apex_up)

    def geometry(self, x) -> Plane:
        return Plane.upright(self.center0 + x[:3], self.yaw0 + x[3], self.shape(x))

    def valid(self, x) -> bool:
        return bool(np.all(x[4:] > 1e-4))


def _subsample(arr: np.ndarray, limit: int) -> np.ndarray:
    if len(arr) <= limit:
        return arr
    idx = np.linspace(0, len(arr) - 1, limit).round().astype(int)
    return arr[idx]


class _Objective:
    """Residual function over the two families, normalised per family."""

    def __init__(self, model, points, ray_o, ray_d, ray_ratio: float):
        self.model = model
        self.points = points
        self.ray_o = ray_o
        self.ray_d = ray_d
        n_p, n_r = len(points), len(ray_o)
        c_p = np.full(n_p, 1.0 / n_p) if n_p else np.zeros(0)
        c_r = np.full(n_r, ray_ratio / n_r) if n_r else np.zeros(0)
        self.coef = np.concatenate([c_p, c_r])

    def point_residuals(self, geom) -> np.ndarray:
        if len(self.points) == 0:
            return np.zeros(0)
        if isinstance(geom, Cylinder):
            return signed_distance(geom, self.points)
        return signed_distance(geom, self.points)

    def __call__(self, x):
        if not self.model.valid(x):
            n = len(self.coef)
            return np.full(n, np.inf), self.coef
        geom = self.model.geometry(x)
        rp = self.point_residuals(geom)
        rr = ray_hull_distance(geom, self.ray_o, self.ray_d) if len(self.ray_o) else np.zeros(0)
        return np.concatenate([rp, rr]), self.coef


def _dense_core(points: np.ndarray, radius: float, horizontal: bool, limit: int = 1000) -> np.ndarray:
    """Points near the densest neighbourhood; guards initialisation against stray returns."""
    if len(points) < 3:
        return points
    coords = points[:, :2] if horizontal else points
    probe = _subsample(coords, limit)
    tree = cKDTree(coords)
    counts = tree.query_ball_point(probe, r=0.5 * radius, return_length=True)
    seed = probe[int(np.argmax(counts))]
    near = np.linalg.norm(coords - seed, axis=1) <= radius
    core = points[near]
    return core if len(core) >= 3 else points


def _init_cylinder(points: np.ndarray, rays_o: np.ndarray, cfg: SolverConfig):
    core = _dense_core(points, cfg.core_radius, horizontal=True)
    cxy = np.median(core[:, :2], axis=0)
    z0, z1 = float(core[:, 2].min()), float(core[:, 2].max())
    if z1 - z0 < 0.05:
        z0, z1 = z0 - 0.1, z1 + 0.1
    radial = np.linalg.norm(core[:, :2] - cxy, axis=1)
    radius = max(float(np.median(radial)), 0.02)
    if len(rays_o):
        # the visible surface faces the cameras; push the centre away from them
        view = cxy - rays_o[:, :2].mean(axis=0)
        nv = np.linalg.norm(view)
        if nv > 1e-9:
            cxy = cxy + 0.5 * radius * view / nv
    center = np.array([cxy[0], cxy[1], 0.5 * (z0 + z1)])
    return center, np.array([0.0, 0.0, 1.0]), z1 - z0, radius


def _init_plane(points: np.ndarray, rays_o: np.ndarray, cfg: SolverConfig):
    core = _dense_core(points, cfg.core_radius, horizontal=False)
    center = np.median(core, axis=0)
    xy = core[:, :2] - center[:2]
    normal = None
    if len(core) >= 5:
        cov = xy.T @ xy
        evals, evecs = np.linalg.eigh(cov)
        if evals[1] > 4 * max(evals[0], 1e-12):
            normal = evecs[:, 0]
    if normal is None:
        view = rays_o[:, :2].mean(axis=0) - center[:2] if len(rays_o) else np.array([1.0, 0.0])
        normal = view / max(np.linalg.norm(view), 1e-12)
    if len(rays_o) and normal @ (rays_o[:, :2].mean(axis=0) - center[:2]) < 0:
        normal = -normal
    yaw = math.atan2(normal[1], normal[0])
    plane = Plane.upright(center, yaw, Circle(1.0))
    loc = plane.to_local(core)
    a_lo, a_hi = np.percentile(loc[:, 0], [2, 98])
    b_lo, b_hi = np.percentile(loc[:, 1], [2, 98])
    shift = 0.5 * (a_lo + a_hi) * plane.right + 0.5 * (b_lo + b_hi) * plane.up
    width = max(float(a_hi - a_lo), 0.1)
    height = max(float(b_hi - b_lo), 0.1)
    return center + shift, yaw, width, height


def _fit_model(model, x0, points, ray_o, ray_d, cfg: SolverConfig) -> Tuple[LMResult, np.ndarray]:
    pts = _subsample(points, cfg.max_points)
    ro, rd = _subsample(ray_o, cfg.max_rays), _subsample(ray_d, cfg.max_rays)
    obj = _Objective(model, pts, ro, rd, cfg.ray_weight_ratio)
    res = levenberg_marquardt(
        obj, x0, delta=cfg.huber_scale, max_iterations=cfg.max_iterations,
        gradient_tolerance=cfg.gradient_tolerance, valid=model.valid,
    )
    # second pass without gross outliers (parallax, ground)
    r, _ = obj(res.x)
    keep_p = np.abs(r[: len(pts)]) <= 2 * cfg.inlier_distance
    keep_r = np.abs(r[len(pts):]) <= 2 * cfg.inlier_distance
    if keep_p.sum() >= 3 and (not keep_p.all() or not keep_r.all()):
        obj2 = _Objective(model, pts[keep_p], ro[keep_r], rd[keep_r], cfg.ray_weight_ratio)
        res2 = levenberg_marquardt(
            obj2, res.x, delta=cfg.huber_scale, max_iterations=cfg.max_iterations,
            gradient_tolerance=cfg.gradient_tolerance, valid=model.valid,
        )
        res2.iterations += res.iterations
        res2.cost_history = res.cost_history + res2.cost_history
        res = res2
    return res, res.x


def _inlier_fraction(geom, points, ray_o, ray_d, cfg: SolverConfig) -> float:
    """Share of point and contour-ray residuals within the inlier distance."""
    res = [np.abs(signed_distance(geom, points))] if len(points) else []
    if len(ray_o):
        res.append(np.abs(ray_hull_distance(geom, ray_o, ray_d)))
    if not res:
        return 0.0
    return float(np.mean(np.concatenate(res) <= cfg.inlier_distance))


def _observation_rays(obs: ObservationSet, cfg: SolverConfig):
    os_, ds = [], []
    for det in obs.detections:
        o, d = det.contour_rays(cfg.contour_samples, cfg.border_margin)
        os_.append(o)
        ds.append(d)
    if not os_:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return np.vstack(os_), np.vstack(ds)


def fit_cylinder(points, ray_o, ray_d, cfg: SolverConfig = SolverConfig(), init=None):
    """Fit a cylinder; returns ``(Cylinder, LMResult)``."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    center, axis, length, radius = init if init is not None else _init_cylinder(points, ray_o, cfg)
    model = _CylinderModel(center, axis)
    x0 = np.array([0, 0, 0, 0, 0, length, radius], dtype=float)
    res, x = _fit_model(model, x0, points, ray_o, ray_d, cfg)
    return model.geometry(x), res


def fit_plane(points, ray_o, ray_d, cfg: SolverConfig = SolverConfig(), families=SHAPE_FAMILIES):
    """Fit every sign family and keep the cheapest, preferring simpler ones on near-ties.

    Returns ``(Plane, LMResult, {family: cost})``.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    center, yaw, width, height = _init_plane(points, ray_o, cfg)
    candidates = []
    for family in families:
        variants = [True, False] if family == "triangle" else [True]
        best = None
        for apex_up in variants:
            model = _PlaneModel(center, yaw, family, apex_up)
            if family == "rectangle":
                dims = [width, height]
            elif family == "circle":
                dims = [0.5 * max(width, height)]
            else:
                dims = [max(width, height * 2 / math.sqrt(3))]
            x0 = np.array([0.0, 0.0, 0.0, 0.0] + dims)
            res, x = _fit_model(model, x0, points, ray_o, ray_d, cfg)
            if best is None or res.cost < best[1].cost:
                best = (model.geometry(x), res)
        candidates.append((family, best[0], best[1]))
    costs = {fam: res.cost for fam, _, res in candidates}
    lowest = min(costs.values())
    for fam, geom, res in candidates:  # ordered simplest first
        if res.cost <= lowest * (1 + cfg.shape_preference_margin) + 1e-15:
            return geom, res, costs
    raise AssertionError("unreachable")


def fit_landmark(obs: ObservationSet, cfg: SolverConfig = SolverConfig()) -> FitResult:
    """Estimate one map element from all of its masks and element points."""
    cloud = obs.element_cloud
    n_det = len(obs.detections)
    if len(cloud) < cfg.min_support:
        return FitResult(None, float("inf"), 0, False, 0.0, reason=f"insufficient support ({len(cloud)} points)",
                         support=len(cloud), num_detections=n_det)
    ray_o, ray_d = _observation_rays(obs, cfg)
    if obs.cls == SemanticClass.TRAFFIC_SIGN:
        geom, res, _ = fit_plane(cloud, ray_o, ray_d, cfg)
        family = geom.shape.family
    else:
        geom, res = fit_cylinder(cloud, ray_o, ray_d, cfg)
        family = "cylinder"
    landmark = Landmark(1, obs.cls, geom)
    return FitResult(
        landmark=landmark,
        final_cost=res.cost,
        iterations=res.iterations,
        converged=res.converged,
        inlier_fraction=_inlier_fraction(geom, cloud, ray_o, ray_d, cfg),
        gradient_norm=res.gradient_norm,
        family=family,
        support=len(cloud),
        num_detections=n_det,
        cost_history=res.cost_history,
    )


# ---------------------------------------------------------------------------
# pipeline


@dataclass(frozen=True, eq=False)
class Frame:
    frame_id: int
    timestamp: float
    scan: TimedPoints
    detections: Tuple[Detection, ...] = ()


@dataclass
class ParametricMap:
    landmarks: List[Landmark]
    diagnostics: List[FitResult] = field(default_factory=list)

    def __len__(self):
        return len(self.landmarks)

    def by_id(self) -> Dict[int, Landmark]:
        return {lm.instance_id: lm for lm in self.landmarks}


def scan_to_map(frame: Frame, trajectory: Trajectory, motion_compensation: bool = True) -> np.ndarray:
    """Scan points in the map frame, optionally ignoring intra-scan motion."""
    if motion_compensation:
        return points_to_map(frame.scan, trajectory)
    return interpolate_pose(trajectory, frame.timestamp).apply(frame.scan.positions)


def _fit_worker(args):
    obs, cfg = args
    return fit_landmark(obs, cfg)


def _suppress_duplicates(results: List[Tuple[ObservationSet, FitResult]], gate: float):
    kept: List[Tuple[ObservationSet, FitResult]] = []
    order = sorted(range(len(results)), key=lambda i: (-results[i][1].support, i))
    for i in order:
        obs, fr = results[i]
        # closer than the association gate means the same physical element,
        # whatever class a stray mask claimed for it
        dup = any(np.linalg.norm(k[1].landmark.anchor - fr.landmark.anchor) < gate for k in kept)
        if dup:
            fr.reason = "duplicate of a better-supported landmark"
        else:
            kept.append((obs, fr))
    return kept


def build_map(
    frames: Sequence[Frame],
    trajectory: Trajectory,
    cfg: SolverConfig = SolverConfig(),
    motion_compensation: bool = True,
    workers: int = 1,
) -> ParametricMap:
    """extract -> associate -> fit -> filter; ids follow first-frame appearance."""
    dets, clouds = [], []
    for frame in sorted(frames, key=lambda f: f.frame_id):
        if not frame.detections:
            continue
        scan_map = scan_to_map(frame, trajectory, motion_compensation)
        for det, cloud in zip(frame.detections, extract_element_clouds(frame.detections, scan_map)):
            dets.append(det)
            clouds.append(foreground_cluster(cloud, det.camera.center, cfg.foreground_gap) if cfg.foreground_gap > 0 else cloud)
    if not dets:
        return ParametricMap([], [])
    sets = associate_detections(dets, clouds, cfg.gating_distance)
    sets.sort(key=lambda s: s.first_frame)  # stable: creation order breaks ties
    fits: List[Optional[FitResult]] = [None] * len(sets)
    todo = []
    for k, obs in enumerate(sets):
        if len(obs.detections) < cfg.min_views:
            fits[k] = FitResult(None, float("inf"), 0, False, 0.0,
                                reason=f"seen in {len(obs.detections)} view(s), need {cfg.min_views}",
                                support=len(obs.element_cloud), num_detections=len(obs.detections))
        else:
            todo.append(k)
    jobs = [(sets[k], cfg) for k in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_fit_worker, jobs))
    else:
        done = [_fit_worker(j) for j in jobs]
    for k, fr in zip(todo, done):
        fits[k] = fr
    good = []
    for obs, fr in zip(sets, fits):
        if not fr.accepted:
            continue
        if not fr.converged:
            fr.reason = "did not converge"
        elif fr.inlier_fraction < cfg.min_inlier_fraction:
            fr.reason = f"inlier fraction {fr.inlier_fraction:.2f} below threshold"
        else:
            good.append((obs, fr))
    kept = _suppress_duplicates(good, cfg.gating_distance)
    kept_ids = {id(fr) for _, fr in kept}
    landmarks = []
    next_id = 1
    for obs, fr in zip(sets, fits):
        if id(fr) in kept_ids:
            fr.landmark = fr.landmark.with_id(next_id)
            landmarks.append(fr.landmark)
            next_id += 1
    return ParametricMap(landmarks, fits)
