"""Polygon rasterisation helpers on pixel-center grids.

Coordinates follow the geometry module: ``(u, v)`` = (column, row) with
pixel centers at ``+0.5``.  Fill functions return ``(rows, cols)`` index
arrays; columns are *not* wrapped so callers can handle the azimuth seam.
"""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np
from scipy import ndimage

_EPS = 1e-9


def convex_hull(points) -> np.ndarray:
    """Counter-clockwise hull (Andrew's monotone chain), collinear points dropped.

    Fewer than three distinct or all-collinear inputs return the distinct
    extreme points (one or two of them).
    """
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    return np.array(hull)


def polygon_area(poly) -> float:
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def fill_polygon(poly, height: int) -> Tuple[np.ndarray, np.ndarray]:
    """Even-odd scanline fill; a pixel is set when its center is inside.

    Rows outside ``[0, height)`` are skipped.  Columns are unbounded.
    """
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 3:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    r_lo = max(int(math.floor(y0.min() - 0.5)), 0)
    r_hi = min(int(math.ceil(y0.max() - 0.5)), height - 1)
    rows_out, cols_out = [], []
    for r in range(r_lo, r_hi + 1):
        yc = r + 0.5
        crosses = (y0 > yc) != (y1 > yc)
        if not np.any(crosses):
            continue
        xa, ya, xb, yb = x0[crosses], y0[crosses], x1[crosses], y1[crosses]
        xs = np.sort(xa + (yc - ya) * (xb - xa) / (yb - ya))
        for left, right in zip(xs[0::2], xs[1::2]):
            c0 = int(math.ceil(left - 0.5))
            c1 = int(math.ceil(right - 0.5)) - 1
            if c1 >= c0:
                cols = np.arange(c0, c1 + 1)
                cols_out.append(cols)
                rows_out.append(np.full(len(cols), r))
    if not rows_out:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(rows_out).astype(np.int64), np.concatenate(cols_out).astype(np.int64)


def fill_convex_inclusive(hull, height: int, eps: float = _EPS) -> Tuple[np.ndarray, np.ndarray]:
    """Fill a convex polygon (or degenerate segment/point) including its boundary.

    For each pixel-center row the horizontal chord through the hull is
    computed from its edges; centers within ``eps`` of the chord are kept.
    """
    hull = np.asarray(hull, dtype=float).reshape(-1, 2)
    if len(hull) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    if len(hull) == 1:
        edges = [(hull[0], hull[0])]
    elif len(hull) == 2:
        edges = [(hull[0], hull[1])]
    else:
        edges = [(hull[i], hull[(i + 1) % len(hull)]) for i in range(len(hull))]
    ys = hull[:, 1]
    r_lo = max(int(math.ceil(ys.min() - eps - 0.5)), 0)
    r_hi = min(int(math.floor(ys.max() + eps - 0.5)), height - 1)
    rows_out, cols_out = [], []
    for r in range(r_lo, r_hi + 1):
        yc = r + 0.5
        xs = []
        for a, b in edges:
            ya, yb = a[1], b[1]
            if min(ya, yb) - eps <= yc <= max(ya, yb) + eps:
                if abs(yb - ya) <= eps:
                    xs.extend([a[0], b[0]])
                else:
                    t = min(max((yc - ya) / (yb - ya), 0.0), 1.0)
                    xs.append(a[0] + t * (b[0] - a[0]))
        if not xs:
            continue
        c0 = int(math.ceil(min(xs) - eps - 0.5))
        c1 = int(math.floor(max(xs) + eps - 0.5))
        if c1 >= c0:
            cols = np.arange(c0, c1 + 1)
            cols_out.append(cols)
            rows_out.append(np.full(len(cols), r))
    if not rows_out:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(rows_out).astype(np.int64), np.concatenate(cols_out).astype(np.int64)


def points_in_polygon(points, poly) -> np.ndarray:
    """Even-odd crossing test for many points against one polygon."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    poly = np.asarray(poly, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    n = len(poly)
    for i in range(n):
        xa, ya = poly[i]
        xb, yb = poly[(i + 1) % n]
        if ya == yb:
            continue
        k = np.flatnonzero((ya > y) != (yb > y))
        # only crossing rows, where |y - ya| <= |yb - ya| keeps the quotient bounded
        xint = xa + (y[k] - ya) * (xb - xa) / (yb - ya)
        inside[k] ^= x[k] < xint
    return inside


def unwrap_columns(u, width: int, reference: float) -> np.ndarray:
    """Shift azimuth columns so they are continuous around ``reference``."""
    u = np.asarray(u, dtype=float)
    return reference + np.mod(u - reference + width / 2, width) - width / 2


def dilate(mask: np.ndarray, pixels: int, wrap_columns: bool = False) -> np.ndarray:
    """8-connected binary dilation by ``pixels`` steps."""
    if pixels <= 0:
        return mask.copy()
    struct = np.ones((3, 3), dtype=bool)
    if not wrap_columns:
        return ndimage.binary_dilation(mask, structure=struct, iterations=pixels)
    # wrapped copies of the opposite edge carry growth across the seam
    pad = pixels
    padded = np.concatenate([mask[:, -pad:], mask, mask[:, :pad]], axis=1)
    grown = ndimage.binary_dilation(padded, structure=struct, iterations=pixels)
    return grown[:, pad:-pad]
