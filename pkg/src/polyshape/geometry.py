"""Small planar geometry kernels (vectorised over points where it matters)."""
from __future__ import annotations

import numpy as np


def signed_area(poly) -> float:
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def points_in_polygon(points, poly, chunk=8192) -> np.ndarray:
    """Even-odd ray casting; points exactly on an edge may go either way."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    p = np.asarray(poly, dtype=float)
    if len(pts) > chunk:
        return np.concatenate([points_in_polygon(pts[i:i + chunk], p, chunk)
                               for i in range(0, len(pts), chunk)])
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    x1, y1 = p[:, 0][None, :], p[:, 1][None, :]
    x2, y2 = np.roll(p[:, 0], -1)[None, :], np.roll(p[:, 1], -1)[None, :]
    straddle = (y1 > y) != (y2 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
    crossing = straddle & (x < xint)
    return (np.count_nonzero(crossing, axis=1) % 2) == 1


def point_segment_distance(points, a, b) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = np.asarray(a, dtype=float)
    d = np.asarray(b, dtype=float) - a
    L2 = float(d @ d)
    if L2 == 0.0:
        return np.hypot(*(pts - a).T)
    s = np.clip(((pts - a) @ d) / L2, 0.0, 1.0)
    proj = a + s[:, None] * d
    return np.hypot(*(pts - proj).T)


def points_to_segments(points, seg_a, seg_b) -> np.ndarray:
    """Distance matrix (n_points, n_segments)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))[:, None, :]
    a = np.asarray(seg_a, dtype=float)[None, :, :]
    d = np.asarray(seg_b, dtype=float)[None, :, :] - a
    L2 = np.sum(d * d, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(L2 > 0, np.sum((pts - a) * d, axis=-1) / L2, 0.0)
    s = np.clip(s, 0.0, 1.0)
    proj = a + s[..., None] * d
    return np.linalg.norm(pts - proj, axis=-1)


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def segments_cross(p1, p2, q1, q2, tol=0.0) -> bool:
    """True when the segments intersect at a point interior to both."""
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    return ((d1 > tol and d2 < -tol) or (d1 < -tol and d2 > tol)) and \
           ((d3 > tol and d4 < -tol) or (d3 < -tol and d4 > tol))


def segment_distance(p1, p2, q1, q2) -> float:
    if segments_cross(p1, p2, q1, q2):
        return 0.0
    return float(min(
        point_segment_distance([p1], q1, q2)[0],
        point_segment_distance([p2], q1, q2)[0],
        point_segment_distance([q1], p1, p2)[0],
        point_segment_distance([q2], p1, p2)[0],
    ))


def is_simple(poly, tol=0.0) -> bool:
    """No two non-adjacent edges of the closed polygon touch or cross."""
    p = np.asarray(poly, dtype=float)
    n = len(p)
    if n < 3 or abs(signed_area(p)) <= tol:
        return False
    for i in range(n):
        a, b = p[i], p[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            c, d = p[j], p[(j + 1) % n]
            if segment_distance(a, b, c, d) <= tol:
                return False
    return True


def is_convex(poly) -> bool:
    p = np.asarray(poly, dtype=float)
    n = len(p)
    s = np.sign(signed_area(p))
    for i in range(n):
        if s * _orient(p[i - 1], p[i], p[(i + 1) % n]) < -1e-14:
            return False
    return True
