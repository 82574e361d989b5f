"""Builders for the standard test geometries (as partition spec dicts)."""
from __future__ import annotations

import numpy as np

from .fan import TWO_PI


def disk_polygon(radius: float = 1.0, n: int = 96, center=(0.0, 0.0), angles=()) -> np.ndarray:
    """Regular n-gon inscribed in a circle, with extra vertices at ``angles``."""
    th = np.linspace(0.0, TWO_PI, n, endpoint=False)
    if len(angles):
        extra = np.mod(np.asarray(angles, dtype=float), TWO_PI)
        th = np.unique(np.concatenate([th, extra]))
        # drop regular points crowding an inserted one
        keep = np.ones(len(th), dtype=bool)
        for a in extra:
            gap = np.abs(np.angle(np.exp(1j * (th - a))))
            keep &= ~((gap > 1e-12) & (gap < 0.3 * TWO_PI / n))
        th = th[keep]
    return np.stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)], axis=1)


def _arc_indices(th, a, b):
    """Indices of polygon angles on the counterclockwise arc [a, b]."""
    rel = np.mod(th - a, TWO_PI)
    span = np.mod(b - a, TWO_PI) or TWO_PI
    idx = np.nonzero(rel <= span + 1e-12)[0]
    return idx[np.argsort(rel[idx])]


def sector_disk_spec(angles, sigmas, radius: float = 1.0, n: int = 96, offset: float = 0.0) -> dict:
    """Disk split into sectors meeting at the centre.

    ``angles`` are the K interface directions (radians, increasing, the first
    one at ``offset``); sector k spans angles[k]..angles[k+1] and carries
    sigmas[k].  The interfaces reach the boundary, so the result is only
    usable with validation bypassed.
    """
    angles = np.asarray(angles, dtype=float) + offset
    dom = disk_polygon(radius, n, angles=angles)
    th = np.mod(np.arctan2(dom[:, 1], dom[:, 0]), TWO_PI)
    polys = []
    K = len(angles)
    for k in range(K):
        a, b = angles[k], angles[(k + 1) % K] if k + 1 < K else angles[0] + TWO_PI
        idx = _arc_indices(th, np.mod(a, TWO_PI), np.mod(b, TWO_PI))
        verts = [[0.0, 0.0]] + dom[idx].tolist()
        polys.append({"id": k + 1, "vertices": verts})
    sig = {str(k + 1): float(s) for k, s in enumerate(sigmas)}
    sig["background"] = float(sigmas[0])
    return {"domain": dom.tolist(), "polygons": polys, "sigma": sig}


def half_disk_spec(sigma_right: float = 1.0, sigma_left: float = 5.0, radius: float = 1.0, n: int = 96) -> dict:
    """Disk split by the y-axis: region 1 is x > 0, the background is x < 0."""
    dom = disk_polygon(radius, n, angles=(np.pi / 2, 3 * np.pi / 2))
    th = np.mod(np.arctan2(dom[:, 1], dom[:, 0]), TWO_PI)
    idx = _arc_indices(th, 3 * np.pi / 2, np.pi / 2)
    return {"domain": dom.tolist(), "polygons": [{"id": 1, "vertices": dom[idx].tolist()}],
            "sigma": {"1": float(sigma_right), "background": float(sigma_left)}}


def homogeneous_spec(domain, sigma: float = 1.0) -> dict:
    return {"domain": np.asarray(domain, dtype=float).tolist(), "polygons": [], "sigma": {"background": float(sigma)}}


def square_in_disk_spec(half: float = 0.3, sigma_in: float = 5.0, sigma_out: float = 1.0,
                        radius: float = 1.0, n: int = 96) -> dict:
    s = half
    return {
        "domain": disk_polygon(radius, n).tolist(),
        "polygons": [{"id": 1, "vertices": [[-s, -s], [s, -s], [s, s], [-s, s]]}],
        "sigma": {"1": float(sigma_in), "background": float(sigma_out)},
        "admissibility": {"d0": 0.4, "r1": 0.25, "beta_bar": 0.2, "c0": 10.0},
    }
