"""Local sector description of the conductivity around one vertex."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class VertexFan:
    """Piecewise-constant angular coefficient a(theta) around a point.

    ``angles`` holds the sector boundaries 0 = b_0 < b_1 < ... < b_K = 2*pi in
    a local frame whose zero direction has global polar angle ``offset``;
    ``sigmas[k]`` is the conductivity on (b_k, b_{k+1}).  Adjacent sectors with
    equal conductivity (cyclically) are merged on construction, so K is the
    number of genuine interfaces (K = 1 for a homogeneous neighbourhood).
    """

    angles: np.ndarray
    sigmas: np.ndarray
    center: np.ndarray = field(default_factory=lambda: np.zeros(2))
    offset: float = 0.0
    merge_rtol: float = 1e-12

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=float).copy()
        sigmas = np.asarray(self.sigmas, dtype=float).copy()
        if sigmas.ndim != 1 or len(sigmas) < 1:
            raise ArgumentError("a fan needs at least one sector")
        if angles.shape != (len(sigmas) + 1,):
            raise ArgumentError("angles must have one more entry than sigmas")
        if angles[0] != 0.0 or abs(angles[-1] - TWO_PI) > 1e-12:
            raise ArgumentError("angles must run from 0 to 2*pi")
        angles[-1] = TWO_PI
        if np.any(np.diff(angles) <= 0):
            raise ArgumentError("angles must be strictly increasing")
        if np.any(sigmas <= 0) or not np.all(np.isfinite(sigmas)):
            raise ArgumentError("conductivities must be positive and finite")

        angles, sigmas, shift = _merge(angles, sigmas, self.merge_rtol)
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "offset", float(self.offset) + shift)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    @classmethod
    def from_sectors(cls, widths, sigmas, **kwargs) -> "VertexFan":
        """Build from sector widths (radians, summing to 2*pi)."""
        widths = np.asarray(widths, dtype=float)
        if abs(widths.sum() - TWO_PI) > 1e-10:
            raise ArgumentError(f"sector widths sum to {widths.sum()!r}, not 2*pi")
        angles = np.concatenate([[0.0], np.cumsum(widths)])
        angles[-1] = TWO_PI
        return cls(angles, sigmas, **kwargs)

    @property
    def K(self) -> int:
        return len(self.sigmas)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.angles)

    @property
    def ratios(self) -> np.ndarray:
        """sigma_k / sigma_{k+1}, cyclic; the flux jump factor at the end of sector k."""
        return self.sigmas / np.roll(self.sigmas, -1)

    def sector_of(self, theta) -> np.ndarray:
        """Sector index of local angle(s) theta (taken modulo 2*pi)."""
        th = np.mod(theta, TWO_PI)
        k = np.searchsorted(self.angles, th, side="right") - 1
        return np.clip(k, 0, self.K - 1)

    def a(self, theta) -> np.ndarray:
        """The coefficient a(theta) at local angle(s)."""
        return self.sigmas[self.sector_of(theta)]

    def to_local(self, points):
        """Polar coordinates (r, local theta) of global points."""
        d = np.atleast_2d(np.asarray(points, dtype=float)) - self.center
        r = np.hypot(d[:, 0], d[:, 1])
        theta = np.mod(np.arctan2(d[:, 1], d[:, 0]) - self.offset, TWO_PI)
        return r, theta


def _merge(angles, sigmas, rtol):
    K = len(sigmas)
    if K == 1:
        return angles, sigmas, 0.0
    nxt = np.roll(sigmas, -1)
    # interface at the end of sector k is genuine when the conductivity changes
    genuine = ~np.isclose(sigmas, nxt, rtol=rtol, atol=0.0)
    if not genuine.any():
        return np.array([0.0, TWO_PI]), sigmas[:1].copy(), 0.0
    # interface positions (end of sector k), sector that starts there is k+1
    ends = angles[1:][genuine] % TWO_PI
    starts = (np.nonzero(genuine)[0] + 1) % K
    order = np.argsort(ends, kind="stable")
    ends, starts = ends[order], starts[order]
    shift = ends[0]
    new_angles = np.concatenate([ends - shift, [TWO_PI]])
    new_sigmas = sigmas[starts]
    return new_angles, new_sigmas, float(shift)
