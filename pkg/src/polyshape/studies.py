"""Reusable numerical experiments: manufactured series solutions on sector
disks and the singularity-exponent fit from finite-element gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fan import TWO_PI, VertexFan
from .fem import FemSolution, FunctionDensity, gradient_sample_ray
from .partition import PolygonalPartition, build_partition
from .samples import sector_disk_spec
from .spectral import (SeriesExpansion, fit_singularity_exponent, from_coefficients, series_at_points,
                       spectral_basis)


@dataclass
class SeriesProblem:
    """Sector disk of radius ``radius`` around the origin whose exact solution
    is a truncated series expansion (convergence radius r0 = 2 radius)."""

    partition: PolygonalPartition
    fan: VertexFan
    expansion: SeriesExpansion
    flux: FunctionDensity


def series_problem(widths, sigmas, coefficients, radius: float = 1.0, n_boundary: int = 128) -> SeriesProblem:
    widths = np.asarray(widths, dtype=float)
    fan = VertexFan.from_sectors(widths, sigmas)
    basis = spectral_basis(fan, len(coefficients))
    exp = from_coefficients(basis, 2.0 * radius, 0.0, coefficients)
    starts = np.concatenate([[0.0], np.cumsum(widths)[:-1]])
    P = build_partition(sector_disk_spec(starts, sigmas, radius, n_boundary))

    def flux(points, normals):
        sv = series_at_points(exp, points)
        sig = fan.a(fan.to_local(points)[1])
        return sig * np.sum(sv.gradient * normals, axis=1)

    return SeriesProblem(P, fan, exp, FunctionDensity(flux))


def l2_error(sol: FemSolution, exp: SeriesExpansion, r_min: float = 0.0, center=(0.0, 0.0)) -> float:
    """Relative L2 error against the expansion over triangles whose centroid
    lies farther than r_min from the vertex.  Constants are aligned by the
    same boundary-mean normalisation as the discrete solution."""
    m = sol.mesh
    T, x = m.triangles, m.nodes
    exact_nodes = series_at_points(exp, x).value
    shift = float(sol.system.boundary_mass @ exact_nodes) / sol.system.boundary_length
    cent = x[T].mean(axis=1)
    sel = np.hypot(*(cent - np.asarray(center)).T) > r_min
    w = sol.system.areas[sel] / 3
    err2 = ref2 = 0.0
    # edge-midpoint rule, exact for quadratics
    for i, j in ((0, 1), (1, 2), (2, 0)):
        mid = 0.5 * (x[T[sel, i]] + x[T[sel, j]])
        uh = 0.5 * (sol.values[T[sel, i]] + sol.values[T[sel, j]])
        ue = series_at_points(exp, mid).value - shift
        err2 += float(np.sum(w * (uh - ue) ** 2))
        ref2 += float(np.sum(w * ue * ue))
    return float(np.sqrt(err2 / ref2))


def observed_orders(hs, errors) -> list:
    hs, errors = np.asarray(hs, dtype=float), np.asarray(errors, dtype=float)
    return (np.log(errors[:-1] / errors[1:]) / np.log(hs[:-1] / hs[1:])).tolist()


def leading_direction(fan: VertexFan, gamma1_mode) -> float:
    """Global angle of the ray through the maximum of |v_1| (an interior
    direction where the leading mode is strongest)."""
    th = np.linspace(0.0, TWO_PI, 2881)[:-1]
    k = fan.sector_of(th)
    # keep away from interfaces so the ray stays inside one sector
    left = th - fan.angles[k]
    right = fan.angles[k + 1] - th
    ok = np.minimum(left, right) > 0.1 * fan.widths[k]
    v = np.abs(gamma1_mode(th))
    v[~ok] = -1
    return float(th[np.argmax(v)] + fan.offset)


@dataclass
class SingularityFit:
    gamma_hat: float
    gamma_1: float
    relative_difference: float
    samples: np.ndarray
    diagnostics: object
    direction: float


def fit_from_solution(sol: FemSolution, fan: VertexFan, radii, direction: float | None = None,
                      gamma_1: float | None = None) -> SingularityFit:
    basis = spectral_basis(fan, 1)
    g1 = float(basis.modes[0].gamma) if gamma_1 is None else gamma_1
    if direction is None:
        direction = leading_direction(fan, basis.modes[0])
    samples = gradient_sample_ray(sol, fan.center, (np.cos(direction), np.sin(direction)), radii)
    gh, diag = fit_singularity_exponent(samples)
    return SingularityFit(gh, g1, abs(gh - g1) / g1, samples, diag, float(direction))
