"""Angular spectrum of the conductivity equation at a vertex.

Separating variables u = r**gamma * v(theta) in div(a grad u) = 0 around a
vertex gives the periodic Sturm-Liouville problem (a v')' + gamma**2 a v = 0.
On each sector v is trigonometric, and the pair (v, v') is propagated across a
sector of width delta and the interface at its end by a 2x2 transfer matrix.
Exponents gamma are the roots of D(gamma) = det(M_K ... M_1 - I).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import ArgumentError, ConsistencyError, DomainError
from .fan import TWO_PI, VertexFan

GRID_STEP = 1e-3
TANGENCY_TOL = 1e-9
KERNEL_RTOL = 1e-8
ROOT_TOL = 1e-6


def transfer_matrix(gamma: float, delta: float, ratio: float) -> np.ndarray:
    """Propagate (v, v') across a sector of width ``delta`` and the interface at its end.

    ``ratio`` is sigma_k / sigma_{k+1}: v is continuous at the interface and
    the conormal derivative a*v' is continuous, so v' is scaled by the ratio.
    """
    if not gamma > 0:
        raise ArgumentError(f"gamma must be positive, got {gamma!r}")
    if not ratio > 0:
        raise ArgumentError(f"conductivity ratio must be positive, got {ratio!r}")
    if not 0 <= delta <= TWO_PI:
        raise ArgumentError(f"sector angle must lie in [0, 2*pi], got {delta!r}")
    c, s = np.cos(gamma * delta), np.sin(gamma * delta)
    return np.array([[c, s / gamma], [-ratio * gamma * s, ratio * c]])


def _sector_matrices(gammas, fan):
    """Transfer matrices and their gamma-derivatives, shape (K, n, 2, 2)."""
    g = np.asarray(gammas, dtype=float)[None, :]
    d = fan.widths[:, None]
    r = fan.ratios[:, None]
    c, s = np.cos(g * d), np.sin(g * d)
    M = np.empty((fan.K, g.shape[1], 2, 2))
    M[..., 0, 0] = c
    M[..., 0, 1] = s / g
    M[..., 1, 0] = -r * g * s
    M[..., 1, 1] = r * c
    dM = np.empty_like(M)
    dM[..., 0, 0] = -d * s
    dM[..., 0, 1] = d * c / g - s / g**2
    dM[..., 1, 0] = -r * (s + g * d * c)
    dM[..., 1, 1] = -r * d * s
    return M, dM


def monodromy(gammas, fan: VertexFan, derivative: bool = False):
    """Product M_K ... M_1 for each gamma (and optionally its gamma-derivative)."""
    M, dM = _sector_matrices(np.atleast_1d(gammas), fan)
    P = M[0]
    dP = dM[0]
    for k in range(1, fan.K):
        dP = dM[k] @ P + M[k] @ dP
        P = M[k] @ P
    return (P, dP) if derivative else P


def _det(gammas, fan):
    P = monodromy(gammas, fan)
    return 2.0 - (P[:, 0, 0] + P[:, 1, 1])


def _det_prime(gammas, fan):
    _, dP = monodromy(gammas, fan, derivative=True)
    return -(dP[:, 0, 0] + dP[:, 1, 1])


def closed_form_determinant(gamma: float, fan: VertexFan) -> tuple[float, float]:
    """Expanded determinant for a three-sector fan.

    Returns the value and the sum of absolute values of its terms (a scale for
    relative comparisons).
    """
    if fan.K != 3:
        raise ArgumentError("closed form is available for three sectors only")
    s1, s2, s3 = fan.sigmas
    b1, b2 = fan.angles[1], fan.angles[2]
    mu2 = s3 / s1 + s1 / s3 - 2
    mu1 = s3 / s2 + s2 / s3 - 2
    mu3 = s2 / s1 + s1 / s2 - 2
    g = gamma
    terms = np.array([
        2 * (1 - np.cos(TWO_PI * g)),
        mu2 * np.sin(g * b1) * np.sin(g * (TWO_PI - b2)) * np.cos(g * (b2 - b1)),
        mu1 * np.sin(g * (b2 - b1)) * np.sin(g * (TWO_PI - b2)) * np.cos(g * b1),
        mu3 * np.sin(g * b1) * np.sin(g * (b2 - b1)) * np.cos(g * (TWO_PI - b2)),
    ])
    return float(terms.sum()), float(np.abs(terms).sum())


def characteristic_determinant(gamma: float, fan: VertexFan, check: bool = True) -> float:
    """D(gamma) = det(M_K...M_1 - I), computed as 2 - trace (det of the product is 1).

    For three sectors the product form is compared with the expanded closed
    form; a disagreement beyond 1e-11 relative raises ConsistencyError.
    """
    if not gamma > 0:
        raise ArgumentError(f"gamma must be positive, got {gamma!r}")
    if fan.K < 1:
        raise ArgumentError("empty fan")
    P = monodromy(gamma, fan)[0]
    value = 2.0 - np.trace(P)
    if check and fan.K == 3:
        closed, scale = closed_form_determinant(gamma, fan)
        scale = max(1.0, scale, float(np.abs(P).max()))
        if abs(value - closed) > 1e-11 * scale:
            raise ConsistencyError(
                f"product form {value!r} and closed form {closed!r} disagree at gamma={gamma!r}")
    return float(value)


@dataclass(frozen=True)
class Exponent:
    gamma: float
    multiplicity: int
    det_residual: float


def _multiplicity(gamma, fan):
    P = monodromy(gamma, fan)[0]
    s = np.linalg.svd(P - np.eye(2), compute_uv=False)
    thr = KERNEL_RTOL * max(1.0, np.abs(P).max())
    return max(1, int(np.sum(s < thr)))


def find_exponents(fan: VertexFan, gamma_max: float, step: float = GRID_STEP) -> list[Exponent]:
    """All roots of D in (0, gamma_max].

    Sign changes on a uniform grid are bracketed and refined; touching zeros
    (double roots, which never change sign) are found at local extrema of |D|
    by refining the root of D' and accepting when |D| < 1e-9 there.
    """
    if gamma_max < 1:
        raise ArgumentError("gamma_max must be at least 1")
    n = int(np.floor(gamma_max / step + 1e-9))
    grid = step * np.arange(1, n + 1)
    if grid[-1] < gamma_max:
        grid = np.append(grid, gamma_max)
    D = _det(grid, fan)

    def f(g):
        return _det(np.array([g]), fan)[0]

    def fp(g):
        return _det_prime(np.array([g]), fan)[0]

    roots = []
    for i in range(len(grid) - 1):
        if D[i] == 0.0:
            roots.append(grid[i])
        elif D[i] * D[i + 1] < 0:
            roots.append(brentq(f, grid[i], grid[i + 1], xtol=1e-14, rtol=1e-15))
    if D[-1] == 0.0:
        roots.append(grid[-1])

    # touching zeros: interior local extrema of D pointing towards zero
    for i in range(1, len(grid) - 1):
        lo, mid, hi = D[i - 1], D[i], D[i + 1]
        if mid == 0.0 or lo * mid <= 0 or mid * hi <= 0:
            continue
        towards_zero = (mid > 0 and mid <= lo and mid <= hi) or (mid < 0 and mid >= lo and mid >= hi)
        if not towards_zero:
            continue
        a, b = grid[i - 1], grid[i + 1]
        pa, pb = fp(a), fp(b)
        if pa * pb > 0:
            continue
        g_star = brentq(fp, a, b, xtol=1e-15, rtol=1e-15) if pa * pb < 0 else (a if pa == 0 else b)
        d_star = f(g_star)
        if abs(d_star) < TANGENCY_TOL:
            roots.append(g_star)
        elif d_star * mid < 0:
            # two close simple roots inside one grid cell
            roots.append(brentq(f, a, g_star, xtol=1e-14, rtol=1e-15))
            roots.append(brentq(f, g_star, b, xtol=1e-14, rtol=1e-15))

    roots = sorted(roots)
    unique = []
    for g in roots:
        if unique and g - unique[-1] < 1e-9:
            continue
        unique.append(g)
    return [Exponent(float(g), _multiplicity(g, fan), float(f(g))) for g in unique]


@dataclass(frozen=True)
class Eigenfunction:
    """Piecewise trigonometric angular mode.

    On sector k, v(theta) = A_k cos(gamma t) + (B_k / gamma) sin(gamma t) with
    t = theta - b_k, i.e. (A_k, B_k) = (v, v') at the start of the sector.
    """

    fan: VertexFan
    gamma: float
    coeffs: np.ndarray  # (K, 2)

    def __call__(self, theta):
        return self.evaluate(theta)[0]

    def evaluate(self, theta):
        """(v, dv/dtheta) at local angle(s) theta."""
        theta = np.asarray(theta, dtype=float)
        th = np.mod(theta, TWO_PI)
        k = self.fan.sector_of(th)
        t = th - self.fan.angles[k]
        A, B = self.coeffs[k, 0], self.coeffs[k, 1]
        g = self.gamma
        c, s = np.cos(g * t), np.sin(g * t)
        return A * c + B / g * s, -A * g * s + B * c

    def end_values(self):
        """(v, v') at the end of each sector, from that sector's own coefficients."""
        g = self.gamma
        d = self.fan.widths
        c, s = np.cos(g * d), np.sin(g * d)
        A, B = self.coeffs[:, 0], self.coeffs[:, 1]
        return A * c + B / g * s, -A * g * s + B * c

    def interface_residuals(self):
        """Jumps of v and of a*v' at every interface (cyclically)."""
        v_end, dv_end = self.end_values()
        nxt = np.roll(np.arange(self.fan.K), -1)
        jump_v = np.abs(self.coeffs[nxt, 0] - v_end)
        jump_flux = np.abs(self.fan.sigmas[nxt] * self.coeffs[nxt, 1] - self.fan.sigmas * dv_end)
        return jump_v, jump_flux


def _sector_gram(gamma, widths):
    """Integrals of cos^2, cos*sin, sin^2 of gamma*t over [0, width]."""
    g, d = gamma, widths
    s2 = np.sin(2 * g * d) / (4 * g)
    icc = d / 2 + s2
    iss = d / 2 - s2
    ics = np.sin(g * d) ** 2 / (2 * g)
    return icc, ics, iss


def weighted_inner(f1: Eigenfunction, f2: Eigenfunction) -> float:
    """Closed-form int_0^{2pi} a v1 v2 dtheta for two modes with the same gamma."""
    if f1.gamma != f2.gamma:
        raise ArgumentError("closed-form inner product needs equal exponents")
    g = f1.gamma
    icc, ics, iss = _sector_gram(g, f1.fan.widths)
    A1, B1 = f1.coeffs.T
    A2, B2 = f2.coeffs.T
    per = A1 * A2 * icc + (A1 * B2 + A2 * B1) / g * ics + B1 * B2 / g**2 * iss
    return float(np.sum(f1.fan.sigmas * per))


def _propagate(fan, gamma, x0):
    coeffs = np.empty((fan.K, 2))
    x = np.asarray(x0, dtype=float)
    for k in range(fan.K):
        coeffs[k] = x
        c, s = np.cos(gamma * fan.widths[k]), np.sin(gamma * fan.widths[k])
        v = x[0] * c + x[1] / gamma * s
        dv = -x[0] * gamma * s + x[1] * c
        x = np.array([v, fan.ratios[k] * dv])
    return coeffs


def eigenfunction(fan: VertexFan, gamma: float) -> list[Eigenfunction]:
    """Weighted-orthonormal eigenfunctions for a root gamma of D."""
    if not gamma > 0:
        raise ArgumentError("gamma must be positive")
    D = characteristic_determinant(gamma, fan, check=False)
    if abs(D) > ROOT_TOL:
        raise ArgumentError(f"gamma={gamma!r} is not an exponent (|D|={abs(D):.3e})")
    P = monodromy(gamma, fan)[0]
    _, s, vt = np.linalg.svd(P - np.eye(2))
    mult = _multiplicity(gamma, fan)
    if mult == 2:
        starts = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    else:
        starts = [vt[-1]]

    modes = []
    for x0 in starts:
        ef = Eigenfunction(fan, float(gamma), _propagate(fan, gamma, x0))
        for prev in modes:
            ef = Eigenfunction(fan, ef.gamma, ef.coeffs - weighted_inner(ef, prev) * prev.coeffs)
        norm = np.sqrt(weighted_inner(ef, ef))
        coeffs = ef.coeffs / norm
        flat = coeffs.ravel()
        lead = flat[np.argmax(np.abs(flat) > 1e-12 * np.abs(flat).max())]
        if lead < 0:
            coeffs = -coeffs
        modes.append(Eigenfunction(fan, ef.gamma, coeffs))
    return modes


@dataclass(frozen=True)
class SpectralBasis:
    fan: VertexFan
    exponents: list
    modes: list  # Eigenfunctions ordered by gamma
    gamma_next: float  # first exponent beyond the retained modes

    @property
    def gammas(self) -> np.ndarray:
        return np.array([m.gamma for m in self.modes])


def spectral_basis(fan: VertexFan, J: int, gamma_max: float | None = None) -> SpectralBasis:
    """The first J modes (counting multiplicity) of the angular operator."""
    if J < 1:
        raise ArgumentError("J must be positive")
    gmax = gamma_max or max(2.0, J * 0.75)
    while True:
        exps = find_exponents(fan, gmax)
        if sum(e.multiplicity for e in exps) > J:
            break
        if gamma_max is not None:
            raise ArgumentError(f"only {sum(e.multiplicity for e in exps)} modes below gamma_max={gamma_max}")
        gmax *= 2
    modes = []
    gamma_next = None
    for e in exps:
        if len(modes) >= J:
            gamma_next = e.gamma
            break
        for m in eigenfunction(fan, e.gamma):
            if len(modes) < J:
                modes.append(m)
            elif gamma_next is None:
                gamma_next = e.gamma
    if gamma_next is None:
        gamma_next = exps[-1].gamma
    return SpectralBasis(fan, exps, modes, float(gamma_next))


def sector_quadrature(fan: VertexFan, gamma_top: float, per_period: int = 32, minimum: int = 32):
    """Gauss-Legendre nodes and weights per sector resolving modes up to gamma_top."""
    nodes, weights = [], []
    for k in range(fan.K):
        a, b = fan.angles[k], fan.angles[k + 1]
        n = max(minimum, int(np.ceil(per_period * gamma_top * (b - a) / TWO_PI)))
        x, w = np.polynomial.legendre.leggauss(n)
        nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    return nodes, weights


@dataclass(frozen=True)
class SeriesExpansion:
    """u(r, theta) = mean + sum_j C_j r**gamma_j v_j(theta) in a disk of radius r0."""

    basis: SpectralBasis
    r0: float
    mean: float
    coefficients: np.ndarray
    K_diag: float

    @property
    def fan(self) -> VertexFan:
        return self.basis.fan


def from_coefficients(basis: SpectralBasis, r0: float, mean: float, coefficients) -> SeriesExpansion:
    """Expansion with prescribed coefficients (manufactured solutions)."""
    C = np.asarray(coefficients, dtype=float)
    if len(C) > len(basis.modes):
        raise ArgumentError("more coefficients than basis modes")
    g = basis.gammas[: len(C)]
    K = float(np.sum(C**2 * g**2 * r0 ** (2 * g)))
    return SeriesExpansion(basis, float(r0), float(mean), C, K)


def project_series(fan: VertexFan, r0: float, samples, J: int,
                   basis: SpectralBasis | None = None) -> SeriesExpansion:
    """Expansion coefficients of boundary data g(theta) given on the circle of radius r0.

    ``samples`` is either a vectorised callable of the local angle, or a list
    with one array per sector holding g at the nodes of
    ``sector_quadrature(fan, gamma_J)``.
    """
    if not r0 > 0:
        raise ArgumentError("r0 must be positive")
    if basis is None:
        basis = spectral_basis(fan, J)
    if J > len(basis.modes):
        raise ArgumentError(f"J={J} exceeds the basis size {len(basis.modes)}")
    gamma_top = basis.modes[J - 1].gamma
    if callable(samples):
        nodes, weights = sector_quadrature(fan, gamma_top)
        values = [np.asarray(samples(t), dtype=float) for t in nodes]
    else:
        values = [np.asarray(v, dtype=float) for v in samples]
        if len(values) != fan.K:
            raise ArgumentError("need one sample array per sector")
        for k, v in enumerate(values):
            period_count = gamma_top * fan.widths[k] / TWO_PI
            if len(v) < max(2, 8 * period_count):
                raise ArgumentError(f"sector {k}: {len(v)} samples do not resolve mode {J}")
        nodes, weights = [], []
        for k, v in enumerate(values):
            a, b = fan.angles[k], fan.angles[k + 1]
            x, w = np.polynomial.legendre.leggauss(len(v))
            nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
            weights.append(0.5 * (b - a) * w)

    th = np.concatenate(nodes)
    w = np.concatenate(weights) * fan.a(th)
    gv = np.concatenate(values)
    mean = float(np.sum(w * gv) / np.sum(w))
    modes = basis.modes[:J]
    gam = np.array([m.gamma for m in modes])
    C = np.array([np.sum(w * (gv - mean) * m(th)) for m in modes]) * r0 ** (-gam)
    K = float(np.sum(C**2 * gam**2 * r0 ** (2 * gam)))
    return SeriesExpansion(basis, float(r0), mean, C, K)


@dataclass(frozen=True)
class SeriesValue:
    value: np.ndarray
    gradient: np.ndarray
    tail_bound: np.ndarray
    singular: np.ndarray


def evaluate_series(exp: SeriesExpansion, r, theta, check_radius: bool = True) -> SeriesValue:
    """Value and Cartesian gradient of the truncated expansion at (r, local theta).

    Points beyond r0/2 are refused.  At r = 0 the gradient is reported as the
    limit when every retained exponent is >= 1 and flagged singular otherwise.
    """
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    r, theta = np.broadcast_arrays(r, theta)
    if np.any(r < 0):
        raise DomainError("negative radius")
    if check_radius and np.any(r > exp.r0 / 2 * (1 + 1e-12)):
        raise DomainError(f"r={r.max()!r} exceeds r0/2={exp.r0 / 2!r}")
    value = np.full(r.shape, exp.mean)
    ur = np.zeros(r.shape)
    ut = np.zeros(r.shape)  # (1/r) du/dtheta
    active = np.abs(exp.coefficients) > 0
    gmin = min((m.gamma for m, a in zip(exp.basis.modes, active) if a), default=np.inf)
    at_zero = r == 0
    rs = np.where(at_zero, 1.0, r)
    for C, mode in zip(exp.coefficients, exp.basis.modes):
        if C == 0:
            continue
        g = mode.gamma
        v, dv = mode.evaluate(theta)
        value = value + np.where(at_zero, 0.0, C * rs**g * v)
        if abs(g - 1.0) < 1e-12:
            fac = np.ones(r.shape)
        else:
            fac = np.where(at_zero, 0.0, rs ** (g - 1))
        ur = ur + C * g * fac * v
        ut = ut + C * fac * dv
    phi = theta + exp.fan.offset
    c, s = np.cos(phi), np.sin(phi)
    grad = np.stack([ur * c - ut * s, ur * s + ut * c], axis=-1)
    singular = at_zero & (gmin < 1.0 - 1e-12)
    grad = np.where(singular[..., None], np.nan, grad)
    tail = (r / exp.r0) ** exp.basis.gamma_next * np.sqrt(exp.K_diag)
    return SeriesValue(value, grad, tail, singular)


def series_at_points(exp: SeriesExpansion, points, check_radius: bool = True) -> SeriesValue:
    """evaluate_series at global Cartesian points."""
    r, theta = exp.fan.to_local(points)
    return evaluate_series(exp, r, theta, check_radius=check_radius)


@dataclass(frozen=True)
class FitDiagnostics:
    slope: float
    intercept: float
    residual_rms: float
    n_samples: int
    decades: float


def fit_singularity_exponent(samples: Sequence) -> tuple[float, FitDiagnostics]:
    """Least-squares exponent from (r, |grad u|) pairs: |grad u| ~ c r**(gamma - 1)."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ArgumentError("samples must be (r, |grad u|) pairs")
    r, g = arr[:, 0], arr[:, 1]
    if np.any(r <= 0) or np.any(g <= 0):
        raise ArgumentError("radii and gradient magnitudes must be positive")
    if len(r) < 4:
        raise ArgumentError("need at least 4 samples")
    decades = float(np.log10(r.max() / r.min()))
    if decades < 1.0 - 1e-12:
        raise ArgumentError(f"radii span {decades:.2f} decades, need at least one")
    x, y = np.log(r), np.log(g)
    slope, intercept = np.polyfit(x, y, 1)
    res = y - (slope * x + intercept)
    diag = FitDiagnostics(float(slope), float(intercept), float(np.sqrt(np.mean(res**2))), len(r), decades)
    return float(slope + 1.0), diag
