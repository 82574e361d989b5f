"""Piecewise-linear finite elements for div(sigma grad u) = 0 with Neumann data.

The conductivity is constant per triangle (one region per triangle).  The
singular Neumann system is solved by preconditioned conjugate gradients on
the mean-zero subspace; the solution is then shifted so that its boundary
integral vanishes.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ArgumentError, ConsistencyError, DomainError, SolverError
from .mesh import Mesh

log = logging.getLogger(__name__)

GAUSS_X = np.array([0.5 - 0.5 / math.sqrt(3), 0.5 + 0.5 / math.sqrt(3)])
GAUSS_W = np.array([0.5, 0.5])
CG_TOL = 1e-12
COMPAT_TOL = 1e-10


# ---------------------------------------------------------------- boundary data

@dataclass
class BoundaryQuadrature:
    """Two Gauss points per boundary edge, edges in loop order."""

    edges: np.ndarray      # (b, 2) node pairs, counterclockwise loop order
    points: np.ndarray     # (b, 2, 2)
    weights: np.ndarray    # (b, 2)  includes edge length
    normals: np.ndarray    # (b, 2)
    arclength: np.ndarray  # (b, 2)  arclength of each point from the loop start
    length: float

    @property
    def shape(self) -> np.ndarray:
        """Values of the two edge hat functions at the Gauss points, (2, 2)."""
        return np.stack([1 - GAUSS_X, GAUSS_X], axis=1)


def _loop_order(mesh: Mesh) -> np.ndarray:
    nxt = {int(a): (int(b), i) for i, (a, b) in enumerate(mesh.boundary_edges)}
    # start at the boundary node with the smallest (x, y), for determinism
    bn = np.array(sorted(nxt))
    start = int(bn[np.lexsort((mesh.nodes[bn, 1], mesh.nodes[bn, 0]))[0]])
    order, node = [], start
    for _ in range(len(nxt)):
        b, i = nxt[node]
        order.append(i)
        node = b
        if node == start:
            break
    if len(order) != len(nxt):
        raise ConsistencyError("boundary edges do not form a single closed loop")
    return np.array(order)


def boundary_quadrature(mesh: Mesh) -> BoundaryQuadrature:
    cached = getattr(mesh, "_bquad", None)
    if cached is not None:
        return cached
    edges = mesh.boundary_edges[_loop_order(mesh)]
    a, b = mesh.nodes[edges[:, 0]], mesh.nodes[edges[:, 1]]
    d = b - a
    L = np.hypot(d[:, 0], d[:, 1])
    pts = a[:, None, :] + GAUSS_X[None, :, None] * d[:, None, :]
    w = L[:, None] * GAUSS_W[None, :]
    normals = np.stack([d[:, 1] / L, -d[:, 0] / L], axis=1)
    start = np.concatenate([[0.0], np.cumsum(L)[:-1]])
    s = start[:, None] + GAUSS_X[None, :] * L[:, None]
    quad = BoundaryQuadrature(edges, pts, w, normals, s, float(L.sum()))
    mesh._bquad = quad
    return quad


class BoundaryDensity:
    """A boundary function evaluated at the boundary Gauss points.

    With ``mean_zero`` the discrete mean is removed after evaluation, which is
    how the constant mode is dropped on a polygonal boundary.
    """

    mean_zero = True

    def raw(self, quad: BoundaryQuadrature) -> np.ndarray:
        raise NotImplementedError

    def values(self, quad: BoundaryQuadrature) -> np.ndarray:
        v = self.raw(quad)
        if self.mean_zero:
            v = v - np.sum(v * quad.weights) / quad.length
        return v

    def describe(self) -> dict:
        return {"type": type(self).__name__}


@dataclass
class ZeroDensity(BoundaryDensity):
    def raw(self, quad):
        return np.zeros_like(quad.weights)

    def describe(self):
        return {"type": "zero"}


@dataclass
class FourierDensity(BoundaryDensity):
    """sum_k cos[k] cos(2 pi k s / L) + sin[k] sin(2 pi k s / L), k = 1, 2, ...
    in the arclength s around the boundary loop."""

    cos: tuple = ()
    sin: tuple = ()

    def raw(self, quad):
        s = 2 * np.pi * quad.arclength / quad.length
        out = np.zeros_like(s)
        for k, c in enumerate(self.cos, start=1):
            out += c * np.cos(k * s)
        for k, c in enumerate(self.sin, start=1):
            out += c * np.sin(k * s)
        return out

    def describe(self):
        return {"type": "fourier", "cos": list(self.cos), "sin": list(self.sin)}


@dataclass
class NormalDensity(BoundaryDensity):
    """Component of the (polygonal) outward normal along ``direction``."""

    direction: tuple = (1.0, 0.0)

    def raw(self, quad):
        v = quad.normals @ np.asarray(self.direction, dtype=float)
        return np.repeat(v[:, None], 2, axis=1)

    def describe(self):
        return {"type": "normal", "direction": list(self.direction)}


@dataclass
class PointSourceDensity(BoundaryDensity):
    """Smooth bump of unit mass around boundary point y (arclength radius
    eps); after the mean-zero projection this is a mollified
    delta_y - 1/|boundary|, so its pairing with a mean-zero u approximates u(y)."""

    y: tuple = (1.0, 0.0)
    eps: float = 0.05

    def raw(self, quad):
        pts = quad.points.reshape(-1, 2)
        j = int(np.argmin(np.hypot(*(pts - np.asarray(self.y, dtype=float)).T)))
        s0 = quad.arclength.ravel()[j]
        d = np.abs(quad.arclength - s0)
        d = np.minimum(d, quad.length - d) / self.eps
        bump = np.where(d < 1, np.exp(-1.0 / np.maximum(1 - d * d, 1e-300)), 0.0)
        mass = np.sum(bump * quad.weights)
        if mass <= 0:
            raise ArgumentError("mollifier width below the boundary quadrature spacing")
        return bump / mass

    def describe(self):
        return {"type": "point", "y": list(self.y), "eps": self.eps}


@dataclass
class FunctionDensity(BoundaryDensity):
    """Arbitrary f(points, normals) -> values; not projected by default."""

    func: object = None
    mean_zero: bool = False

    def raw(self, quad):
        pts = quad.points.reshape(-1, 2)
        nrm = np.repeat(quad.normals, 2, axis=0)
        return np.asarray(self.func(pts, nrm), dtype=float).reshape(quad.weights.shape)

    def describe(self):
        return {"type": "function", "mean_zero": self.mean_zero}


def density_from_config(cfg) -> BoundaryDensity:
    if isinstance(cfg, BoundaryDensity):
        return cfg
    if cfg is None:
        return ZeroDensity()
    kind = cfg.get("type", "fourier")
    if kind == "zero":
        return ZeroDensity()
    if kind == "fourier":
        return FourierDensity(tuple(float(c) for c in cfg.get("cos", ())), tuple(float(c) for c in cfg.get("sin", ())))
    if kind == "normal":
        return NormalDensity(tuple(float(c) for c in cfg.get("direction", (1.0, 0.0))))
    if kind == "point":
        return PointSourceDensity(tuple(float(c) for c in cfg["y"]), float(cfg.get("eps", 0.05)))
    raise ArgumentError(f"unknown boundary density type {kind!r}")


# ---------------------------------------------------------------- assembly

def basis_gradients(mesh: Mesh):
    """Gradients of the three hat functions on every triangle (m, 3, 2) and
    the triangle areas."""
    p = mesh.nodes[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / det[:, None]
    gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / det[:, None]
    return np.stack([gx, gy], axis=2), 0.5 * det


@dataclass
class System:
    mesh: Mesh
    sigma: dict
    stiffness: sp.csr_matrix
    tri_sigma: np.ndarray
    grads: np.ndarray
    areas: np.ndarray
    boundary_mass: np.ndarray   # integral of each hat function over the boundary
    _precond: object = None

    @property
    def boundary_length(self) -> float:
        return float(self.boundary_mass.sum())

    def load(self, f: BoundaryDensity):
        """Load vector, projected onto compatible data, and the raw defect."""
        quad = boundary_quadrature(self.mesh)
        vals = density_from_config(f).values(quad)
        wv = vals * quad.weights
        b = np.zeros(self.mesh.n_nodes)
        shape = quad.shape
        for q in range(2):
            np.add.at(b, quad.edges[:, 0], wv[:, q] * shape[q, 0])
            np.add.at(b, quad.edges[:, 1], wv[:, q] * shape[q, 1])
        total = float(wv.sum())
        norm = math.sqrt(float(np.sum(vals * vals * quad.weights)) * quad.length)
        defect = abs(total) / norm if norm > 0 else 0.0
        if total != 0.0:
            b -= total / self.boundary_length * self.boundary_mass
        return b, {"integral": total, "relative_defect": defect, "projected": defect > COMPAT_TOL}


def assemble(mesh: Mesh, sigma: dict) -> System:
    """Stiffness matrix sum_T sigma(T) |T| grad(phi_a).grad(phi_b)."""
    regions = np.unique(mesh.regions)
    missing = [int(r) for r in regions if int(r) not in sigma]
    if missing:
        raise ArgumentError(f"no conductivity for regions {missing}")
    tri_sigma = np.array([sigma[int(r)] for r in mesh.regions], dtype=float)
    G, area = basis_gradients(mesh)
    if np.any(area <= 0):
        raise ArgumentError("mesh has triangles with non-positive area")
    Ke = np.einsum("tid,tjd->tij", G, G) * (tri_sigma * area)[:, None, None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    n = mesh.n_nodes
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    L = mesh.boundary_lengths()
    m = np.zeros(n)
    np.add.at(m, mesh.boundary_edges[:, 0], 0.5 * L)
    np.add.at(m, mesh.boundary_edges[:, 1], 0.5 * L)
    return System(mesh, dict(sigma), K, tri_sigma, G, area, m)


def element_matrices(system: System) -> np.ndarray:
    G = system.grads
    return np.einsum("tid,tjd->tij", G, G) * (system.tri_sigma * system.areas)[:, None, None]


# ---------------------------------------------------------------- solving

@dataclass
class SolverStats:
    iterations: int
    residual: float
    converged: bool
    preconditioner: str

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class FemSolution:
    mesh: Mesh
    values: np.ndarray
    system: System
    load: np.ndarray
    flux: dict                      # density description and compatibility data
    stats: SolverStats
    normalization: dict = field(default_factory=dict)

    def gradients(self) -> np.ndarray:
        """Constant gradient on every triangle (m, 2)."""
        return np.einsum("tid,ti->td", self.system.grads, self.values[self.mesh.triangles])


def _preconditioner(system: System, kind: str):
    if kind == "none":
        return (lambda r: r), "none"
    if kind == "amg":
        try:
            import pyamg
        except ImportError:  # pragma: no cover - pyamg is a declared dependency
            kind = "jacobi"
        else:
            if system._precond is None:
                # pyamg draws start vectors from the global numpy generator; pin
                # it so repeated runs are bitwise identical
                state = np.random.get_state()
                np.random.seed(0)
                try:
                    ml = pyamg.smoothed_aggregation_solver(system.stiffness, B=np.ones((system.mesh.n_nodes, 1)))
                finally:
                    np.random.set_state(state)
                system._precond = ml.aspreconditioner(cycle="V")
            M = system._precond
            return (lambda r: M @ r), "amg"
    diag = system.stiffness.diagonal()
    inv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 0.0)
    return (lambda r: inv * r), "jacobi"


def pcg_mean_zero(A, b, precond, tol=CG_TOL, maxiter=None):
    """Preconditioned CG for a symmetric positive semidefinite A whose kernel
    is the constants; every iterate and search direction is kept mean-zero."""
    n = len(b)
    maxiter = maxiter or 20 * n
    b = b - b.mean()
    x = np.zeros(n)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return x, 0, 0.0, True
    r = b.copy()
    z = precond(r)
    z = z - z.mean()
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, maxiter + 1):
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = float(np.linalg.norm(r)) / bnorm
        if res <= tol:
            return x - x.mean(), it, res, True
        z = precond(r)
        z = z - z.mean()
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x - x.mean(), maxiter, res, False


def _normalize(system: System, x: np.ndarray):
    shift = float(system.boundary_mass @ x) / system.boundary_length
    return x - shift, shift


def solve_system(system: System, b: np.ndarray, tol=CG_TOL, preconditioner="amg", maxiter=None):
    M, name = _preconditioner(system, preconditioner)
    x, it, res, ok = pcg_mean_zero(system.stiffness, b, M, tol, maxiter)
    stats = SolverStats(it, res, ok, name)
    if not ok:
        raise SolverError(f"CG did not converge in {it} iterations (residual {res:.3e})", stats)
    x, shift = _normalize(system, x)
    return x, stats, shift


def solve_neumann(system: System, f, tol: float = CG_TOL, preconditioner: str = "amg",
                  maxiter: int | None = None) -> FemSolution:
    """Solve sigma du/dn = f on the boundary with zero boundary mean of u.

    Incompatible data are projected onto mean-zero data; the defect is
    recorded in ``flux``.
    """
    density = density_from_config(f)
    b, compat = system.load(density)
    if compat["projected"]:
        log.warning("boundary flux has relative mean %.3e; projected", compat["relative_defect"])
    x, stats, shift = solve_system(system, b, tol, preconditioner, maxiter)
    flux = {"density": density.describe(), **compat}
    return FemSolution(system.mesh, x, system, b, flux, stats, {"boundary_mean_removed": True, "shift": shift})


def boundary_mean(sol: FemSolution) -> float:
    return float(sol.system.boundary_mass @ sol.values) / sol.system.boundary_length


# ---------------------------------------------------------------- audits

def flux_balance(sol: FemSolution) -> dict:
    """Discrete conormal flux (K u) summed over boundary nodes against the
    integral of the (projected) datum, plus the largest interior residual."""
    r = sol.system.stiffness @ sol.values
    bn = sol.mesh.boundary_nodes()
    interior = np.ones(sol.mesh.n_nodes, dtype=bool)
    interior[bn] = False
    scale = max(float(np.abs(sol.load).sum()), 1e-300)
    return {
        "boundary_flux": float(r[bn].sum()),
        "datum_integral": float(sol.load.sum()),
        "difference": float(abs(r[bn].sum() - sol.load.sum())),
        "relative_difference": float(abs(r[bn].sum() - sol.load.sum()) / scale),
        "max_interior_residual": float(np.abs(r[interior] - sol.load[interior]).max()) if interior.any() else 0.0,
    }


def galerkin_audit(sol: FemSolution, n_tests: int = 50, seed: int = 0) -> float:
    """Largest |phi.(K u - b)| / (|phi| |b|) over random test vectors."""
    rng = np.random.default_rng(seed)
    res = sol.system.stiffness @ sol.values - sol.load
    bnorm = max(float(np.linalg.norm(sol.load)), 1e-300)
    worst = 0.0
    for _ in range(n_tests):
        phi = rng.standard_normal(sol.mesh.n_nodes)
        worst = max(worst, abs(float(phi @ res)) / (np.linalg.norm(phi) * bnorm))
    return worst


# ---------------------------------------------------------------- post-processing

def boundary_functional(sol: FemSolution, g) -> float:
    """Integral of g u over the boundary (two Gauss points per edge)."""
    quad = boundary_quadrature(sol.mesh)
    vals = density_from_config(g).values(quad)
    total = float(np.sum(vals * quad.weights))
    norm = math.sqrt(float(np.sum(vals * vals * quad.weights)) * quad.length)
    if norm > 0 and abs(total) > COMPAT_TOL * norm:
        raise ArgumentError(f"density g has non-zero mean (relative {abs(total) / norm:.3e})")
    u = sol.values[quad.edges]  # (b, 2)
    shape = quad.shape
    uq = u[:, 0:1] * shape[None, :, 0] + u[:, 1:2] * shape[None, :, 1]
    return float(np.sum(vals * uq * quad.weights))


def energy(sol: FemSolution) -> float:
    g = sol.gradients()
    return float(np.sum(sol.system.tri_sigma * sol.system.areas * np.sum(g * g, axis=1)))


@dataclass
class SideTraces:
    side: int
    midpoints: np.ndarray
    lengths: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    sigma_minus: float
    sigma_plus: float
    un_minus: np.ndarray
    ut_minus: np.ndarray
    un_plus: np.ndarray
    ut_plus: np.ndarray
    tri_minus: np.ndarray
    tri_plus: np.ndarray


def _edge_map(mesh: Mesh) -> dict:
    cached = getattr(mesh, "_edge_map", None)
    if cached is None:
        cached = mesh.edge_triangles()
        mesh._edge_map = cached
    return cached


def side_traces(sol: FemSolution, P, k: int, gradients: np.ndarray | None = None) -> SideTraces:
    """One-sided normal and tangential derivatives at the midpoints of the
    interface edges of side k, in the side's stored (n, tau) frame."""
    if not 0 <= k < len(P.sides):
        raise ArgumentError(f"no side {k}")
    s = P.sides[k]
    mesh = sol.mesh
    sel = np.nonzero(mesh.interface_side == k)[0]
    if len(sel) == 0:
        raise ConsistencyError(f"side {k} has no interface edges")
    edges = _edge_map(mesh)
    grads = sol.gradients() if gradients is None else gradients
    tri_m, tri_p = [], []
    for e in sel:
        a, b = mesh.interface_edges[e]
        ts = edges.get((min(a, b), max(a, b)), [])
        regs = {int(mesh.regions[t]): t for t in ts}
        if len(ts) != 2 or set(regs) != {s.minus, s.plus}:
            raise ConsistencyError(f"side {k}: edge {a}-{b} is not between regions {s.minus} and {s.plus}")
        tri_m.append(regs[s.minus])
        tri_p.append(regs[s.plus])
    tri_m, tri_p = np.array(tri_m), np.array(tri_p)
    n = np.asarray(s.normal, dtype=float)
    tau = np.array([-n[1], n[0]])
    e = mesh.interface_edges[sel]
    pa, pb = mesh.nodes[e[:, 0]], mesh.nodes[e[:, 1]]
    gm, gp = grads[tri_m], grads[tri_p]
    return SideTraces(k, 0.5 * (pa + pb), np.hypot(*(pb - pa).T), n, tau,
                      sol.system.sigma[s.minus], sol.system.sigma[s.plus],
                      gm @ n, gm @ tau, gp @ n, gp @ tau, tri_m, tri_p)


def gradient_sample_ray(sol: FemSolution, vertex, direction, radii):
    """(r, |grad u|) along the ray vertex + r * direction."""
    d = np.asarray(direction, dtype=float)
    d = d / np.hypot(*d)
    r = np.asarray(radii, dtype=float)
    pts = np.asarray(vertex, dtype=float) + r[:, None] * d
    tri = sol.mesh.locate(pts)
    if np.any(tri < 0):
        raise DomainError(f"sample points outside the mesh at radii {r[tri < 0].tolist()}")
    g = sol.gradients()[tri]
    return np.stack([r, np.hypot(g[:, 0], g[:, 1])], axis=1)


def write_solution_csv(sol: FemSolution, path, header_comments=()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "x", "y", "u"])
        for i, ((x, y), u) in enumerate(zip(sol.mesh.nodes, sol.values)):
            w.writerow([i, repr(float(x)), repr(float(y)), repr(float(u))])
