"""Shape derivative of boundary measurements with respect to vertex motion.

For a vertex velocity V the partition moves by x -> x + t Psi(x), where Psi
is affine along every side (Psi(Q_j) = v_j) and extended harmonically into a
buffer around the polygons.  The derivative of F(t) = int_{dOmega} g u_t is
computed three independent ways:

* volume form      -int sigma A grad u . grad w,  A = div(Psi) I - (DPsi + DPsi^T)
* jump integral    sum over sides of int [sigma b] . n, b built from Psi, grad u, grad w
* finite differences of F over independently re-meshed perturbed partitions

u solves the problem with flux f and w the one with flux g.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import spsolve

from . import __version__
from . import geometry as geo
from .errors import ArgumentError, ConsistencyError, MeshError, OracleError, PolyshapeError
from .fem import (CG_TOL, FemSolution, assemble, boundary_functional, density_from_config, side_traces,
                  solve_neumann, solve_system)
from .mesh import Mesh, MeshPlan, plan_mesh, triangulate
from .partition import PolygonalPartition, VertexVelocity, perturb

log = logging.getLogger(__name__)


def _velocity(V, P: PolygonalPartition) -> np.ndarray:
    comp = V.components if isinstance(V, VertexVelocity) else np.asarray(V, dtype=float).reshape(-1, 2)
    if comp.shape != (P.n_vertices, 2):
        raise ArgumentError(f"velocity has {len(comp)} entries for {P.n_vertices} vertices")
    return comp


# ---------------------------------------------------------------- perturbation field

@dataclass
class PerturbationField:
    mesh: Mesh
    nodal: np.ndarray          # (n, 2)
    support: np.ndarray        # (n,) bool: node may carry a non-zero value
    side_trace: dict           # side id -> (v_a, v_b) endpoint values
    buffer: float


def _support_mask(mesh: Mesh, P: PolygonalPartition, buffer: float) -> np.ndarray:
    x = mesh.nodes
    inside = np.zeros(len(x), dtype=bool)
    segs_a, segs_b = [], []
    for i, poly in enumerate(P.polygons):
        c = P.polygon_coords(i)
        inside |= geo.points_in_polygon(x, c)
        segs_a.append(c)
        segs_b.append(np.roll(c, -1, axis=0))
    if not segs_a:
        return inside
    a, b = np.vstack(segs_a), np.vstack(segs_b)
    near = np.zeros(len(x), dtype=bool)
    for i in range(0, len(x), 4096):
        near[i:i + 4096] = geo.points_to_segments(x[i:i + 4096], a, b).min(axis=1) < buffer
    return inside | near


def _side_nodes(mesh: Mesh):
    """node -> side id for nodes on interface edges (vertex nodes excluded later)."""
    out = {}
    for (a, b), k in zip(mesh.interface_edges, mesh.interface_side):
        out.setdefault(int(a), int(k))
        out.setdefault(int(b), int(k))
    return out


def side_value(P: PolygonalPartition, V, k: int, x) -> np.ndarray:
    """Affine interpolation of the endpoint velocities along side k."""
    comp = _velocity(V, P)
    s = P.sides[k]
    qa, qb = P.vertices[s.a], P.vertices[s.b]
    d = qb - qa
    lam = ((np.atleast_2d(x) - qa) @ d) / float(d @ d)
    return comp[s.a] + lam[:, None] * (comp[s.b] - comp[s.a])


def extend_field(mesh: Mesh, P: PolygonalPartition, V, buffer: float | None = None) -> PerturbationField:
    """Psi on the mesh: affine on the sides, zero on the boundary and outside
    the buffer around the polygons, discrete harmonic in between."""
    comp = _velocity(V, P)
    if mesh.vertex_nodes is None:
        raise MeshError("mesh carries no partition-vertex map")
    if buffer is None:
        if P.admissibility is None:
            raise ArgumentError("no buffer width and no admissibility parameters")
        buffer = 0.5 * P.admissibility.d0
    n = mesh.n_nodes
    psi = np.zeros((n, 2))
    fixed = np.zeros(n, dtype=bool)

    bnodes = mesh.boundary_nodes()
    fixed[bnodes] = True
    on_side = _side_nodes(mesh)
    for node, k in on_side.items():
        psi[node] = side_value(P, comp, k, mesh.nodes[node])[0]
        fixed[node] = True
    for j, node in enumerate(mesh.vertex_nodes):
        if node < 0:
            if np.any(comp[j] != 0):
                raise MeshError(f"partition vertex {j} moves but is not a mesh node")
            continue
        psi[node] = comp[j]
        fixed[node] = True
    if np.any(psi[bnodes] != 0):
        raise ArgumentError("the velocity moves a vertex lying on the domain boundary")
    for k in range(len(P.sides)):
        if not np.any(mesh.interface_side == k):
            raise MeshError(f"side {k} is not meshed conformingly")

    support = _support_mask(mesh, P, buffer)
    support[bnodes] = False
    free = support & ~fixed
    if free.any():
        S = assemble(mesh, {int(r): 1.0 for r in np.unique(mesh.regions)}).stiffness
        idx = np.nonzero(free)[0]
        K_ii = S[idx][:, idx].tocsc()
        rhs = -(S[idx] @ psi)
        psi[idx] = spsolve(K_ii, rhs).reshape(-1, 2)
    support = support | (np.abs(psi).sum(axis=1) > 0)
    traces = {k: (comp[s.a].copy(), comp[s.b].copy()) for k, s in enumerate(P.sides)}
    return PerturbationField(mesh, psi, support, traces, float(buffer))


def nodal_field(mesh: Mesh, func) -> PerturbationField:
    """Field sampled from a function of the node coordinates (tests)."""
    psi = np.asarray(func(mesh.nodes), dtype=float).reshape(-1, 2)
    return PerturbationField(mesh, psi, np.ones(mesh.n_nodes, dtype=bool), {}, float("inf"))


# ---------------------------------------------------------------- deformation tensor

@dataclass
class DeformationTensor:
    field: PerturbationField
    jacobian: np.ndarray   # (m, 2, 2) DPsi
    tensor: np.ndarray     # (m, 2, 2) div(Psi) I - (DPsi + DPsi^T)


def deformation_tensor(fld: PerturbationField) -> DeformationTensor:
    """Per-triangle DPsi of the piecewise-linear interpolant and the tensor A.

    DPsi = E adj(J) / det(J) with E and J built from the same nodal
    differences, so for Psi(x) = x or a rotation the products cancel exactly
    and A vanishes without rounding.
    """
    mesh = fld.mesh
    x = mesh.nodes[mesh.triangles]
    p = fld.nodal[mesh.triangles]
    a, c = x[:, 1, 0] - x[:, 0, 0], x[:, 1, 1] - x[:, 0, 1]
    b, d = x[:, 2, 0] - x[:, 0, 0], x[:, 2, 1] - x[:, 0, 1]
    # J = [[a, b], [c, d]] (columns are edge vectors), adj(J) = [[d, -b], [-c, a]]
    det = a * d - b * c
    e00, e10 = p[:, 1, 0] - p[:, 0, 0], p[:, 1, 1] - p[:, 0, 1]
    e01, e11 = p[:, 2, 0] - p[:, 0, 0], p[:, 2, 1] - p[:, 0, 1]
    D = np.empty((len(det), 2, 2))
    D[:, 0, 0] = (e00 * d - e01 * c) / det
    D[:, 0, 1] = (e01 * a - e00 * b) / det
    D[:, 1, 0] = (e10 * d - e11 * c) / det
    D[:, 1, 1] = (e11 * a - e10 * b) / det
    div = D[:, 0, 0] + D[:, 1, 1]
    A = -(D + np.transpose(D, (0, 2, 1)))
    A[:, 0, 0] += div
    A[:, 1, 1] += div
    return DeformationTensor(fld, D, A)


def _check_same_mesh(*sols):
    m = sols[0].mesh
    for s in sols[1:]:
        if s.mesh is not m:
            raise ArgumentError("solutions live on different meshes")


def volume_form(u: FemSolution, w: FemSolution, tensor: DeformationTensor) -> float:
    """-sum_T sigma(T) |T| (A grad u) . grad w."""
    _check_same_mesh(u, w)
    if tensor.field.mesh is not u.mesh:
        raise ArgumentError("tensor built on a different mesh")
    gu, gw = u.gradients(), w.gradients()
    Agu = np.einsum("tij,tj->ti", tensor.tensor, gu)
    return float(-np.sum(u.system.tri_sigma * u.system.areas * np.sum(Agu * gw, axis=1)))


# ---------------------------------------------------------------- jump integral

def _psi_midpoints(fld: PerturbationField, P: PolygonalPartition, k: int):
    mesh = fld.mesh
    sel = np.nonzero(mesh.interface_side == k)[0]
    e = mesh.interface_edges[sel]
    return 0.5 * (fld.nodal[e[:, 0]] + fld.nodal[e[:, 1]])


@dataclass
class JumpTerms:
    """Per-side pieces of the jump integrand, integrated with the midpoint rule."""

    side: int
    value: float             # contribution to the derivative
    normal_term: float       # int |[sigma (u_n w_n - u_t w_t)]|
    tangential_term: float   # int |[sigma (u_t w_n + u_n w_t)]|


def jump_terms(u: FemSolution, w: FemSolution, P: PolygonalPartition, fld: PerturbationField,
               form: str = "reduced", trace_side: str = "plus") -> list:
    _check_same_mesh(u, w)
    if form not in ("reduced", "full"):
        raise ArgumentError(f"unknown jump form {form!r}")
    if trace_side not in ("plus", "minus"):
        raise ArgumentError(f"unknown trace side {trace_side!r}")
    gu, gw = u.gradients(), w.gradients()
    out = []
    for k, s in enumerate(P.sides):
        if s.normal is None:
            raise ConsistencyError(f"side {k} has no stored orientation")
        tu = side_traces(u, P, k, gu)
        tw = side_traces(w, P, k, gw)
        psi = _psi_midpoints(fld, P, k)
        psi_n = psi @ tu.normal
        psi_t = psi @ tu.tangent
        sm, spl = tu.sigma_minus, tu.sigma_plus
        L = tu.lengths
        if form == "full":
            # [sigma b].n with b.n = psi_n (u_n w_n - u_t w_t) + psi_t (u_t w_n + u_n w_t)
            bm = psi_n * (tu.un_minus * tw.un_minus - tu.ut_minus * tw.ut_minus) + \
                psi_t * (tu.ut_minus * tw.un_minus + tu.un_minus * tw.ut_minus)
            bp = psi_n * (tu.un_plus * tw.un_plus - tu.ut_plus * tw.ut_plus) + \
                psi_t * (tu.ut_plus * tw.un_plus + tu.un_plus * tw.ut_plus)
            value = float(np.sum(L * (sm * bm - spl * bp)))
        elif trace_side == "plus":
            integrand = (spl - sm) * ((spl / sm) * tu.un_plus * tw.un_plus + tu.ut_plus * tw.ut_plus) * psi_n
            value = float(np.sum(L * integrand))
        else:
            integrand = (spl - sm) * ((sm / spl) * tu.un_minus * tw.un_minus + tu.ut_minus * tw.ut_minus) * psi_n
            value = float(np.sum(L * integrand))
        nm = sm * (tu.un_minus * tw.un_minus - tu.ut_minus * tw.ut_minus)
        npl = spl * (tu.un_plus * tw.un_plus - tu.ut_plus * tw.ut_plus)
        tm = sm * (tu.ut_minus * tw.un_minus + tu.un_minus * tw.ut_minus)
        tp = spl * (tu.ut_plus * tw.un_plus + tu.un_plus * tw.ut_plus)
        out.append(JumpTerms(k, value, float(np.sum(L * np.abs(nm - npl))), float(np.sum(L * np.abs(tm - tp)))))
    return out


def jump_integral(u: FemSolution, w: FemSolution, P: PolygonalPartition, fld: PerturbationField,
                  form: str = "reduced", trace_side: str = "plus") -> float:
    """Sum over sides of the jump integrand paired with Psi.

    ``reduced``: (sigma+ - sigma-) ((sigma+/sigma-) u_n w_n + u_t w_t) (Psi.n)
    from one side's traces (the transmission conditions remove the
    tangential part of Psi).  ``full``: [sigma b].n with both sides' traces,
    which is exactly invariant under flipping a side's orientation.
    """
    return float(sum(t.value for t in jump_terms(u, w, P, fld, form, trace_side)))


def tangential_residual(u: FemSolution, w: FemSolution, P: PolygonalPartition, fld: PerturbationField) -> dict:
    """Side-integrated |[sigma (u_t w_n + u_n w_t)]| against the normal term;
    the former vanishes for exact solutions."""
    terms = jump_terms(u, w, P, fld, "full")
    res = sum(t.tangential_term for t in terms)
    nrm = sum(t.normal_term for t in terms)
    return {"residual": res, "normal_term": nrm, "ratio": res / nrm if nrm > 0 else float("nan")}


# ---------------------------------------------------------------- material derivative

def material_derivative(u: FemSolution, tensor: DeformationTensor, tol: float = CG_TOL) -> FemSolution:
    """Solve int sigma grad(udot).grad(phi) = -int sigma A grad(u).grad(phi)
    with zero boundary mean."""
    if tensor.field.mesh is not u.mesh:
        raise ArgumentError("tensor built on a different mesh")
    sys_ = u.system
    gu = u.gradients()
    Agu = np.einsum("tij,tj->ti", tensor.tensor, gu)
    elem = -(sys_.tri_sigma * sys_.areas)[:, None] * np.einsum("tid,td->ti", sys_.grads, Agu)
    b = np.zeros(u.mesh.n_nodes)
    np.add.at(b, u.mesh.triangles.ravel(), elem.ravel())
    x, stats, shift = solve_system(sys_, b, tol)
    return FemSolution(u.mesh, x, sys_, b, {"density": {"type": "material_derivative"}}, stats,
                       {"boundary_mean_removed": True, "shift": shift})


# ---------------------------------------------------------------- finite differences

def neville_extrapolate(steps, values):
    """Extrapolate values(t) to t = 0 assuming an even expansion in t.

    Returns the tableau (list of columns); the last entry is the estimate.
    """
    t2 = np.asarray(steps, dtype=float) ** 2
    cols = [np.asarray(values, dtype=float)]
    while len(cols[-1]) > 1:
        prev, m = cols[-1], len(cols)
        nxt = (t2[m:] * prev[:-1] - t2[:-m] * prev[1:]) / (t2[m:] - t2[:-m])
        cols.append(nxt)
    return cols


@dataclass
class MeshControls:
    h: float
    grade_vertices: tuple = ()
    grade_factor: float = 0.5
    grade_rings: int = 6
    grade_radius: float | None = None
    grade_power: float = 0.5

    def plan(self, P, h: float | None = None):
        return plan_mesh(P, h or self.h, self.grade_vertices, self.grade_factor, self.grade_rings,
                         self.grade_radius, self.grade_power)

    def describe(self) -> dict:
        return dict(self.__dict__)


def functional(P: PolygonalPartition, f, g, controls: MeshControls | None = None,
               plan: MeshPlan | None = None, tol: float = CG_TOL) -> float:
    """F = int g u over the boundary for the partition P (fresh mesh)."""
    if plan is None:
        plan = controls.plan(P)
    mesh = triangulate(P, plan.h, plan=plan)
    sol = solve_neumann(assemble(mesh, P.conductivities), f, tol)
    return boundary_functional(sol, g)


@dataclass
class FiniteDifferenceResult:
    steps: list
    values: list
    extrapolated: float
    tableau: list
    base_value: float


def finite_difference_oracle(P: PolygonalPartition, V, f, g, steps, controls: MeshControls,
                             bypass: bool = False, tol: float = CG_TOL) -> FiniteDifferenceResult:
    """Central differences (F(t) - F(-t)) / 2t on independently meshed
    perturbed partitions, extrapolated to t = 0 in powers of t^2.

    Point counts come from the unperturbed partition's mesh plan, so all
    meshes share their layout and differ only where the vertices moved.
    """
    comp = _velocity(V, P)
    steps = [float(t) for t in steps]
    if not steps or any(t <= 0 for t in steps):
        raise ArgumentError("finite-difference steps must be positive")
    plan = controls.plan(P)
    base = functional(P, f, g, plan=plan, tol=tol)
    values = []
    for t in steps:
        if not np.any(comp):
            values.append(0.0)
            continue
        F = []
        for sgn in (1.0, -1.0):
            try:
                Pt = perturb(P, comp, sgn * t, bypass=bypass)
                F.append(functional(Pt, f, g, plan=plan, tol=tol))
            except PolyshapeError as exc:
                raise OracleError(f"finite-difference step t={sgn * t:+g} failed: {exc}") from exc
        values.append((F[0] - F[1]) / (2 * t))
    order = np.argsort(steps)[::-1]
    s_sorted = [steps[i] for i in order]
    v_sorted = [values[i] for i in order]
    tab = neville_extrapolate(s_sorted, v_sorted)
    return FiniteDifferenceResult(steps, values, float(tab[-1][-1]), [c.tolist() for c in tab], base)


# ---------------------------------------------------------------- orchestration

@dataclass
class DerivativeReport:
    volume_form: float
    jump_integral: float
    jump_integral_full: float
    jump_integral_minus: float
    fd_steps: list
    fd_extrapolated: float | None
    udot_pairing: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "volume_form": self.volume_form,
            "jump_integral": self.jump_integral,
            "jump_integral_full": self.jump_integral_full,
            "jump_integral_minus_side": self.jump_integral_minus,
            "fd_steps": self.fd_steps,
            "fd_extrapolated": self.fd_extrapolated,
            "udot_pairing": self.udot_pairing,
            "diagnostics": self.diagnostics,
        }

    def to_json(self, **extra) -> str:
        data = {"tool_version": __version__, **extra, **self.to_dict()}
        return json.dumps(data, indent=2, sort_keys=True)


@dataclass
class DerivativeState:
    """Everything computed on one mesh, kept for audits."""

    mesh: Mesh
    u: FemSolution
    w: FemSolution
    field: PerturbationField
    tensor: DeformationTensor
    udot: FemSolution


def derivative_on_mesh(P: PolygonalPartition, V, f, g, controls: MeshControls,
                       tol: float = CG_TOL, buffer: float | None = None) -> tuple:
    plan = controls.plan(P)
    mesh = triangulate(P, plan.h, plan=plan)
    system = assemble(mesh, P.conductivities)
    u = solve_neumann(system, f, tol)
    w = solve_neumann(system, g, tol)
    fld = extend_field(mesh, P, V, buffer)
    tensor = deformation_tensor(fld)
    udot = material_derivative(u, tensor, tol)
    vals = {
        "volume_form": volume_form(u, w, tensor),
        "jump_integral": jump_integral(u, w, P, fld),
        "jump_integral_full": jump_integral(u, w, P, fld, form="full"),
        "jump_integral_minus": jump_integral(u, w, P, fld, trace_side="minus"),
        "udot_pairing": boundary_functional(udot, g),
        "tangential": tangential_residual(u, w, P, fld),
        "n_nodes": mesh.n_nodes,
        "n_triangles": mesh.n_triangles,
        "h": controls.h,
        "cg": {"u": u.stats.to_dict(), "w": w.stats.to_dict(), "udot": udot.stats.to_dict()},
    }
    return vals, DerivativeState(mesh, u, w, fld, tensor, udot)


def derivative_report(P: PolygonalPartition, V, f, g, controls: MeshControls, steps=(1e-2, 5e-3, 2.5e-3),
                      h_sweep=(), bypass: bool = False, tol: float = CG_TOL, run_fd: bool = True) -> DerivativeReport:
    """All evaluations of dF/dt on the finest mesh, an optional refinement
    sweep (coarse to fine, finest last) and the finite-difference oracle."""
    f, g = density_from_config(f), density_from_config(g)
    sweep = sorted({float(h) for h in h_sweep} | {controls.h}, reverse=True)
    levels = []
    for h in sweep:
        c = MeshControls(h, controls.grade_vertices, controls.grade_factor, controls.grade_rings,
                         controls.grade_radius, controls.grade_power)
        vals, _ = derivative_on_mesh(P, V, f, g, c, tol)
        vals["abs_jump_minus_volume"] = abs(vals["jump_integral"] - vals["volume_form"])
        levels.append(vals)
    fine = levels[-1]
    fd = None
    if run_fd:
        fd = finite_difference_oracle(P, V, f, g, steps, controls, bypass, tol)
    diagnostics = {
        "levels": levels,
        "bypass_validation": bool(bypass),
        "f": f.describe(),
        "g": g.describe(),
        "mesh_controls": controls.describe(),
        "fd_tableau": fd.tableau if fd else None,
        "fd_base_value": fd.base_value if fd else None,
    }
    return DerivativeReport(
        fine["volume_form"], fine["jump_integral"], fine["jump_integral_full"], fine["jump_integral_minus"],
        [{"t": t, "value": v} for t, v in zip(fd.steps, fd.values)] if fd else [],
        fd.extrapolated if fd else None, fine["udot_pairing"], diagnostics)
