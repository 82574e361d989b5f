"""Conforming triangulations of a polygonal partition.

Points are placed deterministically and then handed to an unconstrained
Delaunay triangulation (scipy/qhull):

* the domain boundary and every partition side are subdivided into pieces of
  length <= h;
* around each interior partition vertex a "zone" of concentric rings is laid
  out at radii shared by all incident sides and sectors, optionally followed
  by geometrically shrinking rings (grading);
* the rest of the domain is filled from a global hexagonal lattice of spacing
  h, keeping clear of constraint segments and zones.

Constraint subsegments are made Gabriel (empty diametral disk) by removing
lattice points or splitting the subsegment, so each one is a Delaunay edge.
Because the lattice is fixed in space and the fixed points move continuously
with the partition vertices, small vertex motions change the mesh only
locally; the finite-difference oracle relies on this.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from . import geometry as geo
from .errors import MeshError
from .partition import PolygonalPartition, on_domain_boundary, sector_angles

FREE, BOUNDARY, INTERFACE, VERTEX, ZONE = 0, 1, 2, 3, 4

LATTICE_CLEARANCE = 0.6   # lattice points keep this many h from constraints
FREE_ENCROACH = 1.05      # free points inside this multiple of a diametral radius are dropped


@dataclass(frozen=True)
class ZonePlan:
    radii: tuple           # ring radii, descending
    graded_from: int       # index of the first graded ring in radii
    arcs: dict             # starting side id of a sector -> segment count per ring


@dataclass(frozen=True)
class MeshPlan:
    """Point counts fixed from a reference partition, so perturbed copies of
    it get point sets that move continuously with the vertices."""

    h: float
    boundary_counts: tuple
    side_counts: dict
    zones: dict
    grade_vertices: tuple = ()
    grade_factor: float = 0.5
    grade_rings: int = 6
    grade_radius: float | None = None
    grade_power: float = 0.5


@dataclass
class Mesh:
    nodes: np.ndarray
    triangles: np.ndarray            # (m, 3) counterclockwise
    regions: np.ndarray              # (m,)
    boundary_edges: np.ndarray       # (b, 2) counterclockwise around the domain
    interface_edges: np.ndarray      # (e, 2) oriented along their side
    interface_side: np.ndarray       # (e,)
    node_kind: np.ndarray | None = None
    vertex_nodes: np.ndarray | None = None  # partition vertex -> node (-1 if absent)
    h: float | None = None
    grading: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def boundary_normals(self) -> np.ndarray:
        d = self.nodes[self.boundary_edges[:, 1]] - self.nodes[self.boundary_edges[:, 0]]
        L = np.hypot(d[:, 0], d[:, 1])
        return np.stack([d[:, 1] / L, -d[:, 0] / L], axis=1)

    def boundary_lengths(self) -> np.ndarray:
        d = self.nodes[self.boundary_edges[:, 1]] - self.nodes[self.boundary_edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    def angles(self) -> np.ndarray:
        """Interior angles (m, 3) in radians."""
        p = self.nodes[self.triangles]
        out = np.empty((len(p), 3))
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cos = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            out[:, i] = np.arccos(np.clip(cos, -1.0, 1.0))
        return out

    def edge_triangles(self) -> dict:
        """Undirected edge (i<j) -> list of adjacent triangle indices."""
        out: dict = {}
        for t, tri in enumerate(self.triangles):
            for i in range(3):
                a, b = int(tri[i]), int(tri[(i + 1) % 3])
                out.setdefault((min(a, b), max(a, b)), []).append(t)
        return out

    def locate(self, points) -> np.ndarray:
        """Containing triangle for each point, -1 when outside the mesh."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        p = self.nodes[self.triangles]
        cent = p.mean(axis=1)
        tree = cKDTree(cent)
        out = np.full(len(pts), -1, dtype=int)
        k = min(32, len(cent))
        _, cand = tree.query(pts, k=k)
        cand = np.atleast_2d(cand).reshape(len(pts), -1)
        for i, x in enumerate(pts):
            for t in cand[i]:
                if _in_triangle(x, p[t]):
                    out[i] = t
                    break
            else:
                hit = np.nonzero([_in_triangle(x, q) for q in p])[0]
                if len(hit):
                    out[i] = hit[0]
        return out


def _in_triangle(x, tri, tol=1e-12):
    a, b, c = tri
    area = geo._orient(a, b, c)
    l1 = geo._orient(x, b, c) / area
    l2 = geo._orient(a, x, c) / area
    return l1 >= -tol and l2 >= -tol and 1 - l1 - l2 >= -tol


# ---------------------------------------------------------------- planning

def _boundary_loop(P: PolygonalPartition):
    """Domain vertices with the partition vertices that lie on the boundary
    inserted; returns loop points and a map partition vertex -> loop index."""
    tol = 1e-9 * P.scale
    D = P.domain
    on = [j for j in range(P.n_vertices) if on_domain_boundary(P, j)]
    loop, owner = [], {}
    for i in range(len(D)):
        a, b = D[i], D[(i + 1) % len(D)]
        start = len(loop)
        loop.append(a)
        extra = []
        for j in on:
            if j in owner:
                continue
            q = P.vertices[j]
            if np.hypot(*(q - a)) <= tol:
                owner[j] = start
            elif np.hypot(*(q - b)) > tol and geo.point_segment_distance([q], a, b)[0] <= tol:
                extra.append((float((q - a) @ (b - a)), j))
        for _, j in sorted(extra):
            owner[j] = len(loop)
            loop.append(P.vertices[j])
    return np.array(loop), owner


def _zone_vertices(P):
    return [j for j in range(P.n_vertices) if P.incident[j] and not on_domain_boundary(P, j)]


def _power_rings(R, h, power, factor):
    """Descending ring radii from R with spacing h (r/R)^power, stopped where
    geometric rings of ratio ``factor`` become finer or r drops below
    factor * h; also the spacings."""
    radii, sizes = [R], [h]
    r = R
    while True:
        step = h * (r / R) ** power
        # hand over to geometric rings once the power law stops paying off
        if step >= r * (1 - factor) or r < h * factor:
            return radii, sizes
        r -= step
        radii.append(r)
        sizes.append(step)


def plan_mesh(P: PolygonalPartition, h: float, grade_vertices=(), grade_factor: float = 0.5,
              grade_rings: int = 6, grade_radius: float | None = None, grade_power: float = 0.5) -> MeshPlan:
    """Point counts for :func:`triangulate`.

    Graded vertices get ``grade_rings`` rings shrinking by ``grade_factor``
    inside the innermost uniform ring.  With ``grade_radius`` the zone first
    extends to that radius with ring spacing h (r / grade_radius)^grade_power
    (power-law grading) before the geometric rings start.
    """
    if not h > 0:
        raise MeshError("mesh size h must be positive")
    lengths = [float(np.hypot(*np.subtract(*P.side_coords(k)))) for k in range(len(P.sides))]
    if lengths and h > min(lengths):
        raise MeshError(f"h={h} exceeds the shortest partition side; need h <= {min(lengths):.6g}")
    if not 0 < grade_factor < 1 or grade_rings < 0:
        raise MeshError("grading needs 0 < factor < 1 and a non-negative ring count")
    zone_ids = _zone_vertices(P)
    grade_vertices = tuple(sorted(int(j) for j in grade_vertices))
    for j in grade_vertices:
        if j not in zone_ids:
            raise MeshError(f"cannot grade toward vertex {j}: not an interior partition vertex")

    loop, _ = _boundary_loop(P)
    edges = np.roll(loop, -1, axis=0) - loop
    boundary_counts = tuple(max(1, math.ceil(L / h - 1e-9)) for L in np.hypot(edges[:, 0], edges[:, 1]))

    zones, radius = {}, {}
    bd_a, bd_b = P.domain, np.roll(P.domain, -1, axis=0)
    for j in zone_ids:
        widths, _, order = sector_angles(P, j)
        q = P.vertices[j]
        alpha_min = float(min(widths.min(), np.pi))
        R = max(h, h / (2 * math.sin(alpha_min / 2)))
        others = np.delete(P.vertices, j, axis=0)
        cap = min([lengths[k] for k in P.incident[j]]
                  + [float(geo.points_to_segments([q], bd_a, bd_b).min())]
                  + ([float(np.hypot(*(others - q).T).min())] if len(others) else []))
        R = min(R, 0.45 * cap)
        max_arc_graded = min(0.5, (1 - grade_factor) / grade_factor)
        if j in grade_vertices and grade_radius:
            R = max(R, min(grade_radius, 0.45 * cap))
            radii, sizes = _power_rings(R, h, grade_power, grade_factor)
            graded_from = 1
        else:
            n_u = max(1, round(R / h))
            radii = [R * i / n_u for i in range(n_u, 0, -1)]
            sizes = [R / n_u] * n_u
            graded_from = len(radii)
        if j in grade_vertices:
            inner = radii[-1]
            radii += [inner * grade_factor ** i for i in range(1, grade_rings + 1)]
        arcs = {}
        for s, k in enumerate(order):
            alpha = float(widths[s])
            counts = []
            for i, rho in enumerate(radii):
                if i < len(sizes):
                    counts.append(max(math.ceil(alpha / 1.0), math.ceil(alpha * rho / sizes[i] - 1e-9)))
                else:
                    counts.append(math.ceil(alpha / max_arc_graded))
            arcs[k] = tuple(counts)
        zones[j] = ZonePlan(tuple(radii), graded_from, arcs)
        radius[j] = radii[0]

    side_counts = {}
    for k, s in enumerate(P.sides):
        free = lengths[k] - radius.get(s.a, 0.0) - radius.get(s.b, 0.0)
        side_counts[k] = max(1, math.ceil(free / h - 1e-9))
    return MeshPlan(float(h), boundary_counts, side_counts, zones, grade_vertices, grade_factor, grade_rings,
                    grade_radius, grade_power)


# ---------------------------------------------------------------- points

class _Points:
    def __init__(self):
        self.xy, self.kind = [], []

    def add(self, p, kind):
        self.xy.append(np.asarray(p, dtype=float))
        self.kind.append(kind)
        return len(self.xy) - 1


def _fixed_points(P: PolygonalPartition, plan: MeshPlan):
    pts = _Points()
    segments = []  # (i, j, side id or -1)
    vertex_nodes = np.full(P.n_vertices, -1, dtype=int)

    loop, owner = _boundary_loop(P)
    if len(loop) != len(plan.boundary_counts):
        raise MeshError("boundary loop does not match the mesh plan")
    loop_nodes = []
    by_loop = {v: j for j, v in owner.items()}
    for i, p in enumerate(loop):
        if i in by_loop:
            node = pts.add(p, VERTEX)
            vertex_nodes[by_loop[i]] = node
        else:
            node = pts.add(p, BOUNDARY)
        loop_nodes.append(node)
    for i, n in enumerate(plan.boundary_counts):
        a, b = loop[i], loop[(i + 1) % len(loop)]
        prev = loop_nodes[i]
        for m in range(1, n):
            cur = pts.add(a + (b - a) * (m / n), BOUNDARY)
            segments.append((prev, cur, -1))
            prev = cur
        segments.append((prev, loop_nodes[(i + 1) % len(loop)], -1))

    zone_radius = {}
    for j, zone in plan.zones.items():
        if vertex_nodes[j] >= 0:
            raise MeshError(f"vertex {j} is both a zone centre and on the boundary")
        vertex_nodes[j] = pts.add(P.vertices[j], VERTEX)
        zone_radius[j] = zone.radii[0]
        widths, ref_angle, order = sector_angles(P, j)
        if set(order) != set(zone.arcs):
            raise MeshError(f"incident sides of vertex {j} differ from the mesh plan")
        starts = np.concatenate([[0.0], np.cumsum(widths)[:-1]])
        q = P.vertices[j]
        for s, k in enumerate(order):
            for rho, n in zip(zone.radii, zone.arcs[k]):
                for m in range(1, n):
                    ang = ref_angle + starts[s] + widths[s] * m / n
                    pts.add(q + rho * np.array([math.cos(ang), math.sin(ang)]), ZONE)

    for k, s in enumerate(P.sides):
        qa, qb = P.vertices[s.a], P.vertices[s.b]
        d = qb - qa
        L = float(np.hypot(*d))
        u = d / L
        params = []  # distances from qa, strictly inside (0, L)
        za = plan.zones.get(s.a)
        zb = plan.zones.get(s.b)
        ra = za.radii[0] if za else 0.0
        rb = zb.radii[0] if zb else 0.0
        if za:
            params += sorted(za.radii)
        n = plan.side_counts[k]
        params += [ra + (L - ra - rb) * m / n for m in range(1, n)]
        if zb:
            params += [L - r for r in zb.radii]
        params = sorted(params)
        for a_node in (s.a, s.b):
            if vertex_nodes[a_node] < 0:
                raise MeshError(f"partition vertex {a_node} is neither interior nor on the boundary loop")
        prev = vertex_nodes[s.a]
        for t in params:
            cur = pts.add(qa + t * u, INTERFACE)
            segments.append((prev, cur, k))
            prev = cur
        segments.append((prev, vertex_nodes[s.b], k))
    return pts, segments, vertex_nodes, zone_radius


def _lattice(P: PolygonalPartition, h: float) -> np.ndarray:
    lo, hi = P.domain.min(axis=0), P.domain.max(axis=0)
    dy = h * math.sqrt(3) / 2
    k0, k1 = math.floor(lo[1] / dy) - 1, math.ceil(hi[1] / dy) + 1
    i0, i1 = math.floor(lo[0] / h) - 1, math.ceil(hi[0] / h) + 1
    kk, ii = np.meshgrid(np.arange(k0, k1 + 1), np.arange(i0, i1 + 1), indexing="ij")
    x = (ii + 0.5 * (kk % 2)) * h
    y = kk * dy
    pts = np.stack([x.ravel(), y.ravel()], axis=1)
    return pts[geo.points_in_polygon(pts, P.domain)]


def _near_segments(points, xy, segments, radius):
    """Mask of points closer than ``radius`` to any segment."""
    mask = np.zeros(len(points), dtype=bool)
    if len(points) == 0:
        return mask
    tree = cKDTree(points)
    for i, j, _ in segments:
        a, b = xy[i], xy[j]
        half = 0.5 * float(np.hypot(*(b - a)))
        cand = tree.query_ball_point(0.5 * (a + b), half + radius)
        if cand:
            cand = np.asarray(cand)
            d = geo.point_segment_distance(points[cand], a, b)
            mask[cand[d < radius]] = True
    return mask


def _enforce_gabriel(xy, kind, free, segments, max_rounds=60):
    """Drop free points and split subsegments until every subsegment has an
    empty diametral disk."""
    for _ in range(max_rounds):
        fixed = np.array(xy)
        ftree = cKDTree(fixed)
        free_tree = cKDTree(free) if len(free) else None
        drop = set()
        new_segments, changed = [], False
        for i, j, side in segments:
            a, b = fixed[i], fixed[j]
            mid = 0.5 * (a + b)
            r = 0.5 * float(np.hypot(*(b - a)))
            if free_tree is not None:
                drop.update(free_tree.query_ball_point(mid, FREE_ENCROACH * r))
            hits = [c for c in ftree.query_ball_point(mid, r) if c not in (i, j)
                    and np.hypot(*(fixed[c] - mid)) < r * (1 - 1e-9)]
            if hits:
                m = len(xy)
                xy.append(mid)
                kind.append(BOUNDARY if side < 0 else INTERFACE)
                new_segments += [(i, m, side), (m, j, side)]
                changed = True
            else:
                new_segments.append((i, j, side))
        segments = new_segments
        if drop:
            keep = np.ones(len(free), dtype=bool)
            keep[sorted(drop)] = False
            free = free[keep]
        if not changed and not drop:
            return free, segments
    raise MeshError("could not make constraint segments Gabriel")


# ---------------------------------------------------------------- meshing

SIZE_LIMIT = 0.9  # circumradius (in units of h) above which a free-space centre is inserted


def _delaunay(nodes, h, domain):
    tri = Delaunay(nodes).simplices.astype(np.int64)
    p = nodes[tri]
    signed = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - \
             (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    flip = signed < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    # qhull can close the hull with flat triangles over collinear boundary points;
    # judge flatness against each triangle's own longest edge (graded zones are tiny)
    longest = np.max(np.sum((p - np.roll(p, 1, axis=1)) ** 2, axis=2), axis=1)
    tri = tri[np.abs(signed) > 1e-10 * longest]
    cent = nodes[tri].mean(axis=1)
    return tri[geo.points_in_polygon(cent, domain)]


def _circumcentres(p):
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    d = 2 * ((a[:, 0] - c[:, 0]) * (b[:, 1] - c[:, 1]) - (b[:, 0] - c[:, 0]) * (a[:, 1] - c[:, 1]))
    a2 = np.sum((a - c) ** 2, axis=1)
    b2 = np.sum((b - c) ** 2, axis=1)
    ux = ((b[:, 1] - c[:, 1]) * a2 - (a[:, 1] - c[:, 1]) * b2) / d
    uy = ((a[:, 0] - c[:, 0]) * b2 - (b[:, 0] - c[:, 0]) * a2) / d
    centre = c + np.stack([ux, uy], axis=1)
    return centre, np.hypot(ux, uy)


def _oversized_centres(nodes, tri, segments, h, domain):
    centre, rad = _circumcentres(nodes[tri])
    big = np.nonzero(rad > SIZE_LIMIT * h)[0]
    if not len(big):
        return np.empty((0, 2))
    big = big[np.argsort(-rad[big], kind="stable")]
    big = big[geo.points_in_polygon(centre[big], domain)]
    seg = np.array([(i, j) for i, j, _ in segments])
    mids = 0.5 * (nodes[seg[:, 0]] + nodes[seg[:, 1]])
    half = 0.5 * np.hypot(*(nodes[seg[:, 1]] - nodes[seg[:, 0]]).T)
    tree = cKDTree(nodes)
    out = []
    for t in big:
        c = centre[t]
        # never encroach a constraint subsegment or crowd an existing node
        if np.any(np.hypot(*(mids - c).T) < FREE_ENCROACH * half):
            continue
        if tree.query(c)[0] < 0.5 * h:
            continue
        if out and np.min(np.hypot(*(np.array(out) - c).T)) < 0.5 * h:
            continue
        out.append(c)
    return np.array(out).reshape(-1, 2)

def triangulate(P: PolygonalPartition, h: float, grade_vertices=(), grade_factor: float = 0.5,
                grade_rings: int = 6, plan: MeshPlan | None = None, grade_radius: float | None = None,
                grade_power: float = 0.5) -> Mesh:
    """Conforming triangulation of the domain honouring every partition side.

    ``grade_vertices`` lists interior partition vertices toward which the mesh
    is refined geometrically (edge lengths shrink by ``grade_factor`` per
    ring).  A ``plan`` from :func:`plan_mesh` on a reference partition fixes
    all point counts; perturbed partitions should reuse the plan of the
    unperturbed one.
    """
    if plan is None:
        plan = plan_mesh(P, h, grade_vertices, grade_factor, grade_rings, grade_radius, grade_power)
    h = plan.h
    pts, segments, vertex_nodes, zone_radius = _fixed_points(P, plan)

    free = _lattice(P, h)
    reject = _near_segments(free, np.array(pts.xy), segments, LATTICE_CLEARANCE * h)
    for j, R in zone_radius.items():
        reject |= np.hypot(*(free - P.vertices[j]).T) < R + LATTICE_CLEARANCE * h
    free = free[~reject]

    xy, kind = pts.xy, pts.kind
    free, segments = _enforce_gabriel(xy, kind, free, segments)
    nodes = np.vstack([np.array(xy), free]) if len(free) else np.array(xy)
    node_kind = np.concatenate([np.array(kind, dtype=int), np.full(len(free), FREE, dtype=int)])

    tri = _delaunay(nodes, h, P.domain)
    # size pass: fill holes the lattice left (tiny domains, wide clearance strips)
    for _ in range(8):
        extra = _oversized_centres(nodes, tri, segments, h, P.domain)
        if not len(extra):
            break
        nodes = np.vstack([nodes, extra])
        node_kind = np.concatenate([node_kind, np.full(len(extra), FREE, dtype=int)])
        tri = _delaunay(nodes, h, P.domain)
    cent = nodes[tri].mean(axis=1)
    regions = P.region_at(cent)
    if np.any(regions < 0):
        raise MeshError("triangle outside the domain survived filtering")

    mesh = _finish(P, nodes, tri, regions, segments, node_kind, vertex_nodes, plan)
    return mesh


def _finish(P, nodes, tri, regions, segments, node_kind, vertex_nodes, plan):
    edge_count: dict = {}
    directed = {}
    for t in tri:
        for i in range(3):
            a, b = int(t[i]), int(t[(i + 1) % 3])
            key = (min(a, b), max(a, b))
            edge_count[key] = edge_count.get(key, 0) + 1
            directed[key] = (a, b)
    for i, j, side in segments:
        if (min(i, j), max(i, j)) not in edge_count:
            raise MeshError(f"constraint subsegment {i}-{j} (side {side}) missing from the triangulation")
    bnd = sorted(directed[k] for k, c in edge_count.items() if c == 1)
    n_bseg = sum(1 for s in segments if s[2] < 0)
    if len(bnd) != n_bseg:
        raise MeshError(f"{len(bnd)} boundary edges but {n_bseg} boundary subsegments")
    iface, iside = [], []
    for i, j, side in sorted(segments, key=lambda s: (s[2], s[0], s[1])):
        if side < 0:
            continue
        s = P.sides[side]
        d = P.vertices[s.b] - P.vertices[s.a]
        if (nodes[j] - nodes[i]) @ d < 0:
            i, j = j, i
        iface.append((i, j))
        iside.append(side)
    used = np.zeros(len(nodes), dtype=bool)
    used[tri.ravel()] = True
    if not used.all():
        raise MeshError(f"{np.count_nonzero(~used)} nodes are not in any triangle")
    grading = {"vertices": list(plan.grade_vertices), "factor": plan.grade_factor, "rings": plan.grade_rings,
               "radius": plan.grade_radius, "power": plan.grade_power}
    return Mesh(nodes, tri, regions.astype(int), np.array(bnd, dtype=np.int64).reshape(-1, 2),
                np.array(iface, dtype=np.int64).reshape(-1, 2), np.array(iside, dtype=np.int64),
                node_kind, vertex_nodes, plan.h, grading)


# ---------------------------------------------------------------- audits

@dataclass
class MeshAudit:
    conforming: bool
    positive_areas: bool
    min_angle_deg: float
    min_angle_away_deg: float   # excluding triangles inside graded zones
    quality_ok: bool
    problems: list

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def audit_mesh(mesh: Mesh, P: PolygonalPartition, plan: MeshPlan | None = None) -> MeshAudit:
    """Conformity walk over every side plus area and angle checks."""
    problems = []
    edges = mesh.edge_triangles()
    tol = 1e-9 * P.scale
    for k, s in enumerate(P.sides):
        sel = np.nonzero(mesh.interface_side == k)[0]
        if len(sel) == 0:
            problems.append(f"side {k} has no interface edges")
            continue
        chain = mesh.interface_edges[sel]
        start = {int(a): int(b) for a, b in chain}
        qa, qb = P.vertices[s.a], P.vertices[s.b]
        begin = [a for a in start if np.hypot(*(mesh.nodes[a] - qa)) <= tol]
        if not begin:
            problems.append(f"side {k}: no interface edge starts at its first vertex")
            continue
        node, steps = begin[0], 0
        while node in start and steps <= len(chain):
            nxt = start[node]
            if (min(node, nxt), max(node, nxt)) not in edges:
                problems.append(f"side {k}: edge {node}-{nxt} is not a mesh edge")
            if geo.point_segment_distance([mesh.nodes[nxt]], qa, qb)[0] > tol:
                problems.append(f"side {k}: node {nxt} is off the side")
            node, steps = nxt, steps + 1
        if steps != len(chain) or np.hypot(*(mesh.nodes[node] - qb)) > tol:
            problems.append(f"side {k}: interface edges do not form a chain from end to end")
        for a, b in chain:
            ts = edges.get((min(a, b), max(a, b)), [])
            regs = sorted({int(mesh.regions[t]) for t in ts})
            if regs != sorted({s.minus, s.plus}):
                problems.append(f"side {k}: edge {a}-{b} separates regions {regs}")
                break
    areas = mesh.areas()
    positive = bool(np.all(areas > 0))
    if not positive:
        problems.append(f"{np.count_nonzero(areas <= 0)} triangles with non-positive area")
    ang = np.degrees(mesh.angles().min(axis=1))
    graded = np.zeros(mesh.n_triangles, dtype=bool)
    gv = mesh.grading.get("vertices", []) if mesh.grading else []
    if gv:
        cent = mesh.nodes[mesh.triangles].mean(axis=1)
        for j in gv:
            R = plan.zones[j].radii[plan.zones[j].graded_from - 1] if plan else mesh.h
            graded |= np.hypot(*(cent - P.vertices[j]).T) < 1.5 * R
    away = float(ang[~graded].min()) if np.any(~graded) else float("nan")
    near = float(ang[graded].min()) if np.any(graded) else float("inf")
    quality = away >= 15.0 and near >= 8.0
    if not quality:
        problems.append(f"minimum angle {away:.2f} deg (graded zones {near:.2f} deg)")
    conforming = not any(p.startswith("side") for p in problems)
    return MeshAudit(conforming, positive, float(ang.min()), away, quality, problems)


# ---------------------------------------------------------------- file io

def mesh_to_dict(mesh: Mesh) -> dict:
    return {
        "nodes": mesh.nodes.tolist(),
        "triangles": [[int(a), int(b), int(c), int(r)] for (a, b, c), r in zip(mesh.triangles, mesh.regions)],
        "boundary_edges": mesh.boundary_edges.tolist(),
        "interface_edges": [{"nodes": [int(a), int(b)], "side": int(s)}
                            for (a, b), s in zip(mesh.interface_edges, mesh.interface_side)],
        "h": mesh.h,
        "grading": mesh.grading,
    }


def mesh_from_dict(data: dict, P: PolygonalPartition | None = None) -> Mesh:
    """Mesh from the export schema.  Triangles are reoriented counterclockwise;
    with a partition, interface edges are reoriented along their sides and the
    partition vertices are matched to nodes."""
    try:
        nodes = np.asarray(data["nodes"], dtype=float).reshape(-1, 2)
        raw = np.asarray(data["triangles"], dtype=np.int64).reshape(-1, 4)
        bnd = np.asarray(data["boundary_edges"], dtype=np.int64).reshape(-1, 2)
        iface = data.get("interface_edges", [])
    except (KeyError, ValueError) as exc:
        raise MeshError(f"malformed mesh file: {exc}") from None
    tri, regions = raw[:, :3].copy(), raw[:, 3].copy()
    if tri.size and (tri.min() < 0 or tri.max() >= len(nodes)):
        raise MeshError("triangle references a missing node")
    p = nodes[tri]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    signed = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    tri[signed < 0] = tri[signed < 0][:, [0, 2, 1]]
    ie = np.array([e["nodes"] for e in iface], dtype=np.int64).reshape(-1, 2)
    isd = np.array([e["side"] for e in iface], dtype=np.int64)
    vertex_nodes = None
    kind = np.zeros(len(nodes), dtype=int)
    kind[np.unique(bnd)] = BOUNDARY
    kind[np.unique(ie)] = INTERFACE
    if P is not None:
        for n, (a, b) in enumerate(ie):
            s = P.sides[isd[n]]
            if (nodes[b] - nodes[a]) @ (P.vertices[s.b] - P.vertices[s.a]) < 0:
                ie[n] = (b, a)
        dist, idx = cKDTree(nodes).query(P.vertices)
        vertex_nodes = np.where(dist <= 1e-9 * P.scale, idx, -1)
        kind[vertex_nodes[vertex_nodes >= 0]] = VERTEX
    # boundary edges: keep the orientation that has the interior on the left
    m = Mesh(nodes, tri, regions, bnd, ie, isd, kind, vertex_nodes, data.get("h"), data.get("grading") or {})
    directed = {(int(t[i]), int(t[(i + 1) % 3])) for t in tri for i in range(3)}
    oriented = [(a, b) if (a, b) in directed else (b, a) for a, b in bnd]
    m.boundary_edges = np.array(oriented, dtype=np.int64).reshape(-1, 2)
    return m


def save_mesh(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        json.dump(mesh_to_dict(mesh), fh)


def load_mesh(path, P: PolygonalPartition | None = None) -> Mesh:
    with open(path) as fh:
        return mesh_from_dict(json.load(fh), P)
