"""Polygonal partitions of a planar domain: construction, admissibility, motion.

A partition is a set of simple polygons inside a polygonal domain, each
carrying a region id and a conductivity; the rest of the domain is the
background region.  Shared polygon edges are stored once as *sides* that know
their two adjacent regions.  Each side a->b is stored with the "minus" region
on its left and unit normal ``n`` pointing from minus into plus, so the jump
of a quantity q across the side is q_minus - q_plus.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from . import geometry as geo
from .errors import AdmissibilityError, GeometryError, PerturbationError, SpecError
from .fan import TWO_PI, VertexFan

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdmissibilityParams:
    """Constants of the admissible class: separation d0, inscribed radius r1,
    angle margin beta_bar (radians) and conductivity bound c0."""

    d0: float
    r1: float
    beta_bar: float
    c0: float

    def __post_init__(self):
        for name in ("d0", "r1", "beta_bar", "c0"):
            if not getattr(self, name) > 0:
                raise SpecError(f"admissibility parameter {name} must be positive")
        if not self.beta_bar < np.pi:
            raise SpecError("beta_bar must be smaller than pi")

    def relaxed(self, factor: float = 0.5) -> "AdmissibilityParams":
        return AdmissibilityParams(self.d0 * factor, self.r1 * factor, self.beta_bar * factor, self.c0)


@dataclass(frozen=True)
class Polygon:
    region: int
    vertices: tuple  # indices into the partition vertex array, counterclockwise


@dataclass(frozen=True)
class Side:
    a: int
    b: int
    minus: int
    plus: int
    normal: np.ndarray

    def flipped(self) -> "Side":
        return Side(self.b, self.a, self.plus, self.minus, -self.normal)


@dataclass(frozen=True)
class VertexVelocity:
    components: np.ndarray  # (N, 2)

    def __post_init__(self):
        object.__setattr__(self, "components", np.asarray(self.components, dtype=float).reshape(-1, 2))

    @classmethod
    def single(cls, n_vertices: int, j: int, v) -> "VertexVelocity":
        comp = np.zeros((n_vertices, 2))
        comp[j] = v
        return cls(comp)


@dataclass(frozen=True)
class PolygonalPartition:
    domain: np.ndarray
    vertices: np.ndarray
    polygons: tuple
    sides: tuple
    conductivities: dict
    background: int
    admissibility: AdmissibilityParams | None = None
    incident: tuple = ()
    boundary_edges: tuple = ()  # polygon edges lying on the domain boundary

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def regions(self) -> list:
        return [p.region for p in self.polygons] + [self.background]

    @property
    def scale(self) -> float:
        d = self.domain
        return float(np.hypot(*(d.max(axis=0) - d.min(axis=0))))

    def polygon_coords(self, i: int) -> np.ndarray:
        return self.vertices[list(self.polygons[i].vertices)]

    def side_coords(self, k: int) -> tuple:
        s = self.sides[k]
        return self.vertices[s.a], self.vertices[s.b]

    def sigma(self, region: int) -> float:
        return self.conductivities[region]

    def region_at(self, points) -> np.ndarray:
        """Region id at each point (innermost polygon wins); -1 outside the domain."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full(len(pts), -1, dtype=int)
        inside = geo.points_in_polygon(pts, self.domain)
        out[inside] = self.background
        best = np.full(len(pts), np.inf)
        for poly in self.polygons:
            coords = self.vertices[list(poly.vertices)]
            area = abs(geo.signed_area(coords))
            hit = inside & geo.points_in_polygon(pts, coords) & (area < best)
            out[hit] = poly.region
            best[hit] = area
        return out

    def with_sides(self, sides) -> "PolygonalPartition":
        return _replace(self, sides=tuple(sides))


def _replace(P, **changes):
    data = {f: getattr(P, f) for f in P.__dataclass_fields__}
    data.update(changes)
    return PolygonalPartition(**data)


# ---------------------------------------------------------------- building

def _parse_params(raw):
    if raw is None:
        return None
    try:
        return AdmissibilityParams(float(raw["d0"]), float(raw["r1"]), float(raw["beta_bar"]), float(raw["c0"]))
    except KeyError as exc:
        raise SpecError(f"admissibility block misses {exc}") from None


def build_partition(spec: dict) -> PolygonalPartition:
    """Partition from a geometry description (the JSON schema as a dict).

    Keys: ``domain`` (list of [x, y]), ``polygons`` (list of {``id``,
    ``vertices``}), ``sigma`` (id -> value, plus ``"background"``) and optional
    ``admissibility`` ({d0, r1, beta_bar, c0}).
    """
    for key in ("domain", "polygons", "sigma"):
        if key not in spec:
            raise SpecError(f"missing key {key!r}")
    domain = np.asarray(spec["domain"], dtype=float)
    if domain.ndim != 2 or domain.shape[1] != 2 or len(domain) < 3:
        raise SpecError("domain must be a list of at least three [x, y] points")
    if not geo.is_simple(domain):
        raise GeometryError("domain boundary is not a simple polygon")
    if geo.signed_area(domain) < 0:
        domain = domain[::-1].copy()
    params = _parse_params(spec.get("admissibility"))

    raw_polys = spec["polygons"]
    ids = []
    for p in raw_polys:
        try:
            ids.append(int(p["id"]))
        except (KeyError, TypeError, ValueError):
            raise SpecError(f"polygon without an integer id: {p!r}") from None
    if len(set(ids)) != len(ids):
        raise SpecError(f"duplicate region id in {ids}")
    background = max(ids, default=0) + 1

    sigma_raw = spec["sigma"]
    conductivities = {}
    for rid in ids:
        key = str(rid) if str(rid) in sigma_raw else rid
        if key not in sigma_raw:
            raise SpecError(f"no conductivity for region {rid}")
        conductivities[rid] = float(sigma_raw[key])
    if "background" not in sigma_raw:
        raise SpecError("no background conductivity")
    conductivities[background] = float(sigma_raw["background"])
    for rid, s in conductivities.items():
        if not s > 0:
            raise SpecError(f"conductivity of region {rid} must be positive")
        if params is not None and not (1.0 / params.c0 < s < params.c0):
            raise SpecError(f"conductivity {s} of region {rid} outside ({1 / params.c0}, {params.c0})")

    scale = float(np.hypot(*(domain.max(axis=0) - domain.min(axis=0))))
    tol = 1e-9 * scale

    # deduplicate vertices across polygons
    verts: list = []
    loops = []
    for p in raw_polys:
        coords = np.asarray(p["vertices"], dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 2 or len(coords) < 3:
            raise SpecError(f"polygon {p['id']} needs at least three [x, y] vertices")
        if not geo.is_simple(coords, tol=tol):
            raise GeometryError(f"polygon {p['id']} is not simple")
        if geo.signed_area(coords) < 0:
            coords = coords[::-1]
        loop = []
        for c in coords:
            for idx, v in enumerate(verts):
                if abs(v[0] - c[0]) <= tol and abs(v[1] - c[1]) <= tol:
                    break
            else:
                verts.append(c.copy())
                idx = len(verts) - 1
            loop.append(idx)
        loops.append(loop)
    vertices = np.array(verts).reshape(-1, 2)

    # split edges at vertices of other polygons lying on them (T-junctions)
    split_loops = []
    for loop in loops:
        new = []
        n = len(loop)
        for i in range(n):
            a, b = loop[i], loop[(i + 1) % n]
            new.append(a)
            pa, pb = vertices[a], vertices[b]
            others = [k for k in range(len(vertices)) if k not in (a, b)]
            if not others:
                continue
            d = geo.point_segment_distance(vertices[others], pa, pb)
            on = [others[m] for m in np.nonzero(d <= tol)[0]]
            L = pb - pa
            on.sort(key=lambda k: float((vertices[k] - pa) @ L))
            new.extend(on)
        split_loops.append(new)
    polygons = tuple(Polygon(rid, tuple(loop)) for rid, loop in zip(ids, split_loops))

    for i, pi in enumerate(polygons):
        for j in range(i + 1, len(polygons)):
            _check_no_crossing(vertices, pi, polygons[j])
        if np.any(~geo.points_in_polygon(vertices[list(pi.vertices)], domain)):
            dist = geo.points_to_segments(vertices[list(pi.vertices)], domain, np.roll(domain, -1, axis=0)).min(axis=1)
            if np.any((dist > tol) & ~geo.points_in_polygon(vertices[list(pi.vertices)], domain)):
                raise GeometryError(f"polygon {pi.region} leaves the domain")

    P = PolygonalPartition(domain, vertices, polygons, (), conductivities, background, params)
    sides, on_boundary = _sides(P, tol)
    incident = tuple(tuple(k for k, s in enumerate(sides) if j in (s.a, s.b)) for j in range(len(vertices)))
    return _replace(P, sides=tuple(sides), incident=incident, boundary_edges=tuple(on_boundary))


def _check_no_crossing(vertices, p, q):
    pv, qv = list(p.vertices), list(q.vertices)
    for i in range(len(pv)):
        a, b = pv[i], pv[(i + 1) % len(pv)]
        for j in range(len(qv)):
            c, d = qv[j], qv[(j + 1) % len(qv)]
            if len({a, b, c, d}) < 4:
                continue
            if geo.segments_cross(vertices[a], vertices[b], vertices[c], vertices[d]):
                raise GeometryError(f"polygons {p.region} and {q.region} overlap")


def _side_normal(pa, pb):
    t = pb - pa
    t = t / np.hypot(*t)
    return np.array([t[1], -t[0]])


def _sides(P, tol):
    edges = {}
    for poly in P.polygons:
        loop = poly.vertices
        for i in range(len(loop)):
            a, b = loop[i], loop[(i + 1) % len(loop)]
            edges.setdefault((min(a, b), max(a, b)), None)
    sides, on_boundary = [], []
    for (a, b) in sorted(edges):
        pa, pb = P.vertices[a], P.vertices[b]
        n = _side_normal(pa, pb)
        L = float(np.hypot(*(pb - pa)))
        eps = 1e-6 * L
        mid = 0.5 * (pa + pb)
        left, right = P.region_at(np.array([mid - eps * n, mid + eps * n]))
        if left < 0 or right < 0:
            on_boundary.append((a, b))
            continue
        if left == right:
            continue
        if left < right:
            sides.append(Side(a, b, int(left), int(right), n))
        else:
            sides.append(Side(b, a, int(right), int(left), -n))
    return sides, on_boundary


def load_partition(path) -> PolygonalPartition:
    with open(path) as fh:
        return build_partition(json.load(fh))


def partition_to_spec(P: PolygonalPartition) -> dict:
    spec = {
        "domain": P.domain.tolist(),
        "polygons": [{"id": p.region, "vertices": P.vertices[list(p.vertices)].tolist()} for p in P.polygons],
        "sigma": {str(r): s for r, s in P.conductivities.items() if r != P.background},
    }
    spec["sigma"]["background"] = P.conductivities[P.background]
    if P.admissibility is not None:
        a = P.admissibility
        spec["admissibility"] = {"d0": a.d0, "r1": a.r1, "beta_bar": a.beta_bar, "c0": a.c0}
    return spec


# ---------------------------------------------------------------- validation

@dataclass(frozen=True)
class Violation:
    check: str
    message: str


@dataclass
class ValidationReport:
    passed: bool
    violations: list = field(default_factory=list)
    n_vertices: int = 0
    n_sides: int = 0
    bypassed: bool = False
    checks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "bypassed": self.bypassed,
            "n_vertices": self.n_vertices,
            "n_sides": self.n_sides,
            "checks": self.checks,
            "violations": [{"check": v.check, "message": v.message} for v in self.violations],
        }


CHECKS = ("incidence", "vertex_separation", "boundary_distance", "inscribed_disk", "angles")


def on_domain_boundary(P: PolygonalPartition, j: int) -> bool:
    d = geo.points_to_segments(P.vertices[j:j + 1], P.domain, np.roll(P.domain, -1, axis=0))
    return bool(d.min() <= 1e-9 * P.scale)


def sector_angles(P: PolygonalPartition, j: int):
    """Raw (unmerged) sector widths at vertex j, counterclockwise from the
    reference side, with the direction angle of the reference side."""
    inc = P.incident[j]
    if not inc:
        return np.array([TWO_PI]), 0.0, []
    ref = min(inc)
    q = P.vertices[j]
    dirs = []
    for k in inc:
        s = P.sides[k]
        other = s.b if s.a == j else s.a
        d = P.vertices[other] - q
        dirs.append((float(np.arctan2(d[1], d[0])), k))
    ref_angle = next(a for a, k in dirs if k == ref)
    rel = sorted(((a - ref_angle) % TWO_PI, k) for a, k in dirs)
    starts = np.array([r for r, _ in rel])
    widths = np.diff(np.append(starts, TWO_PI))
    return widths, ref_angle, [k for _, k in rel]


def _inscribed_radius(coords, resolution):
    n = len(coords)
    if geo.is_convex(coords):
        # Chebyshev centre: maximise r subject to n_i.x + r <= n_i.p_i
        A, bvec = [], []
        for i in range(n):
            a, b = coords[i], coords[(i + 1) % n]
            nrm = _side_normal(a, b)  # outward for counterclockwise loops
            A.append([nrm[0], nrm[1], 1.0])
            bvec.append(float(nrm @ a))
        res = linprog([0, 0, -1], A_ub=A, b_ub=bvec, bounds=[(None, None)] * 2 + [(0, None)], method="highs")
        if res.status == 0:
            return float(res.x[2])
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    xs = np.arange(lo[0], hi[0] + resolution, resolution)
    ys = np.arange(lo[1], hi[1] + resolution, resolution)
    grid = np.array(np.meshgrid(xs, ys)).reshape(2, -1).T
    grid = grid[geo.points_in_polygon(grid, coords)]
    if len(grid) == 0:
        return 0.0
    d = geo.points_to_segments(grid, coords, np.roll(coords, -1, axis=0)).min(axis=1)
    return float(d.max())


def validate_partition(P: PolygonalPartition, params: AdmissibilityParams | None = None,
                       strict: bool = False, bypass: bool = False) -> ValidationReport:
    """Check the standing assumptions on an admissible partition.

    Every check is reported separately.  ``strict`` raises AdmissibilityError
    on failure; ``bypass`` skips all checks (manufactured problems whose
    interfaces reach the domain boundary) and records that it did so.
    """
    report = ValidationReport(True, [], P.n_vertices, len(P.sides))
    if bypass:
        report.bypassed = True
        report.checks = {c: None for c in CHECKS}
        return report
    params = params or P.admissibility
    if params is None:
        raise SpecError("no admissibility parameters supplied")
    viol = report.violations
    bd_a, bd_b = P.domain, np.roll(P.domain, -1, axis=0)

    for j in range(P.n_vertices):
        if len(P.incident[j]) > 3:
            viol.append(Violation("incidence", f"vertex {j} lies on {len(P.incident[j])} sides"))

    V = P.vertices
    for i in range(P.n_vertices):
        for j in range(i + 1, P.n_vertices):
            d = float(np.hypot(*(V[i] - V[j])))
            if d < params.d0:
                viol.append(Violation("vertex_separation", f"vertices {i},{j} at distance {d:.4g} < d0"))

    if P.n_vertices:
        dv = geo.points_to_segments(V, bd_a, bd_b).min(axis=1)
        for j in np.nonzero(dv < params.d0)[0]:
            viol.append(Violation("boundary_distance", f"vertex {j} at distance {dv[j]:.4g} from the boundary"))
    for k, s in enumerate(P.sides):
        pa, pb = V[s.a], V[s.b]
        d = min(geo.segment_distance(pa, pb, bd_a[i], bd_b[i]) for i in range(len(bd_a)))
        if d < params.d0:
            viol.append(Violation("boundary_distance", f"side {k} at distance {d:.4g} from the boundary"))
    if P.boundary_edges:
        viol.append(Violation("boundary_distance", f"{len(P.boundary_edges)} polygon edges lie on the boundary"))

    for i, poly in enumerate(P.polygons):
        rad = _inscribed_radius(P.polygon_coords(i), params.r1 / 8)
        if not rad > params.r1:
            viol.append(Violation("inscribed_disk", f"polygon {poly.region} inscribed radius {rad:.4g} <= r1"))

    bb = params.beta_bar
    for j in range(P.n_vertices):
        k = len(P.incident[j])
        if k not in (2, 3) or on_domain_boundary(P, j):
            continue
        widths, _, _ = sector_angles(P, j)
        upper = TWO_PI - bb if k == 2 else np.pi - bb
        for w in widths:
            if not (bb < w < upper):
                msg = f"vertex {j} ({k} sectors): angle {w:.4g} outside ({bb:.4g}, {upper:.4g})"
                viol.append(Violation("angles", msg))

    failed = {v.check for v in viol}
    report.checks = {c: c not in failed for c in CHECKS}
    report.passed = not viol
    if strict and not report.passed:
        raise AdmissibilityError(f"partition not admissible: {viol[0].message}", report)
    return report


# ---------------------------------------------------------------- local data

def vertex_fan_at(P: PolygonalPartition, j: int) -> VertexFan:
    """Sectors and conductivities around vertex j, counterclockwise from the
    incident side with the smallest index; equal neighbours are merged."""
    if not 0 <= j < P.n_vertices:
        raise IndexError(f"no vertex {j}")
    widths, ref_angle, _ = sector_angles(P, j)
    q = P.vertices[j]
    starts = np.concatenate([[0.0], np.cumsum(widths)[:-1]])
    mids = ref_angle + starts + widths / 2
    rho = 1e-6 * P.scale
    probes = q + rho * np.stack([np.cos(mids), np.sin(mids)], axis=1)
    regions = P.region_at(probes)
    if np.any(regions < 0):
        raise GeometryError(f"vertex {j} touches the domain boundary; no full fan")
    sigmas = [P.sigma(int(r)) for r in regions]
    angles = np.concatenate([[0.0], np.cumsum(widths)])
    angles[-1] = TWO_PI
    return VertexFan(angles, sigmas, center=q.copy(), offset=ref_angle)


def perturb(P: PolygonalPartition, V, t: float, params: AdmissibilityParams | None = None,
            bypass: bool = False) -> PolygonalPartition:
    """Move every vertex Q_j to Q_j + t v_j; connectivity and conductivities kept.

    The result is validated with relaxed constants (half of d0, r1, beta_bar)
    unless ``bypass``; failure raises PerturbationError carrying the report.
    """
    comp = V.components if isinstance(V, VertexVelocity) else np.asarray(V, dtype=float).reshape(-1, 2)
    if comp.shape != P.vertices.shape:
        raise SpecError(f"velocity has {len(comp)} entries for {P.n_vertices} vertices")
    new_vertices = P.vertices + t * comp
    sides = []
    for s in P.sides:
        sides.append(Side(s.a, s.b, s.minus, s.plus, _side_normal(new_vertices[s.a], new_vertices[s.b])))
    Q = _replace(P, vertices=new_vertices, sides=tuple(sides))
    tol = 1e-9 * P.scale
    for i, poly in enumerate(Q.polygons):
        if not geo.is_simple(Q.polygon_coords(i), tol=tol):
            raise PerturbationError(f"polygon {poly.region} self-intersects at t={t!r}")
        for j in range(i + 1, len(Q.polygons)):
            try:
                _check_no_crossing(Q.vertices, poly, Q.polygons[j])
            except GeometryError as exc:
                raise PerturbationError(f"{exc} at t={t!r}") from None
    if bypass:
        return Q
    params = params or P.admissibility
    if params is None:
        return Q
    report = validate_partition(Q, params.relaxed())
    if not report.passed:
        raise PerturbationError(f"perturbed partition not admissible at t={t!r}: "
                                f"{report.violations[0].message}", report)
    return Q


def data_path(name: str) -> Path:
    """Path of a bundled sample configuration."""
    return Path(__file__).parent / "data" / name
