import numpy as np
import pytest

from polyshape.errors import MeshError
from polyshape.mesh import audit_mesh, load_mesh, plan_mesh, save_mesh, triangulate
from polyshape.partition import build_partition, data_path, load_partition
from polyshape.samples import half_disk_spec, homogeneous_spec


@pytest.fixture(scope="module")
def square_in_disk():
    return load_partition(data_path("square_in_disk.json"))


def test_unit_square_coarse():
    P = build_partition(homogeneous_spec([[0, 0], [1, 0], [1, 1], [0, 1]]))
    m = triangulate(P, 0.5)
    assert m.n_triangles >= 8
    assert np.all(m.regions == P.background)
    assert np.all(m.areas() > 0)
    assert abs(m.areas().sum() - 1.0) < 1e-12
    assert audit_mesh(m, P).quality_ok


def test_square_in_disk_conforming(square_in_disk):
    m = triangulate(square_in_disk, 0.05)
    audit = audit_mesh(m, square_in_disk)
    assert audit.conforming and audit.positive_areas and audit.quality_ok, audit.problems
    assert audit.min_angle_deg >= 15.0
    # each side is covered exactly by its interface edges
    for k in range(len(square_in_disk.sides)):
        qa, qb = square_in_disk.side_coords(k)
        e = m.interface_edges[m.interface_side == k]
        L = np.hypot(*(m.nodes[e[:, 1]] - m.nodes[e[:, 0]]).T).sum()
        assert abs(L - np.hypot(*(qb - qa))) < 1e-12


def test_triple_point_cluster_conforming():
    P = load_partition(data_path("triple_point_cluster.json"))
    m = triangulate(P, 0.25)
    audit = audit_mesh(m, P)
    assert audit.conforming and audit.quality_ok, audit.problems
    # every triangle takes the region at its centroid
    cent = m.nodes[m.triangles].mean(axis=1)
    assert np.array_equal(P.region_at(cent), m.regions)


def test_geometric_grading(square_in_disk):
    h, factor = 0.05, 0.5
    m = triangulate(square_in_disk, h, grade_vertices=(0,), grade_factor=factor)
    audit = audit_mesh(m, square_in_disk, plan_mesh(square_in_disk, h, (0,), factor))
    assert audit.conforming and audit.quality_ok, audit.problems
    v = m.vertex_nodes[0]
    edges = {(int(a), int(b)) for t in m.triangles for a, b in zip(t, np.roll(t, -1))}
    lens = [np.hypot(*(m.nodes[a] - m.nodes[b])) for a, b in edges if v in (a, b)]
    assert min(lens) <= h * factor ** 6 * (1 + 1e-9)


def test_power_grading_depth(square_in_disk):
    plan = plan_mesh(square_in_disk, 0.005, (0,), grade_radius=0.2, grade_power=0.7)
    radii = plan.zones[0].radii
    assert np.all(np.diff(radii) < 0)
    assert radii[-1] > 1e-6  # qhull stays well inside double precision


def test_h_larger_than_side_refused(square_in_disk):
    with pytest.raises(MeshError, match="shortest partition side"):
        triangulate(square_in_disk, 1.0)
    with pytest.raises(MeshError):
        triangulate(square_in_disk, -0.1)


def test_touching_interfaces_half_disk():
    P = build_partition(half_disk_spec())
    m = triangulate(P, 0.1)
    audit = audit_mesh(m, P)
    assert audit.conforming, audit.problems


def test_deterministic(square_in_disk):
    a = triangulate(square_in_disk, 0.08, grade_vertices=(1,))
    b = triangulate(square_in_disk, 0.08, grade_vertices=(1,))
    assert np.array_equal(a.nodes, b.nodes) and np.array_equal(a.triangles, b.triangles)


def test_mesh_file_round_trip(tmp_path, square_in_disk):
    m = triangulate(square_in_disk, 0.08)
    path = tmp_path / "mesh.json"
    save_mesh(m, path)
    back = load_mesh(path, square_in_disk)
    assert np.array_equal(back.nodes, m.nodes)
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.interface_side, m.interface_side)
    assert np.array_equal(back.vertex_nodes, m.vertex_nodes)
    audit = audit_mesh(back, square_in_disk)
    assert audit.conforming


def test_locate(square_in_disk):
    m = triangulate(square_in_disk, 0.1)
    pts = np.array([[0.0, 0.0], [0.5, 0.1], [2.0, 2.0]])
    t = m.locate(pts)
    assert t[0] >= 0 and t[1] >= 0 and t[2] == -1
