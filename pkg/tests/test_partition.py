import json

import numpy as np
import pytest

from polyshape.errors import AdmissibilityError, GeometryError, PerturbationError, SpecError
from polyshape.fan import TWO_PI
from polyshape.partition import (AdmissibilityParams, VertexVelocity, build_partition, data_path, load_partition,
                                 partition_to_spec, perturb, validate_partition, vertex_fan_at)
from polyshape.samples import disk_polygon, square_in_disk_spec


def square_spec(sig_in=2.0, sig_out=1.0, **extra):
    spec = square_in_disk_spec(0.3, sig_in, sig_out)
    spec.update(extra)
    return spec


@pytest.fixture(scope="module")
def cluster():
    return load_partition(data_path("triple_point_cluster.json"))


def test_square_in_disk_has_four_sides():
    P = build_partition(square_spec())
    assert len(P.sides) == 4
    for s in P.sides:
        assert {s.minus, s.plus} == {1, 2}
        assert P.background == 2
        # normal points from minus to plus
        mid = 0.5 * (P.vertices[s.a] + P.vertices[s.b])
        assert P.region_at(mid - 1e-6 * s.normal)[0] == s.minus
        assert P.region_at(mid + 1e-6 * s.normal)[0] == s.plus
        assert np.isclose(np.hypot(*s.normal), 1.0)


def test_cluster_shares_sides_and_triple_points(cluster):
    assert cluster.n_vertices == 12
    keys = {(min(s.a, s.b), max(s.a, s.b)) for s in cluster.sides}
    assert len(keys) == len(cluster.sides) == 14
    triple = [j for j in range(cluster.n_vertices) if len(cluster.incident[j]) == 3]
    assert len(triple) >= 2
    assert validate_partition(cluster).passed


def test_nested_and_disjoint_polygons():
    P = load_partition(data_path("nested_disjoint.json"))
    assert validate_partition(P).passed
    # the nested polygon's sides separate it from its host, not from the background
    inner_sides = [s for s in P.sides if P.background not in (s.minus, s.plus)]
    assert inner_sides
    assert len({(s.minus, s.plus) for s in inner_sides}) == 1


def test_spec_errors():
    spec = square_spec()
    with pytest.raises(SpecError):
        build_partition({k: v for k, v in spec.items() if k != "sigma"})
    dup = dict(spec, polygons=spec["polygons"] * 2)
    with pytest.raises(SpecError):
        build_partition(dup)
    bad = dict(spec, sigma={"1": 50.0, "background": 1.0})
    with pytest.raises(SpecError):
        build_partition(bad)
    bowtie = dict(spec, polygons=[{"id": 1, "vertices": [[-.3, -.3], [.3, .3], [.3, -.3], [-.3, .3]]}])
    with pytest.raises(GeometryError):
        build_partition(bowtie)
    with pytest.raises(SpecError):
        AdmissibilityParams(0.1, 0.1, 4.0, 10.0)


def test_four_sided_vertex_fails_incidence():
    # two squares touching at a single corner: the shared point has 4 sides
    spec = {
        "domain": disk_polygon(2.0, 64).tolist(),
        "polygons": [{"id": 1, "vertices": [[-.5, -.5], [0, -.5], [0, 0], [-.5, 0]]},
                     {"id": 2, "vertices": [[0, 0], [.5, 0], [.5, .5], [0, .5]]}],
        "sigma": {"1": 2.0, "2": 3.0, "background": 1.0},
        "admissibility": {"d0": 0.1, "r1": 0.1, "beta_bar": 0.1, "c0": 10.0},
    }
    rep = validate_partition(build_partition(spec))
    assert not rep.passed
    assert rep.checks["incidence"] is False


def test_triple_point_angle_violation():
    bb = 0.2
    a = np.pi - bb / 2
    b = a + np.pi / 2
    R = 0.8

    def e(t):
        return (R * np.array([np.cos(t), np.sin(t)])).tolist()

    spec = {
        "domain": disk_polygon(3.0, 64).tolist(),
        "polygons": [{"id": 1, "vertices": [[0.0, 0.0], e(0.0), e(a / 2), e(a)]},
                     {"id": 2, "vertices": [[0.0, 0.0], e(a), e((a + b) / 2), e(b)]}],
        "sigma": {"1": 2.0, "2": 3.0, "background": 1.0},
        "admissibility": {"d0": 0.05, "r1": 0.01, "beta_bar": bb, "c0": 10.0},
    }
    P = build_partition(spec)
    j = int(np.argmin(np.hypot(*P.vertices.T)))
    assert len(P.incident[j]) == 3
    rep = validate_partition(P)
    assert rep.checks["angles"] is False
    assert any("vertex %d" % j in v.message for v in rep.violations if v.check == "angles")
    with pytest.raises(AdmissibilityError):
        validate_partition(P, strict=True)
    assert validate_partition(P, bypass=True).bypassed


def test_square_corner_fan():
    P = build_partition(square_spec(2.0, 1.0))
    for j in range(4):
        fan = vertex_fan_at(P, j)
        assert fan.K == 2
        w = fan.widths
        inner = int(np.argmin(w))
        np.testing.assert_allclose(sorted(w), [np.pi / 2, 3 * np.pi / 2], atol=1e-12)
        assert fan.sigmas[inner] == 2.0 and fan.sigmas[1 - inner] == 1.0


def test_fan_angles_sum_and_merge(cluster):
    for j in range(cluster.n_vertices):
        fan = vertex_fan_at(cluster, j)
        assert abs(fan.widths.sum() - TWO_PI) <= 1e-12
        assert fan.K in (2, 3)
        if fan.K == 3:
            assert fan.widths.max() <= np.pi - cluster.admissibility.beta_bar
    # equal conductivities on two adjacent regions merge a sector away
    spec = json.load(open(data_path("triple_point_cluster.json")))
    spec["sigma"]["2"] = spec["sigma"]["1"]
    merged = build_partition(spec)
    Ks = [vertex_fan_at(cluster, j).K for j in range(cluster.n_vertices)]
    Km = [vertex_fan_at(merged, j).K for j in range(merged.n_vertices)]
    assert any(a == b + 1 for a, b in zip(Ks, Km))


def test_perturb_identity_and_locality():
    P = build_partition(square_spec())
    Q = perturb(P, VertexVelocity(np.zeros((4, 2))), 0.37)
    assert np.array_equal(Q.vertices, P.vertices)
    assert np.array_equal(perturb(P, VertexVelocity.single(4, 0, (1, 0)), 0.0).vertices, P.vertices)
    V = VertexVelocity.single(4, 0, (1.0, 0.0))
    Q = perturb(P, V, 1e-3)
    moved = [k for k, s in enumerate(P.sides) if 0 in (s.a, s.b)]
    for k, (s, t) in enumerate(zip(P.sides, Q.sides)):
        if k not in moved:
            assert np.array_equal(s.normal, t.normal)
    assert np.array_equal(Q.vertices[1:], P.vertices[1:])


def test_perturb_round_trip():
    P = load_partition(data_path("triple_point_cluster.json"))
    rng = np.random.default_rng(3)
    V = VertexVelocity(rng.standard_normal((P.n_vertices, 2)))
    back = perturb(perturb(P, V, 1e-3), VertexVelocity(-V.components), 1e-3)
    np.testing.assert_allclose(back.vertices, P.vertices, rtol=0, atol=1e-14 * P.scale)


def test_perturb_collapse_rejected():
    P = build_partition(square_spec())
    a, b = 0, 1
    dist = float(np.hypot(*(P.vertices[a] - P.vertices[b])))
    comp = np.zeros((4, 2))
    comp[a] = (P.vertices[b] - P.vertices[a]) / dist
    with pytest.raises(PerturbationError) as exc:
        perturb(P, VertexVelocity(comp), 2 * dist / 1.0 * 0.45)
    assert exc.value.report is not None


def test_spec_round_trip(cluster):
    again = build_partition(partition_to_spec(cluster))
    np.testing.assert_array_equal(again.vertices, cluster.vertices)
    assert len(again.sides) == len(cluster.sides)
