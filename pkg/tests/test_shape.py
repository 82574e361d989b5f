import json

import numpy as np
import pytest

from polyshape.errors import OracleError
from polyshape.fem import FourierDensity, assemble, solve_neumann
from polyshape.mesh import triangulate
from polyshape.partition import VertexVelocity, build_partition, data_path, load_partition
from polyshape.samples import square_in_disk_spec
from polyshape.shape import (MeshControls, deformation_tensor, derivative_on_mesh, derivative_report, extend_field,
                             finite_difference_oracle, jump_integral, jump_terms, neville_extrapolate, nodal_field,
                             volume_form)

F = FourierDensity(cos=(1.0,), sin=(0.5,))
G = FourierDensity(cos=(0.3, 0.4), sin=(1.0,))
V0 = VertexVelocity.single(4, 0, (1.0, 0.5))


@pytest.fixture(scope="module")
def inclusion():
    P = load_partition(data_path("square_in_disk.json"))
    m = triangulate(P, 0.05)
    S = assemble(m, P.conductivities)
    return P, m, solve_neumann(S, F), solve_neumann(S, G)


def test_killing_fields_give_zero_tensor(inclusion):
    _, m, _, _ = inclusion
    for func in (lambda x: np.tile([0.3, -1.2], (len(x), 1)),
                 lambda x: np.stack([-x[:, 1], x[:, 0]], axis=1)):
        A = deformation_tensor(nodal_field(m, func)).tensor
        assert np.abs(A).max() < 1e-12


def test_tensor_of_shear_field(inclusion):
    _, m, _, _ = inclusion
    A = deformation_tensor(nodal_field(m, lambda x: np.stack([x[:, 0], -x[:, 1]], axis=1))).tensor
    np.testing.assert_allclose(A, np.broadcast_to(np.diag([-2.0, 2.0]), A.shape), atol=1e-12)


def test_dilation_is_invisible_in_2d(inclusion):
    _, m, _, _ = inclusion
    assert np.abs(deformation_tensor(nodal_field(m, lambda x: 2.5 * x)).tensor).max() < 1e-12


def test_volume_form_of_stretch(inclusion):
    # Psi(x) = (x, 0): A = diag(-1, 1), so the form is int sigma (u_x w_x - u_y w_y)
    _, m, u, w = inclusion
    t = deformation_tensor(nodal_field(m, lambda x: np.stack([x[:, 0], 0 * x[:, 1]], axis=1)))
    gu, gw = u.gradients(), w.gradients()
    ref = np.sum(u.system.tri_sigma * u.system.areas * (gu[:, 0] * gw[:, 0] - gu[:, 1] * gw[:, 1]))
    assert abs(volume_form(u, w, t) - ref) <= 1e-12 * abs(ref)
    zero = deformation_tensor(nodal_field(m, lambda x: np.zeros_like(x)))
    assert volume_form(u, w, zero) == 0.0


def test_extend_field_values(inclusion):
    P, m, _, _ = inclusion
    assert not extend_field(m, P, np.zeros((4, 2))).nodal.any()
    fld = extend_field(m, P, V0)
    np.testing.assert_array_equal(fld.nodal[m.vertex_nodes[0]], [1.0, 0.5])
    for j in (1, 2, 3):
        np.testing.assert_array_equal(fld.nodal[m.vertex_nodes[j]], [0.0, 0.0])
    assert not fld.nodal[m.boundary_nodes()].any()
    # affine along the sides through vertex 0
    for k, s in enumerate(P.sides):
        e = np.unique(m.interface_edges[m.interface_side == k])
        qa, qb = P.side_coords(k)
        lam = (m.nodes[e] - qa) @ (qb - qa) / ((qb - qa) @ (qb - qa))
        va = np.array([1.0, 0.5]) if s.a == 0 else np.zeros(2)
        vb = np.array([1.0, 0.5]) if s.b == 0 else np.zeros(2)
        np.testing.assert_allclose(fld.nodal[e], va + lam[:, None] * (vb - va), atol=1e-14)


def test_equal_sigma_gives_zero_jump():
    P = build_partition(square_in_disk_spec(0.3, 1.0, 1.0))
    m = triangulate(P, 0.08)
    S = assemble(m, P.conductivities)
    u, w = solve_neumann(S, F), solve_neumann(S, G)
    fld = extend_field(m, P, V0)
    assert jump_integral(u, w, P, fld) == 0.0
    # the full form only sees the discretisation jump of the P1 gradients
    assert abs(jump_integral(u, w, P, fld, form="full")) < 0.02


def test_full_form_orientation_invariant(inclusion):
    P, m, u, w = inclusion
    fld = extend_field(m, P, V0)
    a = jump_integral(u, w, P, fld, form="full")
    sides = list(P.sides)
    sides[0] = sides[0].flipped()
    Q = P.with_sides(sides)
    b = jump_integral(u, w, Q, fld, form="full")
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))
    # flipping swaps which traces the reduced form reads
    c = jump_terms(u, w, P, fld, trace_side="plus")
    d = jump_terms(u, w, Q, fld, trace_side="minus")
    assert abs(c[0].value - d[0].value) <= 1e-12 * max(1.0, abs(c[0].value))


def test_green_identity_and_consistency(inclusion):
    P, _, _, _ = inclusion
    vals, _ = derivative_on_mesh(P, V0, F, G, MeshControls(0.05, (0, 1, 2, 3), grade_radius=0.2, grade_power=0.7))
    vf = vals["volume_form"]
    assert abs(vals["udot_pairing"] - vf) <= 1e-8 * abs(vf)
    # edge traces converge slowly next to the corners; at this h the gaps are about 5% and 13%
    assert abs(vals["jump_integral"] - vf) < 0.08 * abs(vf)
    assert abs(vals["jump_integral_full"] - vf) < 0.2 * abs(vf)


def test_homogeneous_derivative_vanishes():
    # an interface between equal conductivities is invisible
    P = build_partition(square_in_disk_spec(0.3, 2.0, 2.0))
    vals, _ = derivative_on_mesh(P, V0, F, G, MeshControls(0.06))
    assert abs(vals["volume_form"]) < 1e-10
    fd = finite_difference_oracle(P, V0, F, G, [1e-2, 5e-3], MeshControls(0.06))
    assert abs(fd.extrapolated) < 1e-8


def test_fd_zero_velocity_is_exact(inclusion):
    P, _, _, _ = inclusion
    fd = finite_difference_oracle(P, np.zeros((4, 2)), F, G, [1e-2, 5e-3], MeshControls(0.1))
    assert fd.values == [0.0, 0.0] and fd.extrapolated == 0.0


def test_neville_on_even_polynomial():
    t = np.array([0.4, 0.2, 0.1, 0.05])
    vals = 3.0 - 2.0 * t ** 2 + 0.5 * t ** 4 + 7.0 * t ** 6
    tab = neville_extrapolate(t, vals)
    assert abs(tab[-1][-1] - 3.0) < 1e-12
    assert len(tab) == 4


def test_oracle_error_names_the_step():
    P = build_partition(square_in_disk_spec(0.3, 2.0, 1.0))
    # vertex 0 runs into vertex 1 well before t = 0.9
    q0, q1 = P.vertices[0], P.vertices[1]
    comp = np.zeros((4, 2))
    comp[0] = (q1 - q0)
    with pytest.raises(OracleError, match=r"t=\+0\.9"):
        finite_difference_oracle(P, comp, F, G, [0.9], MeshControls(0.1))


def test_sweep_and_report_json():
    P = load_partition(data_path("square_in_disk.json"))
    rep = derivative_report(P, V0, {"type": "fourier", "cos": [1.0], "sin": [0.5]}, G,
                            MeshControls(0.04), h_sweep=(0.08,), run_fd=False)
    lv = rep.diagnostics["levels"]
    assert [x["h"] for x in lv] == [0.08, 0.04]
    assert lv[1]["abs_jump_minus_volume"] < lv[0]["abs_jump_minus_volume"]
    data = json.loads(rep.to_json(config_hash="abc"))
    for key in ("volume_form", "jump_integral", "jump_integral_full", "fd_extrapolated", "udot_pairing",
                "tool_version", "config_hash", "diagnostics"):
        assert key in data
    assert data["fd_extrapolated"] is None


def test_volume_form_symmetric(inclusion):
    P, m, u, w = inclusion
    t = deformation_tensor(extend_field(m, P, V0))
    a, b = volume_form(u, w, t), volume_form(w, u, t)
    assert abs(a - b) <= 1e-12 * abs(a)
