import numpy as np
import pytest

from polyshape.errors import ArgumentError, DomainError, SolverError
from polyshape.fem import (FourierDensity, FunctionDensity, NormalDensity, PointSourceDensity, ZeroDensity, assemble,
                           boundary_functional, boundary_mean, element_matrices, energy, flux_balance,
                           galerkin_audit, gradient_sample_ray, side_traces, solve_neumann, write_solution_csv)
from polyshape.mesh import Mesh, triangulate
from polyshape.partition import build_partition, data_path, load_partition
from polyshape.samples import disk_polygon, half_disk_spec, homogeneous_spec
from polyshape.spectral import fit_singularity_exponent


@pytest.fixture(scope="module")
def disk():
    P = build_partition(homogeneous_spec(disk_polygon(1.0, 96), 2.0))
    return P, triangulate(P, 0.06)


@pytest.fixture(scope="module")
def half():
    P = build_partition(half_disk_spec(1.0, 5.0))
    m = triangulate(P, 0.06)
    return P, solve_neumann(assemble(m, P.conductivities), NormalDensity((1.0, 0.0)))


@pytest.fixture(scope="module")
def inclusion():
    P = load_partition(data_path("square_in_disk.json"))
    m = triangulate(P, 0.05)
    return P, m, assemble(m, P.conductivities)


def test_single_triangle_element():
    m = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]), np.array([1]),
             np.array([[0, 1], [1, 2], [2, 0]]), np.zeros((0, 2), int), np.zeros(0, int))
    K = element_matrices(assemble(m, {1: 1.0}))[0]
    np.testing.assert_allclose(K, [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]], atol=1e-15)
    np.testing.assert_allclose(K.sum(axis=1), 0, atol=1e-15)


def test_assembly_properties(inclusion):
    P, m, S = inclusion
    K = S.stiffness
    assert abs(K - K.T).max() < 1e-14
    assert np.abs(K @ np.ones(m.n_nodes)).max() < 1e-12
    sig2 = dict(P.conductivities)
    sig2[1] *= 2
    E1, E2 = element_matrices(S), element_matrices(assemble(m, sig2))
    in1 = m.regions == 1
    np.testing.assert_array_equal(E2[in1], 2 * E1[in1])
    np.testing.assert_array_equal(E2[~in1], E1[~in1])
    with pytest.raises(ArgumentError):
        assemble(m, {1: 1.0})


def test_zero_datum(inclusion):
    sol = solve_neumann(inclusion[2], ZeroDensity())
    assert np.all(sol.values == 0)


def test_homogeneous_disk_exact(disk):
    P, m = disk
    sol = solve_neumann(assemble(m, P.conductivities), NormalDensity((1.0, 0.0)))
    ex = m.nodes[:, 0] / 2
    ex -= sol.system.boundary_mass @ ex / sol.system.boundary_length
    assert np.abs(sol.values - ex).max() < 1e-8
    g = gradient_sample_ray(sol, (0.0, 0.0), (1.0, 1.0), np.linspace(0.05, 0.8, 9))
    np.testing.assert_allclose(g[:, 1], 0.5, atol=1e-8)


def test_half_disk_exact_and_traces(half):
    P, sol = half
    m = sol.mesh
    x = m.nodes[:, 0]
    ex = np.where(x > 0, x, x / 5.0)
    ex -= sol.system.boundary_mass @ ex / sol.system.boundary_length
    assert np.abs(sol.values - ex).max() < 1e-8
    for k in range(len(P.sides)):
        tr = side_traces(sol, P, k)
        np.testing.assert_allclose(np.abs(tr.sigma_minus * tr.un_minus), 1.0, atol=1e-10)
        np.testing.assert_allclose(tr.sigma_minus * tr.un_minus, tr.sigma_plus * tr.un_plus, atol=1e-10)
        assert np.abs(tr.ut_minus).max() < 1e-10 and np.abs(tr.ut_plus).max() < 1e-10


def test_audits(inclusion):
    P, m, S = inclusion
    sol = solve_neumann(S, FourierDensity(cos=(1.0, 0.2), sin=(0.0, 0.5)))
    assert galerkin_audit(sol, 50, 0) < 1e-9
    fb = flux_balance(sol)
    assert fb["difference"] < 1e-9
    assert abs(boundary_mean(sol)) <= 1e-10 * np.linalg.norm(sol.values)
    assert sol.stats.converged


def test_energy_and_linearity(inclusion):
    _, _, S = inclusion
    f = FourierDensity(cos=(1.0, 0.3), sin=(0.2,))
    sol = solve_neumann(S, f)
    F = boundary_functional(sol, f)
    assert F > 0 and abs(F - energy(sol)) < 1e-8 * F
    g1, g2 = FourierDensity(cos=(0.0, 1.0)), FourierDensity(sin=(0.3, 0.0, 0.7))
    g12 = FourierDensity(cos=(0.0, 1.0), sin=(0.3, 0.0, 0.7))
    a, b, c = (boundary_functional(sol, g) for g in (g1, g2, g12))
    assert abs(c - a - b) <= 1e-12 * max(abs(c), 1e-300) + 1e-15


def test_orthogonal_modes_on_disk(disk):
    P, m = disk
    S = assemble(m, P.conductivities)
    sol = solve_neumann(S, FourierDensity(cos=(1.0,)))
    assert abs(boundary_functional(sol, FourierDensity(sin=(1.0,)))) < 1e-8


def test_incompatible_datum_is_projected_and_g_checked(disk):
    P, m = disk
    S = assemble(m, P.conductivities)
    raw = FunctionDensity(lambda p, n: 1.0 + p[:, 0])
    sol = solve_neumann(S, raw)
    assert sol.flux["projected"] and sol.flux["relative_defect"] > 1e-3
    with pytest.raises(ArgumentError):
        boundary_functional(sol, FunctionDensity(lambda p, n: np.ones(len(p))))


def test_point_source_density(disk):
    P, m = disk
    S = assemble(m, P.conductivities)
    sol = solve_neumann(S, PointSourceDensity((1.0, 0.0), 0.1))
    assert sol.stats.converged and galerkin_audit(sol) < 1e-9


def test_solver_error_on_tiny_budget(inclusion):
    _, _, S = inclusion
    with pytest.raises(SolverError) as exc:
        solve_neumann(S, FourierDensity(cos=(1.0,)), preconditioner="none", maxiter=3)
    assert exc.value.stats is not None


def test_bitwise_deterministic(inclusion):
    _, _, S = inclusion
    f = FourierDensity(cos=(0.5,), sin=(1.0,))
    a, b = solve_neumann(S, f), solve_neumann(S, f)
    assert np.array_equal(a.values, b.values)


def test_ray_outside_mesh(disk):
    P, m = disk
    sol = solve_neumann(assemble(m, P.conductivities), NormalDensity())
    with pytest.raises(DomainError):
        gradient_sample_ray(sol, (0.0, 0.0), (1.0, 0.0), [0.5, 1.5])


def test_regular_solution_fit_near_one(disk):
    P, m = disk
    sol = solve_neumann(assemble(m, P.conductivities), NormalDensity())
    r = np.geomspace(0.05, 0.6, 12)
    gh, _ = fit_singularity_exponent(gradient_sample_ray(sol, (0.0, 0.0), (1.0, 0.3), r))
    assert abs(gh - 1.0) < 0.05


def test_solution_csv(tmp_path, half):
    _, sol = half
    path = tmp_path / "u.csv"
    write_solution_csv(sol, path, ["tool_version=test"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# tool_version=test" and lines[1] == "node_id,x,y,u"
    assert len(lines) == 2 + sol.mesh.n_nodes
