import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyshape.errors import ArgumentError, DomainError
from polyshape.fan import TWO_PI, VertexFan
from polyshape.spectral import (characteristic_determinant, closed_form_determinant, eigenfunction,
                                evaluate_series, find_exponents, fit_singularity_exponent, from_coefficients,
                                monodromy, project_series, sector_quadrature, spectral_basis, transfer_matrix,
                                weighted_inner)

CONTRAST_FAN = VertexFan(np.array([0.0, np.pi / 6, np.pi / 3, TWO_PI]), [0.1, 1e3, 10.0])
QUADRANTS = VertexFan.from_sectors([np.pi / 2] * 4, [1.0, 4.0, 1.0, 4.0])
THREE = VertexFan.from_sectors([2.0, 2.2, TWO_PI - 4.2], [1.0, 10.0, 0.2])
GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(40)


@st.composite
def fans(draw, max_k=4):
    K = draw(st.integers(1, max_k))
    cuts = sorted(draw(st.lists(st.floats(0.05, TWO_PI - 0.05), min_size=K - 1, max_size=K - 1, unique=True)))
    angles = np.array([0.0] + cuts + [TWO_PI])
    if np.any(np.diff(angles) < 0.02):
        angles = np.linspace(0.0, TWO_PI, K + 1)
    sig = [10.0 ** draw(st.floats(-2, 2)) for _ in range(K)]
    return VertexFan(angles, sig)


# ---------------------------------------------------------------- transfer matrices

def test_transfer_matrix_examples():
    np.testing.assert_allclose(transfer_matrix(0.7, 0.0, 3.0), [[1, 0], [0, 3]], atol=0)
    np.testing.assert_allclose(transfer_matrix(1.0, np.pi / 2, 1.0), [[0, 1], [-1, 0]], atol=1e-15)
    c, s = math.cos(math.pi / 12), math.sin(math.pi / 12)
    np.testing.assert_allclose(transfer_matrix(0.5, np.pi / 6, 1e-4), [[c, 2 * s], [-5e-5 * s, 1e-4 * c]],
                               rtol=1e-15)
    with pytest.raises(ArgumentError):
        transfer_matrix(0.0, 1.0, 1.0)
    with pytest.raises(ArgumentError):
        transfer_matrix(1.0, 1.0, -2.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 10), st.floats(0, TWO_PI - 1e-9), st.floats(1e-3, 1e3))
def test_transfer_matrix_determinant_is_ratio(g, d, r):
    assert abs(np.linalg.det(transfer_matrix(g, d, r)) - r) <= 1e-13 * r


@settings(max_examples=60, deadline=None)
@given(fans(), st.floats(0.05, 5.0))
def test_monodromy_unimodular(fan, g):
    P = monodromy(g, fan)[0]
    assert abs(np.linalg.det(P) - 1.0) <= 1e-12 * max(1.0, np.abs(P).max() ** 2)


# ---------------------------------------------------------------- determinant

@settings(max_examples=40, deadline=None)
@given(fans(), st.floats(0.05, 5.0))
def test_equal_sigmas_give_circle_determinant(fan, g):
    flat = VertexFan(fan.angles, np.full(fan.K, 2.5))
    assert abs(characteristic_determinant(g, flat) - 2 * (1 - math.cos(TWO_PI * g))) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(fans(max_k=3).filter(lambda f: f.K == 3))
def test_closed_form_matches_product(fan):
    for g in np.linspace(0.01, 3.0, 60):
        val = characteristic_determinant(g, fan, check=False)
        closed, scale = closed_form_determinant(g, fan)
        assert abs(val - closed) <= 1e-11 * max(1.0, scale)


def test_high_contrast_fan_negative_at_half():
    assert characteristic_determinant(0.5, CONTRAST_FAN) < 0
    assert find_exponents(CONTRAST_FAN, 1.0)[0].gamma < 0.5


def test_determinant_errors():
    with pytest.raises(ArgumentError):
        characteristic_determinant(-1.0, THREE)


# ---------------------------------------------------------------- exponents

def test_homogeneous_exponents():
    exps = find_exponents(VertexFan.from_sectors([TWO_PI], [3.0]), 6.0)
    assert [round(e.gamma, 10) for e in exps] == [1, 2, 3, 4, 5, 6]
    assert all(e.multiplicity == 2 for e in exps)


def test_meyers_quadrants():
    g1 = find_exponents(QUADRANTS, 1.0)[0].gamma
    assert abs(g1 - 4 / math.pi * math.atan(math.sqrt(1 / 4))) < 1e-10


def test_exponents_monotone_and_linear_growth():
    basis = spectral_basis(THREE, 30)
    g = basis.gammas
    assert np.all(np.diff(g) >= 0) and np.all(g > 0)
    ratio = g / np.arange(1, 31)
    assert 0.2 < ratio.min() and ratio.max() < 2.0
    exps = find_exponents(THREE, 8.0)
    assert all(abs(e.det_residual) < 1e-9 for e in exps)


def test_find_exponents_rejects_small_range():
    with pytest.raises(ArgumentError):
        find_exponents(THREE, 0.5)


# ---------------------------------------------------------------- eigenfunctions

def test_homogeneous_eigenfunctions():
    sigma = 2.0
    fan = VertexFan.from_sectors([TWO_PI], [sigma])
    modes = eigenfunction(fan, 1.0)
    assert len(modes) == 2
    th = np.linspace(0, TWO_PI, 50)
    for m in modes:
        # in span{cos, sin} with the weighted normalisation 1 / sqrt(sigma pi)
        A = np.stack([np.cos(th), np.sin(th)], axis=1)
        coef, *_ = np.linalg.lstsq(A, m(th), rcond=None)
        np.testing.assert_allclose(A @ coef, m(th), atol=1e-12)
        assert abs(np.hypot(*coef) - 1 / math.sqrt(sigma * math.pi)) < 1e-12
    assert abs(weighted_inner(modes[0], modes[1])) < 1e-12


@pytest.mark.parametrize("fan", [CONTRAST_FAN, QUADRANTS, THREE], ids=["contrast", "quadrants", "three"])
def test_eigenfunction_interfaces_and_norm(fan):
    for e in find_exponents(fan, 4.0):
        for m in eigenfunction(fan, e.gamma):
            jv, jf = m.interface_residuals()
            assert max(jv.max(), jf.max()) < 1e-10
            # independent composite Gauss-Legendre quadrature of the weighted norm
            total = 0.0
            for k in range(fan.K):
                edges = np.linspace(fan.angles[k], fan.angles[k + 1], 9)
                for lo, hi in zip(edges[:-1], edges[1:]):
                    x = 0.5 * (hi - lo) * GL_NODES + 0.5 * (hi + lo)
                    total += fan.sigmas[k] * 0.5 * (hi - lo) * np.sum(GL_WEIGHTS * m(x) ** 2)
            assert abs(total - 1.0) < 1e-10


def test_eigenfunction_rejects_non_root():
    with pytest.raises(ArgumentError):
        eigenfunction(THREE, 0.123)


# ---------------------------------------------------------------- series

def test_project_constant_and_single_mode():
    basis = spectral_basis(THREE, 6)
    exp = project_series(THREE, 1.5, lambda t: np.full_like(t, 5.0), 6, basis)
    assert abs(exp.mean - 5.0) < 1e-12 and np.abs(exp.coefficients).max() < 1e-12
    r0 = 1.5
    m2 = basis.modes[1]
    exp = project_series(THREE, r0, lambda t: r0 ** m2.gamma * m2(t), 6, basis)
    C = exp.coefficients
    assert abs(C[1] - 1.0) < 1e-8 and np.abs(np.delete(C, 1)).max() < 1e-8
    m1 = basis.modes[0]
    exp = project_series(THREE, r0, lambda t: 3 * r0 ** m1.gamma * m1(t) + 2, 6, basis)
    assert abs(exp.mean - 2.0) < 1e-8 and abs(exp.coefficients[0] - 3.0) < 1e-8


def test_project_round_trip_with_samples():
    basis = spectral_basis(THREE, 5)
    C = np.array([1.0, -0.4, 0.25, 0.1, -0.05])
    exp = from_coefficients(basis, 2.0, 0.7, C)
    nodes, _ = sector_quadrature(THREE, basis.modes[-1].gamma)
    samples = [evaluate_series(exp, 2.0, t, check_radius=False).value for t in nodes]
    back = project_series(THREE, 2.0, samples, 5, basis)
    np.testing.assert_allclose(back.coefficients, C, rtol=1e-8, atol=1e-10)
    assert abs(back.mean - 0.7) < 1e-10


def test_project_rejects_large_J():
    basis = spectral_basis(THREE, 3)
    with pytest.raises(ArgumentError):
        project_series(THREE, 1.0, lambda t: np.cos(t), 5, basis)


def test_linear_series_and_radius_limit():
    fan = VertexFan.from_sectors([TWO_PI], [1.0])
    basis = spectral_basis(fan, 2)
    # pick the combination of the two gamma = 1 modes equal to r cos(theta)
    th = np.array([0.0, np.pi / 2])
    M = np.array([[m(t) for m in basis.modes] for t in th])
    C = np.linalg.solve(M, [1.0, 0.0])
    exp = from_coefficients(basis, 2.0, 0.0, C)
    r = np.linspace(0.0, 1.0, 7)
    sv = evaluate_series(exp, r, 0.3)
    np.testing.assert_allclose(sv.value, r * math.cos(0.3), atol=1e-12)
    np.testing.assert_allclose(sv.gradient, np.tile([1.0, 0.0], (7, 1)), atol=1e-12)
    assert not sv.singular.any()
    with pytest.raises(DomainError):
        evaluate_series(exp, 1.01, 0.0)


def test_singular_origin_and_gradient_bound():
    basis = spectral_basis(CONTRAST_FAN, 4)
    exp = from_coefficients(basis, 2.0, 1.0, [1.0, 0.5, 0.2, 0.1])
    sv = evaluate_series(exp, 0.0, 1.0)
    assert sv.singular and sv.value == 1.0
    r = np.geomspace(1e-8, 0.5, 40)
    g = evaluate_series(exp, r, 0.1).gradient
    scaled = np.hypot(g[:, 0], g[:, 1]) * r ** (1 - basis.gammas[0])
    assert scaled.max() < 10 * scaled[0] + 10


# ---------------------------------------------------------------- fitting

def test_fit_exact_power_law():
    r = np.geomspace(1e-3, 1e-1, 20)
    gh, diag = fit_singularity_exponent(np.stack([r, r ** -0.4], axis=1))
    assert abs(gh - 0.6) < 1e-12 and diag.residual_rms < 1e-12


def test_fit_noisy_power_law():
    rng = np.random.default_rng(7)
    r = np.geomspace(1e-3, 1e-1, 40)
    g = 2 * r ** 0.25 * (1 + 0.01 * rng.standard_normal(len(r)))
    gh, _ = fit_singularity_exponent(np.stack([r, g], axis=1))
    assert abs(gh - 1.25) < 0.05


def test_fit_series_samples():
    fan = VertexFan.from_sectors([2.6, 2.2, TWO_PI - 4.8], [1.0, 20.0, 0.05])
    basis = spectral_basis(fan, 4)
    exp = from_coefficients(basis, 1.0, 0.0, [1.0, 0.3, 0.2, 0.1])
    r = np.geomspace(1e-4, 1e-2, 30)
    th = 1.0
    g = evaluate_series(exp, r, th).gradient
    gh, _ = fit_singularity_exponent(np.stack([r, np.hypot(g[:, 0], g[:, 1])], axis=1))
    assert abs(gh - basis.gammas[0]) < 0.02


def test_fit_errors():
    r = np.geomspace(1e-3, 1e-1, 10)
    with pytest.raises(ArgumentError):
        fit_singularity_exponent(np.stack([-r, r], axis=1))
    with pytest.raises(ArgumentError):
        fit_singularity_exponent(np.stack([r, 0 * r], axis=1))
    with pytest.raises(ArgumentError):
        fit_singularity_exponent([[1e-3, 1.0], [2e-3, 1.0], [3e-3, 1.0]])
