import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from sephydro.testfunctions import bump, integrate_box, plateau, standard_family, times_monomial, zero_function

FAMILY = standard_family(2, ell_max=2, degree=2) + [bump(1), bump(3, 1.5), plateau(1, 2)]


def _fd_hessian(phi, x, h=1e-4):
    d = phi.d
    H = np.zeros((d, d))
    for i in range(d):
        for k in range(d):
            ei = np.eye(d)[i] * h
            ek = np.eye(d)[k] * h
            H[i, k] = (phi(x + ei + ek) - phi(x + ei - ek) - phi(x - ei + ek) + phi(x - ei - ek))[0] / (4 * h * h)
    return H


@pytest.mark.parametrize("phi", FAMILY, ids=lambda p: p.name)
def test_hessian_matches_finite_differences(phi):
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.uniform(-1, 1, phi.d)
        x *= 0.9 * phi.r_supp * rng.random() / max(np.linalg.norm(x), 1e-12)
        H = phi.hessian(x[None, :])[0]
        assert np.allclose(H, H.T)
        assert np.allclose(H, _fd_hessian(phi, x[None, :]), atol=1e-4)


@pytest.mark.parametrize("phi", FAMILY, ids=lambda p: p.name)
def test_vanishes_outside_support(phi):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(50, phi.d))
    x *= (phi.r_supp * (1.0 + rng.random(50)) / np.linalg.norm(x, axis=1))[:, None]
    assert np.all(phi(x) == 0)
    assert np.all(phi.hessian(x) == 0)


def test_bump_integral_against_quad():
    expected, _ = integrate.quad(lambda t: np.exp(-1 / (1 - t * t)), -1, 1)
    assert bump(1).integral() == pytest.approx(expected, abs=1e-10)


def test_plateau_is_one_inside():
    phi = plateau(2, 1)
    x = np.random.default_rng(2).uniform(-0.7, 0.7, size=(40, 2))
    assert np.allclose(phi(x), 1.0)


def test_div_d_grad_is_trace():
    phi = times_monomial(bump(2, 2.0), (1, 1))
    x = np.array([[0.3, -0.4], [0.1, 0.2]])
    D = np.array([[1.0, 0.3], [0.3, 0.5]])
    H = phi.hessian(x)
    assert np.allclose(phi.div_d_grad(x, D), np.einsum("ik,nik->n", D, H))


def test_zero_function():
    z = zero_function(2)
    assert np.all(z(np.zeros((3, 2))) == 0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 1.5))
def test_box_integration_of_gaussian(s):
    val = integrate_box(lambda x: np.exp(-np.sum(x * x, axis=1) / (2 * s * s)), 2, 8 * s, tol=1e-12)
    assert val == pytest.approx(2 * np.pi * s * s, rel=1e-8)
