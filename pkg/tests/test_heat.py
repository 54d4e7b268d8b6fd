import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from sephydro.heat import MacroProfile, eigen_split, gaussian_smooth, heat_solution, homogenized_resolvent
from sephydro.testfunctions import bump


def test_step_profile_erfc():
    prof = MacroProfile("step", [[0.5]], {"high": 1.0, "low": 0.0})
    x = np.linspace(-2, 2, 9)[:, None]
    t = 0.8
    expected = 0.5 * special.erfc(x[:, 0] / math.sqrt(4 * 0.5 * t))
    assert np.allclose(heat_solution(prof, x, t), expected, atol=1e-14)


def test_degenerate_box_factorizes():
    prof = MacroProfile("box", np.diag([1.0, 0.0]), {"lower": [-1, -1], "upper": [1, 1], "value": 1.0})
    x = np.array([[0.5, 0.0], [0.5, 2.0], [3.0, 0.5]])
    t = 0.3
    s = math.sqrt(4 * t)
    factor = lambda u: 0.5 * (special.erf((u + 1) / s) - special.erf((u - 1) / s))
    out = heat_solution(prof, x, t)
    assert out[0] == pytest.approx(factor(0.5), abs=1e-12)
    assert out[1] == 0.0
    assert out[2] == pytest.approx(factor(3.0), abs=1e-12)


def test_gaussian_profile_mass_conserved():
    D = np.array([[1.0, 0.2], [0.2, 0.5]])
    prof = MacroProfile("gaussian", D, {"amplitude": 0.8, "width": 0.5})
    mass0 = 0.8 * 2 * math.pi * 0.25
    f = lambda y, x: heat_solution(prof, np.array([[x, y]]), 1.3)[0]
    mass, _ = integrate.dblquad(f, -12, 12, -12, 12, epsabs=1e-10)
    assert mass == pytest.approx(mass0, rel=1e-7)


def test_generic_path_matches_gaussian_closed_form():
    D = np.array([[1.0, 0.3], [0.3, 0.6]])
    prof = MacroProfile("gaussian", D, {"amplitude": 1.0, "width": 0.7})
    x = np.random.default_rng(0).normal(size=(6, 2))
    ref = heat_solution(prof, x, 0.5)
    assert np.allclose(gaussian_smooth(prof.initial, D, 0.5, x, tol=1e-10), ref, atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 3.0), st.floats(0.1, 2.0))
def test_maximum_principle(t, dval):
    prof = MacroProfile("bump", [[dval]], {"amplitude": 0.9, "radius": 1.0})
    x = np.linspace(-4, 4, 41)[:, None]
    u = heat_solution(prof, x, t)
    assert np.all(u >= -1e-9) and np.all(u <= 0.9 + 1e-9)


def test_semigroup_property():
    D = [[0.4]]
    prof = MacroProfile("bump", D, {"amplitude": 1.0, "radius": 1.0})
    x = np.linspace(-2, 2, 7)[:, None]
    mid = lambda y: heat_solution(prof, y, 0.3, tol=1e-10)
    two_step = gaussian_smooth(mid, np.atleast_2d(D), 0.2, x, tol=1e-9)
    assert np.allclose(two_step, heat_solution(prof, x, 0.5, tol=1e-10), atol=1e-7)


def test_zero_time_returns_initial():
    prof = MacroProfile("box", [[1.0]], {"lower": [0], "upper": [1], "value": 0.5})
    assert np.array_equal(heat_solution(prof, [[0.5], [2.0]], 0.0), [0.5, 0.0])


def test_invalid_profiles():
    with pytest.raises(ValueError):
        MacroProfile("constant", [[1.0]], {"value": 1.5})
    with pytest.raises(ValueError):
        MacroProfile("constant", [[-1.0]], {"value": 0.5})
    with pytest.raises(ValueError):
        MacroProfile("spiral", [[1.0]], {})


def test_eigen_split():
    w, U = eigen_split(np.diag([0.0, 2.0, 1e-12]))
    assert np.array_equal(w, [2.0, 0.0, 0.0])
    assert np.allclose(np.abs(U[:, 0]), [0, 1, 0])


def test_resolvent_closed_form_one_dimension():
    phi = bump(1)
    lam, D = 1.5, 0.8
    kappa = math.sqrt(lam / D)
    for x0 in (0.0, 0.7, 2.5):
        ref, _ = integrate.quad(lambda y: math.exp(-kappa * abs(x0 - y)) * phi(np.array([[y]]))[0],
                                -1, 1, points=[x0] if abs(x0) < 1 else None, epsabs=1e-13)
        ref /= 2 * math.sqrt(lam * D)
        got = homogenized_resolvent(phi, [[D]], lam, [[x0]], r_supp=1.0, tol=1e-10)[0]
        assert got == pytest.approx(ref, abs=1e-9)


def _smooth_1d(b, D, s, x):
    if s == 0:
        return b(np.array([[x]]))[0]
    g = lambda y: b(np.array([[y]]))[0] * math.exp(-(x - y) ** 2 / (4 * D * s)) / math.sqrt(4 * math.pi * D * s)
    return integrate.quad(g, -1, 1, epsabs=1e-13)[0]


def test_resolvent_two_dimensional_product():
    b = bump(1)
    D1, D2, lam, x = 0.6, 0.3, 1.0, (0.2, -0.1)
    f = lambda y: b(y[:, :1]) * b(y[:, 1:])
    ref = integrate.quad(lambda s: math.exp(-lam * s) * _smooth_1d(b, D1, s, x[0]) * _smooth_1d(b, D2, s, x[1]),
                         0, 60, epsabs=1e-11, limit=200)[0]
    got = homogenized_resolvent(f, np.diag([D1, D2]), lam, [x], r_supp=1.0, tol=1e-8)[0]
    assert got == pytest.approx(ref, abs=1e-6)


def test_resolvent_of_constant_in_two_dimensions():
    one = lambda x: np.ones(len(x))
    val = homogenized_resolvent(one, np.eye(2), 2.0, [[0.1, 0.2]], tol=1e-8)
    assert val[0] == pytest.approx(0.5, abs=1e-7)
