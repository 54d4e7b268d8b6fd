import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm, lu_factor, lu_solve

from conftest import ring, ring_generator, two_point
from sephydro.laws import Law
from sephydro.random_walk import (
    GeneratorOperator,
    UniformizationError,
    dirichlet_form,
    heat_kernel_row,
    resolvent_solve,
    sample_walk_path,
    semigroup_apply,
)


def _dense(env, eps=1.0):
    N = env.n_points
    Q = np.zeros((N, N))
    for (i, j), c in zip(env.edges, env.rates):
        Q[i, j] += c
        Q[j, i] += c
    return (Q - np.diag(Q.sum(axis=1))) / eps**2


@pytest.mark.parametrize("c,t", [(1.0, 0.3), (2.5, 1.0), (0.1, 7.0)])
def test_two_point_kernel(c, t):
    row = heat_kernel_row(two_point(c), 1.0, 0, t)
    stay = (1 + math.exp(-2 * c * t)) / 2
    assert row == pytest.approx([stay, 1 - stay], abs=1e-10)


def test_ring_row_frozen():
    row = heat_kernel_row(ring(8), 1.0, 0, 0.7)
    frozen = [0.38306326, 0.2185119, 0.07095202, 0.01628558, 0.00543774, 0.01628558, 0.07095202, 0.2185119]
    assert row == pytest.approx(frozen, abs=1e-8)
    assert row[2] == pytest.approx(0.07095201684275086, abs=1e-12)
    assert np.allclose(row, expm(0.7 * ring_generator(8))[0], atol=1e-10)


def test_random_rates_match_expm():
    env = ring(20, Law.uniform(0.5, 3.0), seed=4)
    for eps in (1.0, 0.5):
        P = expm(0.4 * _dense(env, eps))
        for x in (0, 7, 19):
            assert np.allclose(heat_kernel_row(env, eps, x, 0.4), P[x], atol=1e-9)
        f = np.sin(np.arange(20))
        assert np.allclose(semigroup_apply(env, eps, 0.4, f), P @ f, atol=1e-9)


def test_long_time_splits():
    env = ring(10)
    row, info = heat_kernel_row(env, 1.0, 0, 400.0, return_info=True)
    assert info["splits"] > 1
    assert np.allclose(row, 0.1, atol=1e-9)
    with pytest.raises(UniformizationError):
        heat_kernel_row(env, 0.01, 0, 1000.0)


def test_semigroup_t0_identity():
    f = np.arange(8.0)
    assert np.array_equal(semigroup_apply(ring(8), 1.0, 0.0, f), f)


def test_resolvent_two_point():
    u = resolvent_solve(two_point(1.0), 1.0, 1.0, np.array([1.0, 0.0]), tol=1e-12)
    assert u == pytest.approx([2 / 3, 1 / 3], abs=1e-10)


def test_resolvent_matches_lu():
    env = ring(30, Law.exponential(1.0), seed=2)
    f = np.random.default_rng(0).normal(size=30)
    for lam, eps in ((0.5, 1.0), (2.0, 0.25)):
        A = lam * np.eye(30) - _dense(env, eps)
        ref = lu_solve(lu_factor(A), f)
        u = resolvent_solve(env, eps, lam, f, tol=1e-12)
        assert np.allclose(u, ref, atol=1e-9)
    with pytest.raises(ValueError):
        resolvent_solve(env, 1.0, 0.0, f)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 5.0), st.integers(0, 1000))
def test_resolvent_maximum_principle(lam, seed):
    env = ring(16, Law.uniform(0.1, 2.0), seed=seed)
    f = np.random.default_rng(seed).uniform(-1, 1, 16)
    u = resolvent_solve(env, 1.0, lam, f, tol=1e-12)
    assert np.abs(u).max() <= np.abs(f).max() / lam + 1e-9


def test_dirichlet_form_is_minus_generator_inner():
    env = ring(12, Law.uniform(0.5, 2.0), seed=1)
    rng = np.random.default_rng(3)
    u, v = rng.normal(size=(2, 12))
    eps = 0.5
    gen = GeneratorOperator(env, eps)
    assert dirichlet_form(env, eps, u, v) == pytest.approx(-gen.inner(u, gen.apply(v)), rel=1e-12)
    assert dirichlet_form(env, eps, u, u) >= 0
    assert dirichlet_form(env, eps, np.ones(12), u) == 0


def test_chapman_kolmogorov_and_symmetry():
    env = ring(14, Law.uniform(0.5, 1.5), seed=7)
    P = np.array([heat_kernel_row(env, 1.0, x, 0.3) for x in range(14)])
    P2 = np.array([heat_kernel_row(env, 1.0, x, 0.6) for x in range(14)])
    assert np.allclose(P @ P, P2, atol=1e-9)
    assert np.allclose(P, P.T, atol=1e-10)
    assert np.allclose(P.sum(axis=1), 1.0)


def test_walk_path_distribution():
    env = two_point(1.0)
    t = 0.5
    stays = np.mean([sample_walk_path(env, 0, t, seed=s).position_at(t) == 0 for s in range(4000)])
    p = (1 + math.exp(-2 * t)) / 2
    assert abs(stays - p) < 4 * math.sqrt(p * (1 - p) / 4000)


def test_walk_path_structure():
    path = sample_walk_path(ring(10), 3, 5.0, seed=1)
    assert path.start == 3
    assert np.all(np.diff(path.times) > 0) and path.times[-1] <= 5.0
    steps = np.diff(path.points) % 10
    assert np.all((steps == 1) | (steps == 9))
    with pytest.raises(ValueError):
        sample_walk_path(ring(10), 10, 1.0)
