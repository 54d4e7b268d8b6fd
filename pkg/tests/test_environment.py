import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sephydro.environment import (
    Environment,
    EnvironmentLaw,
    GroupAction,
    ergodic_average_check,
    gen_crystal_conductance,
    gen_mott_ppp,
    gen_percolation_cluster,
    gen_zd_conductance,
    hexagonal_preset,
    load_environment,
    moment_check,
    orbit_decompose,
    palm_site_average,
    save_environment,
)
from sephydro.laws import Law
from sephydro.testfunctions import bump, zero_function


def _structure_ok(env):
    e = env.edges
    assert np.all(e[:, 0] < e[:, 1])
    assert np.all(env.rates >= 0)
    C = env.rate_matrix
    assert abs(C - C.T).max() == 0
    assert np.all(C.diagonal() == 0)
    assert np.all(env.exit_rates > 0) and np.all(np.isfinite(env.exit_rates))


def test_homogeneous_ring():
    env = gen_zd_conductance(1, 4, Law.constant(1.0))
    assert env.n_points == 4
    assert {tuple(e) for e in env.edges} == {(0, 1), (1, 2), (2, 3), (0, 3)}
    assert np.all(env.rates == 1)
    assert np.all(env.exit_rates == 2)


def test_square_torus_counts():
    env = gen_zd_conductance(2, 8, Law.exponential(1.0), seed=3)
    assert env.n_points == 64 and env.n_edges == 128
    assert np.all(env.rates > 0)
    _structure_ok(env)


def test_alternating_ring():
    env = gen_zd_conductance(1, 6, Law.sequence([1.0, 2.0]))
    # every point touches one edge of each kind
    assert np.allclose(env.exit_rates, 3.0)
    assert sorted(env.rates) == [1, 1, 1, 2, 2, 2]


def test_hexagonal_preset():
    geom, A, tpl = hexagonal_preset()
    env = gen_crystal_conductance(geom, A, tpl, 4, Law.constant(1.0))
    assert env.n_points == 32
    assert np.all(np.diff(env.rate_matrix.indptr) == 3)
    assert np.allclose(env.exit_rates, 3.0)
    assert np.allclose(np.linalg.norm(env.disp, axis=1), 1.0)
    env8 = gen_crystal_conductance(geom, A, tpl, 8, Law.exponential(1.0), seed=1)
    assert env8.n_edges == 192
    _structure_ok(env8)


def test_crystal_with_identity_basis_equals_zd():
    law = Law.uniform(1.0, 2.0)
    a = gen_zd_conductance(2, 6, law, seed=9)
    b = gen_crystal_conductance(GroupAction(2), [[0.0, 0.0]], [(0, 0, (1, 0)), (0, 0, (0, 1))], 6, law, seed=9)
    assert np.array_equal(a.edges, b.edges)
    assert np.array_equal(a.rates, b.rates)


def test_mott_rates_zero_energy():
    env = gen_mott_ppp(1, 50, 1.0, Law.constant(0.0), R_max=10, seed=2)
    rng = np.random.default_rng(0)
    for k in rng.choice(env.n_edges, 3, replace=False):
        i, j = env.edges[k]
        d = abs(env.points[i, 0] - env.points[j, 0])
        d = min(d, 50 - d)
        assert env.rates[k] == pytest.approx(math.exp(-d), rel=1e-12)


def test_mott_two_dimensional():
    env = gen_mott_ppp(2, 20, 1.0, Law.uniform(-1.0, 1.0), R_max=8, seed=4)
    assert np.all((env.rates > 0) & (env.rates <= 1))
    _structure_ok(env)
    assert env.connected


def test_mott_point_count():
    counts = []
    for s in range(200):
        env = gen_mott_ppp(1, 40, 1.0, Law.constant(0.0), R_max=10, seed=s)
        counts.append(env.meta["sampled_points"])
    counts = np.array(counts)
    assert abs(counts.mean() - 40) < 3 * math.sqrt(40 / len(counts))


def test_percolation_full():
    env = gen_percolation_cluster("zd", 16, 1.0)
    assert env.n_points == 256 and env.intensity == pytest.approx(1.0)
    ref = gen_zd_conductance(2, 16, Law.constant(1.0))
    assert np.array_equal(env.edges, ref.edges)
    geom, A, tpl = hexagonal_preset()
    hexa = gen_percolation_cluster("hexagonal", 8, 1.0)
    assert hexa.intensity == pytest.approx(2 / abs(np.linalg.det(geom.basis)))


def _bfs_largest(open_, L):
    seen = np.zeros((L, L), bool)
    best = 0
    for s in zip(*np.nonzero(open_)):
        if seen[s]:
            continue
        q, size = deque([s]), 0
        seen[s] = True
        while q:
            x, y = q.popleft()
            size += 1
            for nx, ny in ((x + 1) % L, y), ((x - 1) % L, y), (x, (y + 1) % L), (x, (y - 1) % L):
                if open_[nx, ny] and not seen[nx, ny]:
                    seen[nx, ny] = True
                    q.append((nx, ny))
        best = max(best, size)
    return best


def test_percolation_cluster_matches_flood_fill():
    from sephydro.seeding import rng_for

    env = gen_percolation_cluster("zd", 16, 0.9, seed=5)
    open_ = rng_for(5, "percolation_sites").random(256) < 0.9
    # generation order is cell-major with x fastest? recover the grid from coordinates instead
    grid = np.zeros((16, 16), bool)
    pts = np.round(gen_zd_conductance(2, 16, Law.constant(1.0)).points).astype(int)
    grid[pts[open_, 0], pts[open_, 1]] = True
    assert env.n_points == _bfs_largest(grid, 16)


@pytest.mark.parametrize("x,g,beta", [((2.5, -1.2), (2, -2), (0.5, 0.8)), ((0.0, 0.0), (0, 0), (0.0, 0.0))])
def test_orbit_decompose_square(x, g, beta):
    gg, bb = orbit_decompose(np.array(x), GroupAction(2))
    assert tuple(gg) == g
    assert np.allclose(bb, beta)


def test_orbit_decompose_hexagonal_basis_vector():
    geom, _, _ = hexagonal_preset()
    g, beta = orbit_decompose(geom.basis[:, 0], geom)
    assert tuple(g) == (1, 0) and np.allclose(beta, 0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50))
def test_orbit_decompose_reconstructs(x, y):
    geom, _, _ = hexagonal_preset()
    g, beta = orbit_decompose(np.array([x, y]), geom)
    assert np.allclose(geom.basis @ g + beta, [x, y], atol=1e-9)
    frac = np.linalg.solve(geom.basis, beta)
    assert np.all(frac >= -1e-9) and np.all(frac < 1 + 1e-9)


def test_continuum_branch():
    g, beta = orbit_decompose(np.array([0.3, 2.0]), GroupAction(2, "continuum"))
    assert np.allclose(g, [0.3, 2.0]) and np.all(beta == 0)


def test_palm_and_moments():
    env = gen_zd_conductance(1, 10, Law.constant(1.0))
    assert palm_site_average(env, np.ones(10)) == 1.0
    assert palm_site_average(env, env.exit_rates) == 2.0
    assert moment_check(env, 0) == 2.0 and moment_check(env, 2) == 2.0
    geom, A, tpl = hexagonal_preset()
    assert moment_check(gen_crystal_conductance(geom, A, tpl, 4, Law.constant(1.0)), 0) == 3.0


def test_mott_moment_brute_force():
    env = gen_mott_ppp(1, 30, 1.0, Law.uniform(-0.5, 0.5), R_max=10, seed=8)
    N = env.n_points
    E = np.array(env.meta["energies"])
    tot = 0.0
    for a in range(N):
        for b in range(N):
            if a == b:
                continue
            d = abs(env.points[a, 0] - env.points[b, 0])
            d = min(d, 30 - d)
            if d < 10:
                tot += math.exp(-d - abs(E[a]) - abs(E[b]) - abs(E[a] - E[b])) * d * d
    assert moment_check(env, 2) == pytest.approx(tot / N, rel=1e-10)
    assert moment_check(env, 0) == pytest.approx(palm_site_average(env, env.exit_rates), rel=1e-14)


def test_ergodic_check():
    env = gen_zd_conductance(1, 256, Law.constant(1.0))
    phi = bump(1)
    chk = ergodic_average_check(env, np.ones(256), phi, 1 / 64)
    assert chk.rhs == pytest.approx(phi.integral())
    assert chk.gap < 1e-6
    z = ergodic_average_check(env, env.exit_rates, zero_function(1), 1 / 64)
    assert (z.lhs, z.rhs, z.gap) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError, match="L >"):
        ergodic_average_check(env, np.ones(256), phi, 1 / 256)


def test_serialization_roundtrip(tmp_path):
    env = gen_mott_ppp(2, 20, 0.5, Law.uniform(-1, 1), R_max=6, seed=1)
    save_environment(env, tmp_path / "e.txt")
    back = load_environment(tmp_path / "e.txt")
    assert np.array_equal(back.points, env.points)
    assert np.array_equal(back.rates, env.rates)
    assert back.to_text() == env.to_text()


def test_regeneration_is_byte_identical():
    law = EnvironmentLaw("zd_conductance", {"d": 2, "L": 8, "law": Law.lognormal(0, 0.5)})
    assert law.generate(3).to_text() == law.generate(3).to_text()
    assert law.generate(3).to_text() != law.generate(4).to_text()


def test_invalid_environments_rejected():
    g = GroupAction(1)
    with pytest.raises(ValueError, match="self-rates"):
        Environment(g, [[4.0]], [[0.0], [1.0]], [[0, 0]], [1.0], [[0.0]])
    with pytest.raises(ValueError, match="exit rate"):
        Environment(g, [[4.0]], [[0.0], [1.0], [2.0]], [[0, 1]], [1.0], [[1.0]])
    with pytest.raises(ValueError):
        Environment(g, [[4.0]], [[0.0], [1.0]], [[0, 1]], [-1.0], [[1.0]])
    with pytest.raises(ValueError):
        EnvironmentLaw("percolation_cluster", {"L": 4, "p": 1.3})
