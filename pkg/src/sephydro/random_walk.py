"""The single random walk on an environment.

Path sampling, the transition semigroup by uniformization, resolvent solves
by conjugate gradient and the Dirichlet form.  Scaling: coordinates are
multiplied by ``eps`` and rates by ``eps**-2``; ``eps = 1`` is the
unscaled walk.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse, stats

from .seeding import rng_for
from .solvers import ConvergenceError, pcg

__all__ = [
    "GeneratorOperator",
    "WalkPath",
    "sample_walk_path",
    "heat_kernel_row",
    "semigroup_apply",
    "resolvent_solve",
    "dirichlet_form",
    "UniformizationError",
    "MAX_POISSON_MEAN",
    "MAX_SPLITS",
]

MAX_POISSON_MEAN = 700.0
MAX_SPLITS = 64


class UniformizationError(RuntimeError):
    pass


class GeneratorOperator:
    """``(L^eps u)(i) = eps^-2 sum_j c_ij (u_j - u_i)`` as a sparse matrix."""

    def __init__(self, env, eps=1.0):
        self.env = env
        self.eps = float(eps)
        self.matrix = (env.laplacian * self.eps**-2).tocsr()
        self.max_rate = env.max_rate * self.eps**-2

    def __matmul__(self, u):
        return self.matrix @ u

    def apply(self, u):
        return self.matrix @ np.asarray(u, dtype=float)

    def inner(self, u, v):
        """``<u, v>`` in ``L^2(mu^eps)`` (counting measure times ``eps^d``)."""
        return self.eps**self.env.d * float(np.dot(u, v))


@dataclass(frozen=True)
class WalkPath:
    times: np.ndarray
    points: np.ndarray
    t_end: float

    @property
    def start(self):
        return int(self.points[0])

    def position_at(self, t):
        k = np.searchsorted(self.times, t, side="right") - 1
        return int(self.points[k])


def _neighbour_tables(env):
    C = env.rate_matrix
    return C.indptr, C.indices, C.data


def sample_walk_path(env, x0, t_end, seed=0):
    """Jump chain with Exp(c_i) holding times and jumps to ``j`` w.p. ``c_ij / c_i``."""
    if not 0 <= x0 < env.n_points:
        raise ValueError("x0 is not a valid point index")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    rng = rng_for(seed, "walk_path")
    indptr, indices, data = _neighbour_tables(env)
    c = env.exit_rates
    times, pts = [0.0], [int(x0)]
    t, x = 0.0, int(x0)
    while True:
        t += rng.exponential(1.0 / c[x])
        if t > t_end:
            break
        lo, hi = indptr[x], indptr[x + 1]
        k = np.searchsorted(np.cumsum(data[lo:hi]), rng.random() * c[x], side="right")
        x = int(indices[lo + min(k, hi - lo - 1)])
        times.append(t)
        pts.append(x)
    return WalkPath(np.array(times), np.array(pts, dtype=np.int64), float(t_end))


def _uniformized(env, eps, t, F, tol, max_splits=MAX_SPLITS):
    """``exp(t L^eps) F`` by the Poisson-weighted series of ``I + L^eps / Lambda``."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    if not 0 < tol <= 1e-3:
        raise ValueError("tol must lie in (0, 1e-3]")
    F = np.array(F, dtype=float)
    if t == 0:
        return F, {"splits": 0, "terms": 0, "rate": 0.0}
    gen = GeneratorOperator(env, eps)
    lam = gen.max_rate
    mean = lam * t
    splits = max(1, math.ceil(mean / MAX_POISSON_MEAN))
    if splits > max_splits:
        raise UniformizationError(
            f"Lambda*t = {mean:.4g} needs {splits} time splits (cap {max_splits}); reduce t or eps^-2")
    P = (sparse.identity(env.n_points, format="csr") + gen.matrix / lam).tocsr()
    mu = mean / splits
    piece_tol = tol / splits
    n_max = int(stats.poisson.isf(piece_tol, mu)) + 1
    w = stats.poisson.pmf(np.arange(n_max + 1), mu)
    out = F
    for _ in range(splits):
        v = out
        acc = w[0] * v
        for n in range(1, n_max + 1):
            v = P @ v
            acc = acc + w[n] * v
        out = acc
    return out, {"splits": splits, "terms": n_max + 1, "rate": lam}


def semigroup_apply(env, eps, t, f, tol=1e-10):
    """``P^eps_t f`` by uniformization applied directly to ``f``."""
    out, _ = _uniformized(env, eps, t, f, tol)
    return out


def heat_kernel_row(env, eps, x, t, tol=1e-10, return_info=False):
    """Transition probabilities ``p^eps_t(x, .)`` of the walk started at ``x``.

    Computed as ``P_t 1_x`` (the kernel is symmetric for the counting
    measure); negative round-off is clamped and the row renormalized.
    """
    e = np.zeros(env.n_points)
    e[x] = 1.0
    row, info = _uniformized(env, eps, t, e, tol)
    clamp = float(-row[row < 0].sum()) if np.any(row < 0) else 0.0
    row = np.clip(row, 0.0, None)
    row /= row.sum()
    info["clamped_mass"] = clamp
    return (row, info) if return_info else row


def resolvent_solve(env, eps, lam, f, tol=1e-10, preconditioner="jacobi", maxiter=None,
                    return_info=False):
    """Solve ``(lam - L^eps) u = f`` by preconditioned CG.

    The maximum principle ``||u||_inf <= ||f||_inf / lam`` and the bound
    ``lam ||u||_2 <= ||f||_2`` are asserted up to the solver tolerance.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    f = np.asarray(f, dtype=float)
    A = (lam * sparse.identity(env.n_points, format="csr") - GeneratorOperator(env, eps).matrix).tocsr()
    u, info = pcg(A, f, tol=tol, maxiter=maxiter, preconditioner=preconditioner)
    fn2 = float(np.linalg.norm(f))
    slack = tol * fn2 / lam
    if np.abs(u).max(initial=0.0) > np.abs(f).max(initial=0.0) / lam + slack:
        raise AssertionError("maximum principle violated by the resolvent solution")
    if lam * float(np.linalg.norm(u)) > fn2 * (1 + tol) + lam * slack:
        raise AssertionError("resolvent L2 bound violated")
    return (u, info) if return_info else u


def dirichlet_form(env, eps, u, v):
    """``(eps^{d-2}/2) sum_x sum_y c_xy (u_y - u_x)(v_y - v_x)``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    i, j = env.edges[:, 0], env.edges[:, 1]
    return eps ** (env.d - 2) * float(np.sum(env.rates * (u[j] - u[i]) * (v[j] - v[i])))
