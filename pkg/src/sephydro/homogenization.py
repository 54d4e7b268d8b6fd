"""Effective diffusion matrix of a random environment.

``a . D a`` is the minimum over point functions ``chi`` of

    E(chi) = (1/N) sum_{edges} c_ij (a . delta_ij - (chi_j - chi_i))^2

on the periodized sample.  The minimizer (the corrector) solves the graph
Poisson equation ``L chi = b`` with ``b_i = sum_j c_ij a . delta_ij``.
Off-diagonal entries of ``D`` come from polarization.  Also here: a Monte
Carlo mean-square-displacement cross-check and the convergence checks of the
rescaled resolvent and semigroup towards their continuum limits.
"""
import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as splinalg

from . import random_walk
from .heat import gaussian_smooth, homogenized_resolvent
from .seeding import rng_for
from .solvers import ConvergenceError, pcg

__all__ = [
    "Corrector",
    "corrector_solve",
    "EffectiveMatrix",
    "effective_matrix",
    "zero_corrector_bound",
    "MSDEstimate",
    "msd_diffusivity",
    "WrapWarning",
    "ConvergenceReport",
    "resolvent_convergence_check",
    "semigroup_convergence_check",
    "tail_mass_check",
    "scaled_family",
]


class WrapWarning(UserWarning):
    """The walk has likely wrapped around the torus."""


@dataclass(frozen=True)
class Corrector:
    direction: np.ndarray
    chi: np.ndarray
    energy: float
    zero_energy: float
    residual: float
    iterations: int
    solver: str


def _components(env):
    return csgraph.connected_components(env.rate_matrix, directed=False)


def _edge_energy(env, a, chi):
    i, j = env.edges[:, 0], env.edges[:, 1]
    g = env.disp @ a - (chi[j] - chi[i])
    return float(np.sum(env.rates * g * g)) / env.n_points


def zero_corrector_bound(env, a):
    """Energy of ``chi = 0``; an upper bound for ``a . D a``."""
    a = np.asarray(a, dtype=float)
    return _edge_energy(env, a, np.zeros(env.n_points))


def _direct_solve(A, b, labels, n_comp):
    # pin one node per component, then solve the nonsingular reduced system
    pins = np.array([np.flatnonzero(labels == k)[0] for k in range(n_comp)])
    keep = np.setdiff1d(np.arange(len(b)), pins)
    x = np.zeros(len(b))
    if len(keep):
        x[keep] = splinalg.spsolve(A[keep][:, keep].tocsc(), b[keep])
    return x


def corrector_solve(env, a, tol=1e-10, preconditioner="auto", maxiter=None):
    """Corrector in direction ``a`` (normalized to a unit vector).

    ``preconditioner`` is ``"jacobi"``, ``"amg"``, ``"direct"`` or ``"auto"``
    (Jacobi CG, then AMG-preconditioned CG, then a sparse direct solve).

    Raises
    ------
    ConvergenceError
        If the chosen iterative solver misses ``tol``.
    ValueError
        If the right-hand side is not orthogonal to constants.
    """
    a = np.asarray(a, dtype=float)
    if np.linalg.norm(a) == 0:
        raise ValueError("direction must be nonzero")
    a = a / np.linalg.norm(a)
    N = env.n_points
    i, j = env.edges[:, 0], env.edges[:, 1]
    flux = env.rates * (env.disp @ a)
    b = np.zeros(N)
    np.add.at(b, i, flux)
    np.add.at(b, j, -flux)
    n_comp, labels = _components(env)
    scale = float(np.abs(flux).sum()) or 1.0
    comp_sums = np.bincount(labels, weights=b, minlength=n_comp)
    if np.abs(comp_sums).max() > 1e-10 * scale:
        raise ValueError("inconsistent right-hand side: the environment is broken")
    A = (-env.laplacian).tocsr()
    rhs = -b  # A chi = -L chi = -b
    if not np.any(rhs):
        chi, iters, res, used = np.zeros(N), 0, 0.0, "none"
    else:
        order = {"auto": ["jacobi", "amg", "direct"]}.get(preconditioner, [preconditioner])
        last = None
        for kind in order:
            if kind == "direct":
                chi = _direct_solve(A, rhs, labels, n_comp)
                iters, used = 0, "direct"
                break
            try:
                chi, info = pcg(A, rhs, tol=tol, maxiter=maxiter, preconditioner=kind, nullspace=labels)
                iters, used = info.iterations, kind
                break
            except ConvergenceError as exc:
                last = exc
        else:
            raise last
        res = float(np.linalg.norm(rhs - A @ chi) / np.linalg.norm(rhs))
        if res > tol:
            raise ConvergenceError(f"corrector residual {res:.3e} above {tol:g}", [res])
    # gauge: zero mean on every connected component
    means = np.bincount(labels, weights=chi, minlength=n_comp) / np.bincount(labels, minlength=n_comp)
    chi = chi - means[labels]
    energy = _edge_energy(env, a, chi)
    e0 = _edge_energy(env, a, np.zeros(N))
    return Corrector(a, chi, energy, e0, res, iters, used)


@dataclass(frozen=True)
class EffectiveMatrix:
    """Finite-volume effective matrix with its eigen-decomposition."""

    D: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    rank_threshold: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def rank(self):
        return int(np.sum(self.eigenvalues > 0))

    @property
    def lambda_max(self):
        return float(self.eigenvalues[0])

    def report(self, model=None, seed=None):
        """Dictionary in the ``D-report`` JSON layout."""
        return {
            "schema_version": 1,
            "model": model,
            "L": self.diagnostics.get("L"),
            "seed": seed,
            "D": self.D.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "energies": self.diagnostics.get("energies"),
            "residuals": self.diagnostics.get("residuals"),
        }

    def write_report(self, path, model=None, seed=None):
        with open(path, "w") as fh:
            json.dump(self.report(model, seed), fh, indent=2)


def _probes(d):
    out = [(k, k, np.eye(d)[k]) for k in range(d)]
    for k in range(d):
        for l in range(k + 1, d):
            out.append((k, l, (np.eye(d)[k] + np.eye(d)[l]) / math.sqrt(2.0)))
    return out


def effective_matrix(env, tol=1e-10, rank_rel=1e-8, preconditioner="auto"):
    """Assemble ``D_L`` from ``d (d + 1) / 2`` corrector energies.

    Diagonal entries are the energies in the canonical directions;
    ``D_kl = E((e_k + e_l)/sqrt 2) - (D_kk + D_ll)/2``.  Eigenvalues below
    ``rank_rel * lambda_max`` are set to exactly zero.
    """
    d = env.d
    D = np.zeros((d, d))
    energies, residuals, solvers = {}, {}, {}
    for k, l, a in _probes(d):
        cor = corrector_solve(env, a, tol=tol, preconditioner=preconditioner)
        key = f"{k}{l}"
        energies[key] = cor.energy
        residuals[key] = cor.residual
        solvers[key] = cor.solver
        if k == l:
            D[k, k] = cor.energy
        else:
            D[k, l] = cor.energy
    for k in range(d):
        for l in range(k + 1, d):
            D[k, l] = D[l, k] = D[k, l] - 0.5 * (D[k, k] + D[l, l])
    w, U = np.linalg.eigh(D)
    order = np.argsort(w)[::-1]
    w, U = w[order], U[:, order]
    top = max(w[0], 0.0)
    if w[-1] < -1e-10 * max(top, 1e-300):
        raise ArithmeticError(f"effective matrix is not positive semidefinite (eigenvalue {w[-1]:.3e})")
    thr = rank_rel * top
    w = np.where(w > thr, w, 0.0)
    diag = {"L": env.side, "energies": energies, "residuals": residuals, "solvers": solvers,
            "n_points": env.n_points}
    return EffectiveMatrix(D, w, U, thr, diag)


# -------------------------------------------------------------------------
# mean-square displacement


@dataclass(frozen=True)
class MSDEstimate:
    t: float
    D: np.ndarray
    stderr: np.ndarray
    replicas: int
    mean_jumps: float

    def to_csv(self, path):
        d = self.D.shape[0]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "entry", "estimate", "stderr"])
            for k in range(d):
                for l in range(d):
                    w.writerow([self.t, f"{k}{l}", repr(float(self.D[k, l])), repr(float(self.stderr[k, l]))])


def _padded_neighbours(env):
    C = env.rate_matrix
    deg = np.diff(C.indptr)
    width = int(deg.max())
    N = env.n_points
    nbr = np.zeros((N, width), dtype=np.int64)
    cum = np.zeros((N, width))
    # displacement from i to each neighbour (minimal image)
    step = np.zeros((N, width, env.d))
    for r in range(N):
        lo, hi = C.indptr[r], C.indptr[r + 1]
        nbr[r, : hi - lo] = C.indices[lo:hi]
        cum[r, : hi - lo] = np.cumsum(C.data[lo:hi])
        cum[r, hi - lo:] = np.inf
        nbr[r, hi - lo:] = C.indices[hi - 1]
    for r in range(N):
        step[r] = env.minimal_image(env.points[nbr[r]] - env.points[r])
    return nbr, cum, step


def msd_diffusivity(env, t, replicas=10_000, seed=0, strict=False):
    """Estimate ``Cov(X_t) / (2 t)`` from independent walks.

    Walks start from uniformly chosen points and accumulate their
    displacement jump by jump (never wrapped).  Standard errors are from the
    sample variance of the per-walk products ``X_k X_l``.  Parallel edges
    between the same two points are merged, which is exact for the walk
    except that their displacements must agree; boxes that small are rejected.
    """
    if replicas < 1000:
        raise ValueError("at least 1000 replicas are required")
    c = env.exit_rates
    if float(c.mean()) * t < 100:
        raise ValueError("t too small: expected jump count below 100")
    nbr, cum, step = _padded_neighbours(env)
    rng = rng_for(seed, "msd")
    x = rng.integers(0, env.n_points, size=replicas)
    clock = rng.exponential(1.0 / c[x])
    disp = np.zeros((replicas, env.d))
    jumps = np.zeros(replicas, dtype=np.int64)
    active = np.flatnonzero(clock <= t)
    while len(active):
        xa = x[active]
        u = rng.random(len(active)) * c[xa]
        k = np.argmax(cum[xa] > u[:, None], axis=1)
        disp[active] += step[xa, k]
        x[active] = nbr[xa, k]
        jumps[active] += 1
        clock[active] += rng.exponential(1.0 / c[x[active]])
        active = active[clock[active] <= t]
    X = disp - disp.mean(axis=0)
    prod = X[:, :, None] * X[:, None, :]
    est = prod.mean(axis=0) / (2 * t)
    se = prod.std(axis=0, ddof=1) / math.sqrt(replicas) / (2 * t)
    spread = math.sqrt(max(2 * np.trace(est) * t, 0.0))
    half = env.half_width()
    if spread > half / 2:  # L/4 for a cube of side L
        msg = f"diffusive spread {spread:.3g} exceeds a quarter of the box; estimate biased by wrapping"
        if strict:
            raise ValueError(msg)
        warnings.warn(msg, WrapWarning, stacklevel=2)
    return MSDEstimate(float(t), est, se, replicas, float(jumps.mean()))


# -------------------------------------------------------------------------
# convergence of the rescaled walk


@dataclass(frozen=True)
class ConvergenceReport:
    eps: list
    gaps: list
    kind: str

    @property
    def strictly_decreasing(self):
        return all(b < a for a, b in zip(self.gaps, self.gaps[1:]))

    @property
    def ratio(self):
        """Final gap over first gap."""
        return self.gaps[-1] / self.gaps[0] if self.gaps[0] > 0 else 0.0


def _scaled_points(env, eps, phi):
    x = eps * env.centered
    inner = eps * env.half_width()
    if phi.r_supp >= inner:
        raise ValueError(f"support radius {phi.r_supp} does not fit inside the box (half width {inner:.4g})")
    return x


def resolvent_convergence_check(envs, eps_list, phi, lam, D, tol=1e-8):
    """L^1(mu^eps) gaps ``||R^eps_lam phi - R_lam phi||`` along a family.

    ``envs[k]`` is sampled at scale ``eps_list[k]``.  The continuum resolvent
    uses the effective matrix ``D`` supplied by the caller.
    """
    gaps = []
    for env, eps in zip(envs, eps_list):
        x = _scaled_points(env, eps, phi)
        f = phi(x)
        if not np.any(f):
            gaps.append(0.0)
            continue
        u = random_walk.resolvent_solve(env, eps, lam, f, tol=1e-12, preconditioner="jacobi",
                                        maxiter=20 * env.n_points)
        v = homogenized_resolvent(phi, D, lam, x, r_supp=phi.r_supp, tol=tol)
        gaps.append(eps**env.d * float(np.abs(u - v).sum()))
    return ConvergenceReport(list(eps_list), gaps, "resolvent")


def semigroup_convergence_check(envs, eps_list, phi, t, D, tol=1e-9):
    """L^1(mu^eps) gaps ``||P^eps_t phi - P_t phi||`` along a family."""
    gaps = []
    for env, eps in zip(envs, eps_list):
        x = _scaled_points(env, eps, phi)
        f = phi(x)
        if t == 0 or not np.any(f):
            gaps.append(0.0)
            continue
        u = random_walk.semigroup_apply(env, eps, t, f, tol=1e-12)
        v = gaussian_smooth(phi, D, t, x, r_supp=phi.r_supp, tol=tol)
        gaps.append(eps**env.d * float(np.abs(u - v).sum()))
    return ConvergenceReport(list(eps_list), gaps, "semigroup")


def tail_mass_check(env, eps_list, ells):
    """``eps^d sum_{|eps x| >= l} psi(|eps x|)`` with ``psi(r) = 1/(1 + r^(d+1))``.

    Returns an array of shape ``(len(eps_list), len(ells))``.
    """
    d = env.d
    r0 = np.linalg.norm(env.centered, axis=1)
    out = np.zeros((len(eps_list), len(ells)))
    for a, eps in enumerate(eps_list):
        r = eps * r0
        psi = 1.0 / (1.0 + r ** (d + 1))
        for b, ell in enumerate(ells):
            out[a, b] = eps**d * psi[r >= ell].sum()
    return out


def scaled_family(make_env, eps_list, width):
    """Environments with ``L = round(width / eps)`` so the scaled box stays fixed.

    ``make_env(L, k)`` builds the ``k``-th member at side ``L``.
    """
    envs = []
    for k, eps in enumerate(eps_list):
        L = int(round(width / eps))
        envs.append(make_env(L, k))
    return envs
