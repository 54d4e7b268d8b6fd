"""Macroscopic side: empirical measures, the heat equation and the
hydrodynamic-limit experiment for exclusion on a random environment.

``pi^eps[eta] = eps^d sum_x eta(x) delta_{eps x}`` is compared with
``rho(x, t) dx`` where ``rho(., t) = P_t rho_0`` solves
``d_t rho = div(D grad rho)``.
"""
import csv
import json
import math
import os
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .exclusion import ParticleConfig, sample_clocks, simulate_snapshots, snapshots_from_clocks
from .heat import MacroProfile, heat_solution
from .random_walk import resolvent_solve
from .seeding import rng_for, seed_derive
from .testfunctions import TestFunction, integrate_box

__all__ = [
    "EmpiricalMeasure",
    "SupportError",
    "empirical_eval",
    "measure_distance",
    "heat_solution",
    "MacroProfile",
    "integrate_against",
    "weak_solution_residual",
    "init_product_bernoulli",
    "bernoulli_variance",
    "CorrectedGap",
    "corrected_empirical_gap",
    "HydroReport",
    "hydro_experiment",
    "check_hydro_support",
]

SCHEMA_VERSION = 1


class SupportError(ValueError):
    """A test function or profile does not fit in the scaled box."""


def _scaled(env, eps, r_supp):
    inner = eps * env.half_width()
    if r_supp > inner + 1e-12:
        raise SupportError(f"support radius {r_supp} exceeds the scaled half width {inner:.6g}")
    return eps * env.centered


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """``eps^d sum_x eta(x) delta_{eps x}``; ``eta = None`` stands for all ones."""

    env: object
    eps: float
    eta: np.ndarray = None

    @property
    def occupation(self):
        if self.eta is None:
            return np.ones(self.env.n_points, dtype=np.int8)
        return np.asarray(self.eta)

    @property
    def total_mass(self):
        return self.eps**self.env.d * float(self.occupation.sum())

    def __call__(self, phi):
        return empirical_eval(self.env, self.occupation, self.eps, phi)


def empirical_eval(env, eta, eps, phi):
    """``pi^eps[eta](phi) = eps^d sum_{x: eta(x)=1} phi(eps x)``."""
    x = _scaled(env, eps, phi.r_supp)
    eta = np.asarray(eta)
    if eta.ndim == 2:
        return eps**env.d * (eta @ phi(x))
    return eps**env.d * float(np.dot(eta, phi(x)))


def measure_distance(a, b, j_max=None):
    """Truncated ``sum_j 2^-j min(1, |a_j - b_j|)`` and its tail bound.

    Returns ``(value, tail)`` with ``tail = 2^(-j_max + 1)`` bounding the
    omitted terms.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("evaluation lists must cover the same prefix of the family")
    J = len(a) if j_max is None else int(j_max)
    if J > len(a):
        raise ValueError("j_max exceeds the number of evaluations")
    w = 2.0 ** -np.arange(J)
    val = float(np.sum(w * np.minimum(1.0, np.abs(a[:J] - b[:J]))))
    return val, 2.0 ** (-J + 1)


def integrate_against(phi, profile, t, tol=1e-10):
    """``int phi(x) rho(x, t) dx`` over the support of ``phi``."""
    bps = [p for p in profile.breakpoints() if abs(p) < phi.r_supp] if t == 0 else None

    def g(x):
        return phi(x) * heat_solution(profile, x, t)

    return integrate_box(g, phi.d, phi.r_supp, tol=tol, breakpoints=bps)


def weak_solution_residual(path, phi, D, times, t=None, quad_tol=0.0):
    """``alpha_t(phi) - alpha_0(phi) - int_0^t alpha_s(div D grad phi) ds``.

    ``path(s, g)`` returns ``alpha_s(g)`` for a test function ``g`` (only
    its values, ``d`` and ``r_supp`` are used for ``div D grad phi``).  The time integral is the
    trapezoid rule on ``times`` (which must contain 0 and ``t`` and have at
    least 8 intervals up to ``t``).

    Returns
    -------
    residual : float
    bound : float
        Trapezoid error estimate ``(h / 12) sum |second differences|`` with a
        safety factor of 2, plus ``quad_tol`` per evaluation.
    """
    times = np.asarray(times, dtype=float)
    t = float(times[-1]) if t is None else float(t)
    grid = times[times <= t + 1e-14]
    if grid[0] != 0 or not np.isclose(grid[-1], t):
        raise ValueError("time grid must contain 0 and t")
    if len(grid) < 9:
        raise ValueError("time grid too coarse: fewer than 8 intervals")
    D = np.atleast_2d(np.asarray(D, dtype=float))

    lphi = TestFunction(phi.d, phi.r_supp, lambda x: phi.div_d_grad(x, D), None, None,
                        name=f"div D grad {phi.name}", smoothness=phi.smoothness)
    a_t = path(t, phi)
    a_0 = path(0.0, phi)
    if not np.any(D):
        return a_t - a_0, 2 * quad_tol
    vals = np.array([path(s, lphi) for s in grid])
    h = np.diff(grid)
    integral = float(np.sum(0.5 * h * (vals[1:] + vals[:-1])))
    second = np.abs(vals[2:] - 2 * vals[1:-1] + vals[:-2])
    bound = 2.0 * float(h.max()) * float(second.sum()) / 12.0 + quad_tol * (len(grid) * float(h.max()) + 2)
    return a_t - a_0 - integral, bound


def init_product_bernoulli(env, rho0, eps, seed=0, replica=0):
    """Independent ``eta(x) ~ Bernoulli(rho0(eps x))``."""
    p = np.clip(np.asarray(rho0(eps * env.centered), dtype=float), 0.0, 1.0)
    rng = rng_for(seed, "initial_config", replica)
    return ParticleConfig((rng.random(env.n_points) < p).astype(np.int8))


def bernoulli_variance(env, rho0, eps, phi):
    """``Var pi^eps(phi) = eps^(2d) sum_x phi(eps x)^2 rho (1 - rho)`` under the product law."""
    x = eps * env.centered
    p = np.clip(rho0(x), 0.0, 1.0)
    return eps ** (2 * env.d) * float(np.sum(phi(x) ** 2 * p * (1 - p)))


@dataclass(frozen=True)
class CorrectedGap:
    gap: float
    G: np.ndarray
    G_eps: np.ndarray
    eps: float
    d: int

    def deviation(self, eta):
        """``|pi(G) - pi(G^eps)|`` for one or several configurations."""
        eta = np.asarray(eta, dtype=float)
        return self.eps**self.d * np.abs(eta @ (self.G - self.G_eps))

    def check(self, eta):
        return bool(np.all(self.deviation(eta) <= self.gap * (1 + 1e-12) + 1e-300))


def corrected_empirical_gap(env, eps, G, D, lam=1.0, tol=1e-11):
    """Gap between ``G`` and ``G^eps = R^eps_lam (lam G - div D grad G)``.

    The gap ``eps^d sum_x |G(eps x) - G^eps(eps x)|`` bounds
    ``|pi^eps(G) - pi^eps(G^eps)|`` for every configuration.
    """
    x = _scaled(env, eps, G.r_supp)
    D = np.atleast_2d(np.asarray(D, dtype=float))
    g = G(x)
    f = lam * g - G.div_d_grad(x, D)
    if not np.any(f):
        ge = np.zeros_like(g)
    else:
        ge = resolvent_solve(env, eps, lam, f, tol=tol, maxiter=20 * env.n_points)
    gap = eps**env.d * float(np.abs(g - ge).sum())
    return CorrectedGap(gap, g, ge, float(eps), env.d)


# -------------------------------------------------------------------------
# end-to-end experiment


@dataclass
class HydroReport:
    eps: list
    phi_names: list
    times: np.ndarray
    deviations: np.ndarray  # (n_eps, n_phi, replicas)
    thresholds: list
    config: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def medians(self):
        return np.median(self.deviations, axis=2)

    def exceedance(self):
        """Fraction of replicas with sup deviation above each threshold."""
        return np.stack([(self.deviations > d).mean(axis=2) for d in self.thresholds], axis=-1)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config,
            "eps": self.eps,
            "phi": self.phi_names,
            "n_times": len(self.times),
            "median_sup_deviation": self.medians.tolist(),
            "mean_sup_deviation": self.deviations.mean(axis=2).tolist(),
            "thresholds": self.thresholds,
            "exceedance": self.exceedance().tolist(),
            "diagnostics": self.diagnostics,
        }

    def write(self, out_dir, profile=None, profile_points=None):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "hydro-report.json"), "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
        with open(os.path.join(out_dir, "deviations.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "phi", "replica", "sup_deviation"])
            for a, e in enumerate(self.eps):
                for b in range(len(self.phi_names)):
                    for r, v in enumerate(self.deviations[a, b]):
                        w.writerow([repr(float(e)), b, r, repr(float(v))])
        if profile is not None:
            xs = np.linspace(-3, 3, 121) if profile_points is None else np.asarray(profile_points)
            with open(os.path.join(out_dir, "profile.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["x", "t", "rho"])
                pts = np.zeros((len(xs), profile.d))
                pts[:, 0] = xs
                for tq in self.times[:: max(1, len(self.times) // 8)]:
                    for xv, rv in zip(xs, heat_solution(profile, pts, float(tq))):
                        w.writerow([repr(float(xv)), repr(float(tq)), repr(float(rv))])


def check_hydro_support(env, eps, profile, phis, T):
    """The window condition ``r_supp + 6 sqrt(2 lambda_max T) <= eps L / 2``."""
    lam_max = float(np.linalg.eigvalsh(profile.D).max())
    need = max(p.r_supp for p in phis) + 6.0 * math.sqrt(2.0 * max(lam_max, 0.0) * T)
    have = eps * env.half_width()
    if need > have + 1e-12:
        raise SupportError(
            f"r_supp + 6 sqrt(2 lambda_max T) = {need:.4g} exceeds eps L / 2 = {have:.4g}")


def hydro_experiment(envs, profile, eps_list, T, phis, replicas, seed=0, n_times=64,
                     thresholds=(0.01, 0.05, 0.1), engine="kmc", quad_tol=1e-10):
    """Sup-over-time deviations ``|pi^eps_t(phi) - m int phi rho(., t)|``.

    ``envs[k]`` is the environment used at scale ``eps_list[k]``.  Each
    replica draws a product Bernoulli initial state and runs exclusion with
    rates multiplied by ``eps**-2``; ``engine`` picks the kinetic Monte
    Carlo sampler or the clock construction.  ``m`` is the point intensity
    of the environment (1 on Z^d).
    """
    times = np.linspace(0.0, T, n_times)
    for env, eps in zip(envs, eps_list):
        check_hydro_support(env, eps, profile, phis, T)
    t_start = _time.time()
    exact = np.array([[integrate_against(phi, profile, float(tq), tol=quad_tol) for tq in times] for phi in phis])
    dev = np.zeros((len(eps_list), len(phis), replicas))
    swaps = np.zeros((len(eps_list), replicas), dtype=np.int64)
    for a, (env, eps) in enumerate(zip(envs, eps_list)):
        m = env.intensity
        x = eps * env.centered
        weights = np.stack([eps**env.d * phi(x) for phi in phis])  # (n_phi, N)
        for r in range(replicas):
            rs = seed_derive(seed, "hydro_replica", a * 1_000_003 + r)
            eta0 = init_product_bernoulli(env, profile.initial, eps, seed=rs)
            if engine == "kmc":
                snaps, n = simulate_snapshots(env, eta0, times, rate_scale=eps**-2, seed=rs)
            elif engine == "graphical":
                K = sample_clocks(env, T, seed=rs, rate_scale=eps**-2)
                snaps = snapshots_from_clocks(env, K, eta0, times)
                n = len(K)
            else:
                raise ValueError("engine must be 'kmc' or 'graphical'")
            swaps[a, r] = n
            emp = weights @ snaps.T.astype(float)  # (n_phi, n_times)
            dev[a, :, r] = np.abs(emp - m * exact).max(axis=1)
    diag = {"wall_time_s": _time.time() - t_start, "mean_swaps": swaps.mean(axis=1).tolist(),
            "quad_tol": quad_tol, "engine": engine}
    cfg = {"eps": list(map(float, eps_list)), "T": T, "replicas": replicas, "seed": seed,
           "n_times": n_times, "profile": profile.kind}
    return HydroReport(list(map(float, eps_list)), [p.name for p in phis], times, dev,
                       list(thresholds), cfg, diag)
