"""Symmetric simple exclusion on an environment.

The process is built from per-edge Poisson clocks: whenever the clock of an
edge rings, the occupation values at its endpoints are exchanged.  Time is
cut into slabs of width ``t0``; inside a slab the edges that fire split the
points into connected components, and each component is processed on its own
in increasing time order.  A slab is certified when every component is
smaller than a cap.

Besides the construction this module has generator evaluation on local
functions, the Dynkin martingale of a linear observable, Monte Carlo
duality checks, the pathwise kernel representation and a fast kinetic Monte
Carlo sampler used by the hydrodynamic experiments.
"""
import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy import integrate, stats
from scipy.sparse import coo_matrix, csgraph

from .environment import hexagonal_preset
from .random_walk import heat_kernel_row
from .seeding import rng_for, seed_derive

__all__ = [
    "ParticleConfig",
    "ClockSchedule",
    "sample_clocks",
    "default_t0",
    "SlabCertificate",
    "slab_certificates",
    "CertificateError",
    "exchange",
    "EvolveResult",
    "evolve",
    "evolve_batch",
    "LocalFunction",
    "UndeclaredSupportError",
    "generator_apply",
    "fd_generator_check",
    "MartingalePath",
    "dynkin_path",
    "martingale_moments",
    "duality_mc",
    "nagy_check",
    "simulate_snapshots",
    "snapshots_from_clocks",
    "write_trajectory_csv",
]

log = logging.getLogger(__name__)

# bond percolation thresholds of the ambient lattices
BOND_PC = {"zd1": 1.0, "zd2": 0.5, "zd3": 0.2488126, "hexagonal": 1.0 - 2.0 * math.sin(math.pi / 18)}
DEFAULT_CAP = 1000
MAX_HALVINGS = 10


class CertificateError(RuntimeError):
    pass


class UndeclaredSupportError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ParticleConfig:
    """Occupation variables ``eta(x)`` in {0, 1}, one per point index."""

    occupation: np.ndarray

    def __post_init__(self):
        occ = np.asarray(self.occupation)
        if occ.ndim != 1 or not np.all((occ == 0) | (occ == 1)):
            raise ValueError("occupation must be a 1-D array of zeros and ones")
        occ = occ.astype(np.int8)
        occ.setflags(write=False)
        object.__setattr__(self, "occupation", occ)

    def __array__(self, dtype=None, copy=None):
        return self.occupation if dtype is None else self.occupation.astype(dtype)

    def __len__(self):
        return len(self.occupation)

    def __eq__(self, other):
        return np.array_equal(self.occupation, np.asarray(other))

    @property
    def count(self):
        return int(self.occupation.sum())

    @classmethod
    def empty(cls, n):
        return cls(np.zeros(n, dtype=np.int8))

    @classmethod
    def full(cls, n):
        return cls(np.ones(n, dtype=np.int8))


def _occ(eta):
    occ = np.asarray(eta, dtype=np.int8)
    if occ.ndim != 1 or not np.all((occ == 0) | (occ == 1)):
        raise ValueError("occupation must be a 1-D array of zeros and ones")
    return occ


# -------------------------------------------------------------------------
# clocks


@dataclass(frozen=True, eq=False)
class ClockSchedule:
    """All clock rings on ``[0, T]``, stored globally sorted by time.

    ``edge_times(e)`` recovers the per-edge realization.  ``rate_scale``
    multiplies every edge rate (``eps**-2`` for the diffusively rescaled
    process).
    """

    horizon: float
    t0: float
    times: np.ndarray
    edge_ids: np.ndarray
    n_edges: int
    seed: int = 0
    rate_scale: float = 1.0
    redraws: int = 0

    def __post_init__(self):
        for name, dt in (("times", float), ("edge_ids", np.int64)):
            a = np.array(getattr(self, name), dtype=dt)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def __len__(self):
        return len(self.times)

    @property
    def n_slabs(self):
        if self.horizon <= 0:
            return 0
        return max(1, math.ceil(self.horizon / self.t0 - 1e-12))

    def edge_times(self, e):
        return self.times[self.edge_ids == e]

    def counts(self):
        return np.bincount(self.edge_ids, minlength=self.n_edges)

    def slab_of(self, times):
        """Slab index ``r`` with ``t`` in ``(r t0, (r+1) t0]``."""
        return np.maximum(np.ceil(np.asarray(times) / self.t0).astype(np.int64) - 1, 0)

    def with_t0(self, t0):
        return replace(self, t0=float(t0))

    def validate(self):
        if np.any(np.diff(self.times) <= 0):
            raise AssertionError("clock times must be strictly increasing")
        if len(self.times) and (self.times[0] <= 0 or self.times[-1] > self.horizon):
            raise AssertionError("clock times outside (0, T]")


def _lattice_kind(env):
    """``"zd<d>"``, ``"hexagonal"`` or ``None`` for the ambient lattice."""
    lattice = env.meta.get("lattice")
    if env.model_tag == "zd_conductance" or lattice == "zd":
        return f"zd{env.d}"
    if lattice == "hexagonal":
        return "hexagonal"
    if env.model_tag == "crystal_conductance" and env.d == 2:
        V, _, _ = hexagonal_preset()
        if env.meta.get("cell_points") == 2 and np.allclose(env.geometry.basis, V.basis):
            return "hexagonal"
    return None


def default_t0(env, T, rate_scale=1.0):
    """Slab width with ``1 - exp(-c_max t0) = p_c / 2``.

    ``p_c`` is the bond threshold of the ambient lattice when known; for other
    graphs ``1 / (deg_max - 1)`` is used (a subcritical branching bound).
    """
    c_max = float(env.rates.max()) * rate_scale if env.n_edges else 1.0
    pc = BOND_PC.get(_lattice_kind(env))
    if pc is None:
        deg = np.diff(env.rate_matrix.indptr).max()
        pc = 1.0 / max(deg - 1, 1)
    p = 0.5 * pc
    t0 = -math.log1p(-p) / c_max if c_max > 0 else T
    return float(min(t0, T)) if T > 0 else float(t0)


def sample_clocks(env, T, t0=None, seed=0, rate_scale=1.0):
    """Independent Poisson clocks of intensity ``rate_scale * c_ij`` on ``[0, T]``.

    Coinciding ring times (a probability-zero event in exact arithmetic) are
    removed by re-drawing the later ring from a fresh sub-stream.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    M = env.n_edges
    if T == 0:
        return ClockSchedule(0.0, t0 or 1.0, np.zeros(0), np.zeros(0, np.int64), M, seed, rate_scale)
    if t0 is None:
        t0 = default_t0(env, T, rate_scale)
    if not 0 < t0 <= T:
        raise ValueError("t0 must lie in (0, T]")
    rng = rng_for(seed, "clocks")
    counts = rng.poisson(env.rates * rate_scale * T)
    ids = np.repeat(np.arange(M), counts)
    times = rng.random(len(ids)) * T
    times[times == 0] = T  # (0, T] convention
    order = np.argsort(times, kind="stable")
    times, ids = times[order], ids[order]
    redraws = 0
    while len(times) > 1 and np.any(np.diff(times) == 0):
        dup = np.flatnonzero(np.diff(times) == 0) + 1
        sub = rng_for(seed_derive(seed, "clock_redraw", redraws), "clock_redraw")
        times[dup] = sub.random(len(dup)) * T
        redraws += len(dup)
        order = np.argsort(times, kind="stable")
        times, ids = times[order], ids[order]
    K = ClockSchedule(float(T), float(t0), times, ids, M, seed, float(rate_scale), redraws)
    return K


# -------------------------------------------------------------------------
# slab certificates


@dataclass(frozen=True)
class SlabCertificate:
    index: int
    components: list
    max_size: int
    valid: bool


def _slab_components(env, edge_ids):
    """Connected components (size >= 2) of the graph of fired edges."""
    if len(edge_ids) == 0:
        return np.zeros(env.n_points, dtype=np.int64), []
    e = env.edges[np.unique(edge_ids)]
    N = env.n_points
    A = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(N, N))
    n, labels = csgraph.connected_components(A, directed=False)
    touched = np.unique(e.ravel())
    comps = {}
    for p in touched:
        comps.setdefault(int(labels[p]), []).append(int(p))
    return labels, list(comps.values())


def slab_certificates(env, K, cap=DEFAULT_CAP):
    """One certificate per slab; invalid when a component exceeds ``cap``."""
    out = []
    slabs = K.slab_of(K.times)
    for r in range(K.n_slabs):
        ids = K.edge_ids[slabs == r]
        _, comps = _slab_components(env, ids)
        m = max((len(c) for c in comps), default=1)
        out.append(SlabCertificate(r, comps, m, m <= cap))
    return out


# -------------------------------------------------------------------------
# dynamics


def exchange(eta, i, j):
    """Copy of ``eta`` with the values at ``i`` and ``j`` swapped."""
    out = np.array(eta, dtype=np.int8)
    if i == j:
        log.debug("exchange with i == j is the identity")
        return out
    out[i], out[j] = out[j], out[i]
    return out


@dataclass(frozen=True)
class EvolveResult:
    eta: np.ndarray
    t0: float
    halvings: int
    log: np.ndarray = None  # rows (time, i, j, swapped), time sorted


def _certify(env, K, cap):
    t0 = K.t0
    for h in range(MAX_HALVINGS + 1):
        Kh = K.with_t0(t0)
        certs = slab_certificates(env, Kh, cap)
        if all(c.valid for c in certs):
            return Kh, h
        t0 *= 0.5
    raise CertificateError(f"slab components exceed cap {cap} after {MAX_HALVINGS} halvings of t0")


def _run_slab(eta, edges, times, ids, labels, comp_order):
    """Process each component's rings in time order; returns swap flags."""
    comp = labels[edges[ids, 0]]
    rank = np.empty(labels.max() + 1, dtype=np.int64)
    rank[comp_order] = np.arange(len(comp_order))
    order = np.lexsort((times, rank[comp]))
    swapped = np.zeros(len(ids), dtype=bool)
    for k in order:
        i, j = edges[ids[k]]
        if eta[i] != eta[j]:
            eta[i], eta[j] = eta[j], eta[i]
            swapped[k] = True
    return swapped


def evolve(env, K, xi, t, cap=DEFAULT_CAP, debug=False, return_log=False):
    """Configuration at time ``t`` built from the clocks ``K``.

    Slabs are certified first (halving ``t0`` globally when a component is
    too large).  In debug mode every slab is also processed with the
    components in reverse order and the results compared.
    """
    xi = _occ(xi)
    if len(xi) != env.n_points:
        raise ValueError("configuration size does not match the environment")
    if t < 0 or t > K.horizon + 1e-12:
        raise ValueError("t must lie in [0, K.horizon]")
    if len(K) and K.n_edges != env.n_edges:
        raise ValueError("clock schedule was sampled for a different environment")
    eta = xi.copy()
    n_events = int(np.searchsorted(K.times, t, side="right"))
    if n_events == 0:
        res = EvolveResult(eta, K.t0, 0, np.zeros((0, 4)) if return_log else None)
        return res if return_log else eta
    Kc, halvings = _certify(env, K, cap)
    times, ids = Kc.times[:n_events], Kc.edge_ids[:n_events]
    slabs = Kc.slab_of(times)
    swapped = np.zeros(n_events, dtype=bool)
    bounds = np.searchsorted(slabs, np.arange(slabs[-1] + 2))
    for r in range(slabs[-1] + 1):
        lo, hi = bounds[r], bounds[r + 1]
        if lo == hi:
            continue
        labels, _ = _slab_components(env, ids[lo:hi])
        comps = np.unique(labels[env.edges[ids[lo:hi], 0]])
        if debug:
            alt = eta.copy()
            _run_slab(alt, env.edges, times[lo:hi], ids[lo:hi], labels, comps[::-1])
        swapped[lo:hi] = _run_slab(eta, env.edges, times[lo:hi], ids[lo:hi], labels, comps)
        if debug and not np.array_equal(alt, eta):
            raise AssertionError(f"slab {r}: result depends on the component order")
    if eta.sum() != xi.sum():
        raise AssertionError("particle number not conserved")
    if not return_log:
        return eta
    e = env.edges[ids]
    logarr = np.column_stack([times, e[:, 0], e[:, 1], swapped.astype(float)])
    return EvolveResult(eta, Kc.t0, halvings, logarr)


def evolve_batch(env, xi, t, replicas, seed=0, rate_scale=1.0, label="sep_batch"):
    """``replicas`` independent copies of ``eta_t`` started from ``xi``.

    Uses the superposition of the edge clocks: the total number of rings is
    Poisson(``C t``) with ``C = rate_scale * sum c_e`` and each ring picks an
    edge with probability ``c_e / sum c``, independently.  This has the same
    law as per-edge clocks and vectorizes over replicas.

    Returns an int8 array of shape ``(replicas, N)``.
    """
    xi = _occ(xi)
    rng = rng_for(seed, label)
    C = float(env.rates.sum()) * rate_scale
    eta = np.tile(xi, (replicas, 1))
    if t <= 0 or C == 0:
        return eta
    n = rng.poisson(C * t, size=replicas)
    p = env.rates / env.rates.sum()
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    rows = np.arange(replicas)
    for k in range(int(n.max(initial=0))):
        live = rows[n > k]
        e = np.searchsorted(cdf, rng.random(len(live)), side="right")
        i, j = env.edges[e, 0], env.edges[e, 1]
        a = eta[live, i].copy()
        eta[live, i] = eta[live, j]
        eta[live, j] = a
    return eta


# -------------------------------------------------------------------------
# generator on local functions


@dataclass(frozen=True)
class LocalFunction:
    """A function of the configuration that depends only on ``support``."""

    support: np.ndarray
    func: callable

    def __post_init__(self):
        s = np.unique(np.asarray(self.support, dtype=np.int64))
        object.__setattr__(self, "support", s)

    def __call__(self, eta):
        return float(self.func(np.asarray(eta)))

    @classmethod
    def table(cls, support, values):
        """Arbitrary function given by its values on ``{0,1}^support``."""
        support = np.asarray(support, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        if values.shape != (2 ** len(support),):
            raise ValueError("need one value per configuration of the support")
        weights = 2 ** np.arange(len(support))

        def f(eta):
            return values[int(np.dot(eta[support], weights))]

        return cls(support, f)

    @classmethod
    def occupation(cls, x):
        return cls([x], lambda eta: float(eta[x]))


def _edges_meeting(env, A):
    mask = np.isin(env.edges[:, 0], A) | np.isin(env.edges[:, 1], A)
    return np.flatnonzero(mask)


def _fuzz_support(env, f, eta, rng, n=32):
    outside = np.flatnonzero(~(np.isin(env.edges[:, 0], f.support) | np.isin(env.edges[:, 1], f.support)))
    if len(outside) == 0:
        return
    base = f(eta)
    cur = eta.copy()
    for e in rng.choice(outside, size=n):
        i, j = env.edges[e]
        cur[i], cur[j] = cur[j], cur[i]
        if f(cur) != base:
            raise UndeclaredSupportError("local function changed under an exchange outside its declared support")


def generator_apply(env, f, eta, form="exchange", debug=False, seed=0):
    """``L f(eta) = sum_{edges} c_xy (f(eta^{xy}) - f(eta))``.

    ``form="occupation"`` evaluates the equivalent ordered-pair sum
    ``sum_{x,y} c_xy eta(x)(1 - eta(y)) (f(eta^{xy}) - f(eta))``.  Only edges
    meeting the declared support contribute.  In debug mode both forms are
    compared and the support declaration is fuzzed.
    """
    eta = _occ(eta)
    es = _edges_meeting(env, f.support)
    base = f(eta)

    def term(e):
        i, j = env.edges[e]
        if eta[i] == eta[j]:
            return 0.0
        return env.rates[e] * (f(exchange(eta, i, j)) - base)

    if form == "exchange":
        val = float(sum(term(e) for e in es))
    elif form == "occupation":
        val = 0.0
        for e in es:
            i, j = env.edges[e]
            for x, y in ((i, j), (j, i)):
                w = eta[x] * (1 - eta[y])
                if w:
                    val += env.rates[e] * w * (f(exchange(eta, x, y)) - base)
    else:
        raise ValueError("form must be 'exchange' or 'occupation'")
    if debug:
        other = generator_apply(env, f, eta, "occupation" if form == "exchange" else "exchange")
        if abs(other - val) > 1e-12 * max(1.0, abs(val)):
            raise AssertionError("exchange and occupation forms of the generator disagree")
        _fuzz_support(env, f, eta, rng_for(seed, "fuzz"))
    return val


def _expected_after(env, f, eta, h, samples, rng):
    """``E f(eta_h)`` split by the number of rings in ``[0, h]``.

    Zero, one and two rings are summed exactly; three or more are sampled.
    """
    C = float(env.rates.sum())
    p = env.rates / C
    mu = C * h
    base = f(eta)
    one = np.array([f(exchange(eta, *env.edges[e])) for e in range(env.n_edges)])
    two = 0.0
    for e in range(env.n_edges):
        first = exchange(eta, *env.edges[e])
        two += p[e] * sum(p[g] * f(exchange(first, *env.edges[g])) for g in range(env.n_edges))
    p0, p1, p2 = stats.poisson.pmf([0, 1, 2], mu)
    tail = stats.poisson.sf(2, mu)
    # n >= 3 conditional on n >= 3, by inversion on the truncated law
    u = stats.poisson.cdf(2, mu) + rng.random(samples) * tail
    n = stats.poisson.ppf(u, mu).astype(int)
    n = np.maximum(n, 3)
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    vals = np.empty(samples)
    for s in range(samples):
        cur = eta.copy()
        for e in np.searchsorted(cdf, rng.random(n[s]), side="right"):
            i, j = env.edges[e]
            cur[i], cur[j] = cur[j], cur[i]
        vals[s] = f(cur)
    est = p0 * base + p1 * float(p @ one) + p2 * two + tail * vals.mean()
    se = tail * vals.std(ddof=1) / math.sqrt(samples)
    return est, se


def fd_generator_check(env, f, eta, hs=(0.02, 0.01), samples=100_000, seed=0):
    """Finite-difference slopes ``(E f(eta_h) - f(eta)) / h`` against ``L f``.

    Returns a dict with the generator value, the slopes, their errors, the
    error ratio between the first two step sizes and Monte Carlo standard
    errors of the slopes.
    """
    eta = _occ(eta)
    Lf = generator_apply(env, f, eta)
    base = f(eta)
    slopes, ses = [], []
    for k, h in enumerate(hs):
        rng = rng_for(seed, "generator_fd", k)
        est, se = _expected_after(env, f, eta, h, samples, rng)
        slopes.append((est - base) / h)
        ses.append(se / h)
    errs = [abs(s - Lf) for s in slopes]
    ratio = errs[0] / errs[1] if errs[1] > 0 else float("inf")
    return {"generator": Lf, "h": list(hs), "slopes": slopes, "errors": errs, "ratio": ratio, "stderr": ses}


# -------------------------------------------------------------------------
# Dynkin martingale of pi^eps(u)


@dataclass(frozen=True)
class MartingalePath:
    times: np.ndarray
    M: np.ndarray
    bracket: np.ndarray

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "M", "bracket"])
            for row in zip(self.times, self.M, self.bracket):
                w.writerow([repr(float(v)) for v in row])


def _drift_and_bracket(env, eps, u, eta):
    d = env.d
    i, j = env.edges[:, 0], env.edges[:, 1]
    c = env.rates * eps**-2
    du = u[j] - u[i]
    # eps^d sum_x eta(x) L^eps u(x)
    lu = np.zeros(env.n_points)
    np.add.at(lu, i, c * du)
    np.add.at(lu, j, -c * du)
    drift = eps**d * float(eta @ lu)
    disc = eta[i] != eta[j]
    bracket = eps ** (2 * d) * float(np.sum(c[disc] * du[disc] ** 2))
    return drift, bracket


def dynkin_path(env, eps, K, xi, u, times):
    """``M_t = pi(eta_t) - pi(eta_0) - int_0^t L pi(eta_s) ds`` and its bracket.

    ``pi(eta) = eps^d sum_x eta(x) u(x)``; ``K`` must be sampled with
    ``rate_scale = eps**-2``.  Drift and bracket rates are constant between
    rings, so the time integrals are exact.
    """
    times = np.asarray(times, dtype=float)
    if np.any(times > K.horizon + 1e-12) or np.any(times < 0):
        raise ValueError("evaluation times must lie in [0, K.horizon]")
    if not math.isclose(K.rate_scale, eps**-2, rel_tol=1e-12):
        raise ValueError("clock schedule must be sampled with rate_scale = eps**-2")
    u = np.asarray(u, dtype=float)
    eta = _occ(xi).astype(float)
    t_end = float(times.max(initial=0.0))
    res = evolve(env, K, xi, t_end, return_log=True)
    evlog = res.log
    d = env.d
    pi0 = eps**d * float(eta @ u)
    order = np.argsort(times)
    M = np.zeros(len(times))
    B = np.zeros(len(times))
    drift, brk = _drift_and_bracket(env, eps, u, eta)
    clock, int_drift, int_brk, k = 0.0, 0.0, 0.0, 0
    for idx in order:
        tq = times[idx]
        while k < len(evlog) and evlog[k, 0] <= tq:
            s = evlog[k, 0]
            int_drift += drift * (s - clock)
            int_brk += brk * (s - clock)
            clock = s
            if evlog[k, 3]:
                i, j = int(evlog[k, 1]), int(evlog[k, 2])
                eta[i], eta[j] = eta[j], eta[i]
                drift, brk = _drift_and_bracket(env, eps, u, eta)
            k += 1
        a = int_drift + drift * (tq - clock)
        b = int_brk + brk * (tq - clock)
        M[idx] = eps**d * float(eta @ u) - pi0 - a
        B[idx] = b
    return MartingalePath(times, M, B)


def martingale_moments(env, eps, xi, u, T, replicas, seed=0):
    """Sample ``M_T`` and ``<M>_T`` over independent clock realizations."""
    MT = np.zeros(replicas)
    BT = np.zeros(replicas)
    for r in range(replicas):
        K = sample_clocks(env, T, seed=seed_derive(seed, "martingale", r), rate_scale=eps**-2)
        p = dynkin_path(env, eps, K, xi, u, [T])
        MT[r], BT[r] = p.M[0], p.bracket[0]
    n = replicas
    mean, se_mean = MT.mean(), MT.std(ddof=1) / math.sqrt(n)
    var = MT.var(ddof=1)
    # delta-method standard error of var(M) - mean(B)
    diff = (MT - mean) ** 2 - BT
    se_diff = diff.std(ddof=1) / math.sqrt(n)
    return {"mean_M": mean, "se_mean": se_mean, "var_M": var, "mean_bracket": BT.mean(),
            "se_var_minus_bracket": se_diff, "M": MT, "bracket": BT}


# -------------------------------------------------------------------------
# duality and pathwise representation


def duality_mc(env, xi, x, t, replicas=100_000, seed=0):
    """Compare the MC mean of ``eta_t(x)`` with ``sum_y p_t(x, y) xi(y)``.

    Returns ``(mc_mean, stderr, kernel_value, z)``.
    """
    if replicas < 100:
        raise ValueError("at least 100 replicas are required")
    xi = _occ(xi)
    eta = evolve_batch(env, xi, t, replicas, seed=seed, label="duality")
    col = eta[:, x].astype(float)
    mean = float(col.mean())
    se = float(col.std(ddof=1) / math.sqrt(replicas))
    kern = float(heat_kernel_row(env, 1.0, x, t) @ xi)
    z = (mean - kern) / se if se > 0 else (0.0 if abs(mean - kern) < 1e-12 else math.inf)
    return mean, se, kern, z


def nagy_check(env, K, xi, x, t, quad_tol=1e-8, method="spectral"):
    """Residual of the pathwise kernel representation of ``eta_t(x)``.

    ``eta_t(x) = sum_y p(t,x,y) xi(y) + sum_y int_0^t p(t-s,x,y) dM_y(s)``
    with ``dM_y = d eta(y) - (L eta_s)(y) ds``.  Kernels come from the
    spectral decomposition of the (dense, symmetric) generator.  The
    compensator integral over each inter-ring interval is done in closed form
    (``method="spectral"``) or by adaptive quadrature (``method="quad"``).
    """
    N = env.n_points
    if N > 64:
        raise ValueError("instance too large for dense kernels (N <= 64)")
    if quad_tol < 1e-8:
        raise ValueError("quad_tol must be at least 1e-8")
    xi = _occ(xi)
    Lmat = env.laplacian.toarray() * K.rate_scale
    lam, U = np.linalg.eigh(Lmat)
    lam = np.minimum(lam, 0.0)

    def kernel_row(s):
        return (U[x] * np.exp(lam * s)) @ U.T

    res = evolve(env, K, xi, t, return_log=True)
    lhs = float(res.eta[x])
    rhs = float(kernel_row(t) @ xi)
    eta = xi.astype(float)
    clock = 0.0
    comp = 0.0
    jumps = 0.0

    def compensate(a, b, eta):
        g = Lmat @ eta
        if method == "spectral":
            coef = U.T @ g
            # int_a^b exp(lam (t - s)) ds
            neg = lam < -1e-14
            safe = np.where(neg, lam, 1.0)
            w = np.where(neg, np.exp(lam * (t - b)) * np.expm1(safe * (b - a)) / safe, b - a)
            return float(U[x] @ (w * coef))
        val, _ = integrate.quad(lambda s: float(kernel_row(t - s) @ g), a, b, epsabs=quad_tol / 10, epsrel=0)
        return val

    for s, i, j, sw in res.log:
        comp += compensate(clock, s, eta)
        clock = s
        if sw:
            i, j = int(i), int(j)
            before = eta.copy()
            eta[i], eta[j] = eta[j], eta[i]
            row = kernel_row(t - s)
            jumps += row[i] * (eta[i] - before[i]) + row[j] * (eta[j] - before[j])
    comp += compensate(clock, t, eta)
    rhs += jumps - comp
    return abs(lhs - rhs)


# -------------------------------------------------------------------------
# kinetic Monte Carlo over discordant edges


@numba.njit(cache=True)
def _kmc(eta, edges, rates, inc_ptr, inc_idx, c_max, snap_times, seed):
    np.random.seed(seed)
    M = edges.shape[0]
    disc = np.empty(M, np.int64)
    pos = -np.ones(M, np.int64)
    nd = 0
    for e in range(M):
        if eta[edges[e, 0]] != eta[edges[e, 1]]:
            disc[nd] = e
            pos[e] = nd
            nd += 1
    out = np.empty((snap_times.shape[0], eta.shape[0]), np.int8)
    t = 0.0
    k = 0
    n_events = 0
    while k < snap_times.shape[0]:
        if nd == 0:
            dt = np.inf
        else:
            dt = np.random.exponential(1.0 / (nd * c_max))
        while k < snap_times.shape[0] and t + dt > snap_times[k]:
            out[k, :] = eta
            k += 1
        if k >= snap_times.shape[0]:
            break
        t += dt
        e = disc[np.random.randint(0, nd)]
        if np.random.random() * c_max >= rates[e]:
            continue
        n_events += 1
        i = edges[e, 0]
        j = edges[e, 1]
        tmp = eta[i]
        eta[i] = eta[j]
        eta[j] = tmp
        for end in (i, j):
            for q in range(inc_ptr[end], inc_ptr[end + 1]):
                g = inc_idx[q]
                now = eta[edges[g, 0]] != eta[edges[g, 1]]
                if now and pos[g] < 0:
                    disc[nd] = g
                    pos[g] = nd
                    nd += 1
                elif (not now) and pos[g] >= 0:
                    last = disc[nd - 1]
                    disc[pos[g]] = last
                    pos[last] = pos[g]
                    pos[g] = -1
                    nd -= 1
    return out, n_events


def simulate_snapshots(env, xi, snap_times, rate_scale=1.0, seed=0):
    """Configurations at ``snap_times`` for clock rates ``rate_scale * c``.

    Rejection-free over concordant edges: only discordant edges can change
    the configuration, so rings are proposed on them at rate ``c_max`` and
    accepted with probability ``c_e / c_max``.  Equal in law to the clock
    construction.  Returns ``(snapshots, n_swaps)``.
    """
    snap = np.asarray(snap_times, dtype=float)
    if np.any(np.diff(snap) < 0) or (len(snap) and snap[0] < 0):
        raise ValueError("snapshot times must be nondecreasing and nonnegative")
    xi = _occ(xi).copy()
    N, M = env.n_points, env.n_edges
    ends = np.concatenate([env.edges[:, 0], env.edges[:, 1]])
    eid = np.concatenate([np.arange(M), np.arange(M)])
    order = np.argsort(ends, kind="stable")
    inc_idx = eid[order].astype(np.int64)
    inc_ptr = np.searchsorted(ends[order], np.arange(N + 1)).astype(np.int64)
    c = env.rates * rate_scale
    c_max = float(c.max()) if M else 1.0
    s = seed_derive(seed, "kmc") % (2**32)
    out, n = _kmc(xi, env.edges.astype(np.int64), c, inc_ptr, inc_idx, c_max, snap, s)
    return out, int(n)


def snapshots_from_clocks(env, K, xi, snap_times, cap=DEFAULT_CAP):
    """Configurations at ``snap_times`` from the clock construction.

    The event log of one :func:`evolve` call up to the last time is replayed
    in time order (rings in different slab components commute).
    """
    snap = np.asarray(snap_times, dtype=float)
    res = evolve(env, K, xi, float(snap.max(initial=0.0)), cap=cap, return_log=True)
    eta = _occ(xi).copy()
    out = np.empty((len(snap), len(eta)), dtype=np.int8)
    k = 0
    for q in np.argsort(snap):
        while k < len(res.log) and res.log[k, 0] <= snap[q]:
            if res.log[k, 3]:
                i, j = int(res.log[k, 1]), int(res.log[k, 2])
                eta[i], eta[j] = eta[j], eta[i]
            k += 1
        out[q] = eta
    return out


def write_trajectory_csv(path, evolve_result, snapshots=None):
    """Event CSV ``time,i,j,swapped`` followed by optional snapshot rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "i", "j", "swapped"])
        for s, i, j, sw in evolve_result.log:
            w.writerow([repr(float(s)), int(i), int(j), int(sw)])
        if snapshots:
            w.writerow([])
            w.writerow(["snapshot_time", "occupation"])
            for tq, eta in snapshots:
                w.writerow([repr(float(tq)), "".join(str(int(v)) for v in eta)])
