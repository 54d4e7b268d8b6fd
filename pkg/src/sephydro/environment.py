"""Finite periodized random environments.

An :class:`Environment` is a finite sample of a marked point process living on
a torus: a point set, symmetric jump rates on unordered pairs and the group
geometry used to place it.  Four generators are provided (nearest-neighbour
conductances on Z^d, conductances on a crystal lattice, Mott hopping on a
Poisson point process, and the largest cluster of site percolation).
"""
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse, special
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from .laws import Law
from .seeding import rng_for, seed_derive

__all__ = [
    "GroupAction",
    "Environment",
    "EnvironmentLaw",
    "hexagonal_preset",
    "gen_zd_conductance",
    "gen_crystal_conductance",
    "gen_mott_ppp",
    "gen_percolation_cluster",
    "orbit_decompose",
    "palm_site_average",
    "moment_check",
    "ergodic_average_check",
    "save_environment",
    "load_environment",
    "FACE_TOL",
]

FACE_TOL = 1e-12
MOTT_DEFAULT_RMAX = math.ceil(8 * math.log(10) * 10) / 10  # e^{-R} < 1e-8


@dataclass(frozen=True)
class GroupAction:
    """Action ``x -> x + V g`` of Z^d (``lattice``) or R^d (``continuum``)."""

    d: int
    kind: str = "lattice"
    basis: np.ndarray = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be positive")
        if self.kind not in ("lattice", "continuum"):
            raise ValueError("kind must be 'lattice' or 'continuum'")
        V = np.eye(self.d) if self.basis is None else np.array(self.basis, dtype=float)
        if V.shape != (self.d, self.d):
            raise ValueError(f"basis must be {self.d}x{self.d}")
        if abs(np.linalg.det(V)) <= 0:
            raise ValueError("basis matrix is not invertible")
        V.setflags(write=False)
        object.__setattr__(self, "basis", V)

    @property
    def cell_volume(self):
        return abs(float(np.linalg.det(self.basis)))

    def orbit_decompose(self, x):
        return orbit_decompose(x, self)


def orbit_decompose(x, geometry):
    """Split ``x = V g + beta`` with ``g`` integer and ``beta`` in the cell.

    The cell is half-open; points within ``FACE_TOL`` (in cell coordinates)
    of a far face are assigned to the next cell.  For the continuum action
    the decomposition degenerates to ``g = V^{-1} x``, ``beta = 0``.

    >>> orbit_decompose([2.5, -1.2], GroupAction(2))
    (array([ 2, -2]), array([0.5, 0.8]))
    """
    x = np.asarray(x, dtype=float)
    V = geometry.basis
    s = np.linalg.solve(V, x)
    if geometry.kind == "continuum":
        return s, np.zeros_like(x)
    g = np.floor(s + FACE_TOL).astype(int)
    frac = s - g
    frac[np.abs(frac) < FACE_TOL] = 0.0
    beta = V @ frac
    beta[np.abs(beta) < FACE_TOL] = 0.0
    return g, beta


@dataclass(frozen=True, eq=False)
class Environment:
    """Immutable finite environment on the torus ``R^d / (period Z^d)``.

    Attributes
    ----------
    geometry : GroupAction
    period : ndarray (d, d)
        Columns are the torus period vectors (``L * I`` for cubes).
    points : ndarray (N, d)
        Coordinates in the fundamental domain.
    edges : ndarray (M, 2)
        Unordered pairs stored with ``i < j`` and sorted lexicographically.
        Parallel edges (distinct torus bonds between the same two points,
        only possible for tiny boxes) are kept separately.
    rates : ndarray (M,)
        Jump rate ``c_ij`` of each edge.
    disp : ndarray (M, d)
        Minimal-image displacement ``x_j - x_i`` of each edge.
    """

    geometry: GroupAction
    period: np.ndarray
    points: np.ndarray
    edges: np.ndarray
    rates: np.ndarray
    disp: np.ndarray
    model_tag: str = "custom"
    seed: int = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("period", "points", "rates", "disp"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        e = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)
        self.validate()

    # ------------------------------------------------------------------
    def validate(self):
        N, d = self.points.shape
        if d != self.geometry.d:
            raise ValueError("points dimension does not match the geometry")
        if N == 0:
            raise ValueError("environment has no points")
        e = self.edges
        if len(e) != len(self.rates) or len(e) != len(self.disp):
            raise ValueError("edges, rates and displacements must have equal length")
        if len(e):
            if np.any(e[:, 0] == e[:, 1]):
                raise ValueError("self-rates are not allowed (c_xx must be 0)")
            if np.any(e[:, 0] > e[:, 1]):
                raise ValueError("edges must be stored with i < j")
            if e.min() < 0 or e.max() >= N:
                raise ValueError("edge index out of range")
        if np.any(~np.isfinite(self.rates)) or np.any(self.rates < 0):
            raise ValueError("rates must be finite and nonnegative")
        c = self.exit_rates
        if np.any(c <= 0) or np.any(~np.isfinite(c)):
            raise ValueError("every point needs a finite, strictly positive exit rate")

    # derived quantities -------------------------------------------------
    @property
    def d(self):
        return self.geometry.d

    @property
    def n_points(self):
        return len(self.points)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def volume(self):
        return abs(float(np.linalg.det(self.period)))

    @property
    def intensity(self):
        """Points per unit volume of the sample."""
        return self.n_points / self.volume

    @property
    def side(self):
        """Side length when the torus is a cube, else ``None``."""
        P = self.period
        if np.allclose(P, np.diag(np.diag(P))) and np.allclose(np.diag(P), P[0, 0]):
            return float(P[0, 0])
        return None

    @cached_property
    def exit_rates(self):
        c = np.zeros(len(self.points))
        np.add.at(c, self.edges[:, 0], self.rates)
        np.add.at(c, self.edges[:, 1], self.rates)
        c.setflags(write=False)
        return c

    @property
    def max_rate(self):
        return float(self.exit_rates.max())

    @cached_property
    def rate_matrix(self):
        """Symmetric sparse matrix of summed rates ``c_ij`` (CSR).

        Zero-rate edges are dropped so that the sparsity pattern is the
        graph actually seen by the walk.
        """
        N = self.n_points
        i, j = self.edges[:, 0], self.edges[:, 1]
        C = sparse.coo_matrix(
            (np.concatenate([self.rates, self.rates]), (np.concatenate([i, j]), np.concatenate([j, i]))),
            shape=(N, N),
        ).tocsr()
        C.sum_duplicates()
        C.eliminate_zeros()
        return C

    @cached_property
    def laplacian(self):
        """Sparse generator ``L u(i) = sum_j c_ij (u_j - u_i)`` at scale 1."""
        C = self.rate_matrix
        return (C - sparse.diags(self.exit_rates)).tocsr()

    @cached_property
    def connected(self):
        n, _ = csgraph.connected_components(self.rate_matrix, directed=False)
        return n == 1

    def half_width(self):
        """Radius of the largest ball inscribed in the centred fundamental domain."""
        Pinv = np.linalg.inv(self.period)
        return 0.5 / np.max(np.linalg.norm(Pinv, axis=1))

    @cached_property
    def centered(self):
        """Point coordinates wrapped into the fundamental domain centred at 0."""
        Pinv = np.linalg.inv(self.period)
        s = self.points @ Pinv.T
        s = s - np.floor(s + 0.5)
        out = s @ self.period.T
        out.setflags(write=False)
        return out

    def minimal_image(self, delta):
        """Wrap displacement vectors to their minimal periodic image."""
        delta = np.atleast_2d(np.asarray(delta, dtype=float))
        Pinv = np.linalg.inv(self.period)
        s = delta @ Pinv.T
        s = s - np.round(s)
        return s @ self.period.T

    def with_rates(self, rates, tag=None):
        """Copy with new edge rates (same geometry and edge list)."""
        return Environment(
            self.geometry, self.period, self.points, self.edges, rates, self.disp,
            model_tag=tag or self.model_tag, seed=self.seed, meta=dict(self.meta),
        )

    # serialization ------------------------------------------------------
    def to_text(self):
        """Canonical text serialization with hex-float payloads."""
        lines = ["#sephydro-environment v1"]
        hexs = lambda a: " ".join(float(v).hex() for v in np.ravel(a))
        lines.append(f"model_tag: {self.model_tag}")
        lines.append(f"kind: {self.geometry.kind}")
        lines.append(f"d: {self.d}")
        lines.append(f"basis: {hexs(self.geometry.basis)}")
        lines.append(f"period: {hexs(self.period)}")
        side = self.side
        lines.append(f"L: {'none' if side is None else float(side).hex()}")
        lines.append(f"intensity: {float(self.intensity).hex()}")
        lines.append(f"seed: {'none' if self.seed is None else int(self.seed)}")
        lines.append("meta: " + json.dumps(self.meta, sort_keys=True))
        lines.append(f"[points] {self.n_points}")
        for k, x in enumerate(self.points):
            lines.append(f"{k} {hexs(x)}")
        lines.append(f"[edges] {self.n_edges}")
        for (i, j), c, dv in zip(self.edges, self.rates, self.disp):
            lines.append(f"{i} {j} {float(c).hex()} {hexs(dv)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#sephydro-environment"):
            raise ValueError("not a sephydro environment file")
        header = {}
        k = 1
        while not lines[k].startswith("[points]"):
            key, _, val = lines[k].partition(": ")
            header[key] = val
            k += 1
        fromhex = lambda s: np.array([float.fromhex(t) for t in s.split()])
        d = int(header["d"])
        n = int(lines[k].split()[1])
        pts = np.array([fromhex(" ".join(lines[k + 1 + r].split()[1:])) for r in range(n)]).reshape(n, d)
        k += n + 1
        m = int(lines[k].split()[1])
        edges = np.zeros((m, 2), dtype=np.int64)
        rates = np.zeros(m)
        disp = np.zeros((m, d))
        for r in range(m):
            toks = lines[k + 1 + r].split()
            edges[r] = int(toks[0]), int(toks[1])
            rates[r] = float.fromhex(toks[2])
            disp[r] = [float.fromhex(t) for t in toks[3:]]
        geom = GroupAction(d, header["kind"], fromhex(header["basis"]).reshape(d, d))
        seed = None if header["seed"] == "none" else int(header["seed"])
        return cls(geom, fromhex(header["period"]).reshape(d, d), pts, edges, rates, disp,
                   model_tag=header["model_tag"], seed=seed, meta=json.loads(header["meta"]))


def save_environment(env, path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(env.to_text())


def load_environment(path):
    with open(path, encoding="ascii") as fh:
        return Environment.from_text(fh.read())


# ----------------------------------------------------------------------
# construction helpers
# ----------------------------------------------------------------------
def _canonical_edges(i, j, disp):
    """Orient pairs as ``i < j`` and sort by ``(i, j)`` keeping generation order on ties."""
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    disp = np.asarray(disp, dtype=float).copy()
    flip = i > j
    lo = np.where(flip, j, i)
    hi = np.where(flip, i, j)
    disp[flip] *= -1.0
    order = np.lexsort((np.arange(len(lo)), hi, lo))
    return np.stack([lo[order], hi[order]], axis=1), disp[order], order


def _check_law(law):
    if not isinstance(law, Law):
        law = Law.from_dict(law)
    if not law.support_positive():
        raise ValueError(f"conductance law {law.kind!r} must have support in (0, inf)")
    return law


def _lattice_graph(V, cell_points, template, n_cells):
    """Points and generation-ordered edges of a periodic crystal graph."""
    d = V.shape[0]
    A = np.atleast_2d(np.asarray(cell_points, dtype=float))
    nA = len(A)
    cells = np.indices((n_cells,) * d).reshape(d, -1).T  # C order
    n_c = len(cells)
    points = (cells @ V.T)[:, None, :] + A[None, :, :]
    points = points.reshape(-1, d)
    ii, jj, dd = [], [], []
    cell_index = np.arange(n_c)
    for a, b, off in template:
        off = np.asarray(off, dtype=int)
        tgt = np.ravel_multi_index(((cells + off) % n_cells).T, (n_cells,) * d)
        ii.append(cell_index * nA + a)
        jj.append(tgt * nA + b)
        dd.append(np.broadcast_to(V @ off + A[b] - A[a], (n_c, d)))
    # generation order: cell-major, template-minor
    ii = np.stack(ii, axis=1).ravel()
    jj = np.stack(jj, axis=1).ravel()
    dd = np.stack(dd, axis=1).reshape(-1, d)
    return points, ii, jj, dd


def _normalize_template(cell_points, template):
    nA = len(np.atleast_2d(cell_points))
    seen = set()
    out = []
    for a, b, off in template:
        a, b = int(a), int(b)
        off = tuple(int(o) for o in off)
        if not (0 <= a < nA and 0 <= b < nA):
            raise ValueError(f"template edge ({a}, {b}) references a point outside the cell set")
        if a == b and not any(off):
            raise ValueError("template edge joins a point to itself")
        rev = (b, a, tuple(-o for o in off))
        if rev in seen or (a, b, off) in seen:
            continue
        seen.add((a, b, off))
        out.append((a, b, off))
    return out


def _wrap_points(points, period):
    Pinv = np.linalg.inv(period)
    s = points @ Pinv.T
    s = s - np.floor(s + FACE_TOL)
    s[np.abs(s) < FACE_TOL] = 0.0
    return s @ period.T


def hexagonal_preset():
    """Honeycomb lattice with unit bond length.

    Returns ``(geometry, cell_points, template)`` with basis
    ``v1 = (sqrt3, 0)``, ``v2 = (sqrt3/2, 3/2)``, cell points ``{0, a}``,
    ``a = (sqrt3/2, 1/2)``, and the three bonds of the origin.
    """
    s3 = math.sqrt(3.0)
    V = np.array([[s3, s3 / 2], [0.0, 1.5]])
    A = np.array([[0.0, 0.0], [s3 / 2, 0.5]])
    template = [(0, 1, (0, 0)), (0, 1, (-1, 0)), (0, 1, (0, -1))]
    return GroupAction(2, "lattice", V), A, template


def gen_zd_conductance(d, L, law, seed=0):
    """Nearest-neighbour random conductances on the discrete torus ``(Z_L)^d``."""
    if int(L) != L or L < 2:
        raise ValueError("L must be an integer >= 2")
    L = int(L)
    law = _check_law(law)
    geom = GroupAction(d, "lattice", np.eye(d))
    template = [(0, 0, tuple(np.eye(d, dtype=int)[k])) for k in range(d)]
    return _build_crystal(geom, np.zeros((1, d)), template, L, law, seed, "zd_conductance")


def gen_crystal_conductance(geometry, cell_points, edge_template, L, law, seed=0):
    """Random conductances on a crystal lattice with ``L`` cells per side."""
    if geometry.kind != "lattice":
        raise ValueError("crystal lattices need a lattice group action")
    if int(L) != L or L < 2:
        raise ValueError("L must be an integer >= 2")
    A = np.atleast_2d(np.asarray(cell_points, dtype=float))
    if len(A) == 0:
        raise ValueError("cell point set must be nonempty")
    for a in A:
        g, _ = orbit_decompose(a, geometry)
        if np.any(g != 0):
            raise ValueError(f"cell point {a} does not lie in the fundamental cell")
    law = _check_law(law)
    template = _normalize_template(A, edge_template)
    return _build_crystal(geometry, A, template, int(L), law, seed, "crystal_conductance")


def _build_crystal(geom, A, template, L, law, seed, tag):
    V = geom.basis
    points, ii, jj, dd = _lattice_graph(V, A, template, L)
    rates_gen = law.sample(rng_for(seed, "conductances"), len(ii))
    edges, disp, order = _canonical_edges(ii, jj, dd)
    period = L * V
    return Environment(geom, period, _wrap_points(points, period), edges, rates_gen[order], disp,
                       model_tag=tag, seed=seed,
                       meta={"law": law.to_dict(), "cells_per_side": L, "cell_points": int(len(A))})


def _largest_component(N, edges):
    """Indices of the largest connected component; ties go to the smallest minimal index."""
    G = sparse.coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(N, N))
    ncomp, labels = csgraph.connected_components(G, directed=False)
    sizes = np.bincount(labels, minlength=ncomp)
    first = np.full(ncomp, N)
    np.minimum.at(first, labels, np.arange(N))
    best = np.lexsort((first, -sizes))[0]
    return np.flatnonzero(labels == best), ncomp


def _restrict(points, edges, rates, disp, keep):
    N = len(points)
    newidx = np.full(N, -1, dtype=np.int64)
    newidx[keep] = np.arange(len(keep))
    mask = (newidx[edges[:, 0]] >= 0) & (newidx[edges[:, 1]] >= 0)
    e = newidx[edges[mask]]
    return points[keep], e, rates[mask], disp[mask]


def gen_mott_ppp(d, L, intensity, energy_law, R_max=MOTT_DEFAULT_RMAX, rate_floor=0.0, seed=0,
                 max_retries=10):
    """Mott variable-range hopping on a Poisson point process on ``[0, L)^d``.

    Rates are ``exp(-|x_i - x_j| - |E_i| - |E_j| - |E_i - E_j|)`` for pairs
    within torus distance ``R_max`` and above ``rate_floor``.  A disconnected
    rate graph is restricted to its largest component (flagged in ``meta``).
    """
    if intensity <= 0 or R_max <= 0 or rate_floor < 0:
        raise ValueError("need intensity > 0, R_max > 0 and rate_floor >= 0")
    if 2 * R_max >= L:
        raise ValueError(f"R_max={R_max} must be below L/2={L / 2} for unique minimal images")
    if not isinstance(energy_law, Law):
        energy_law = Law.from_dict(energy_law)
    for attempt in range(max_retries):
        rng_pts = rng_for(seed, "mott_points", attempt)
        rng_en = rng_for(seed, "mott_energies", attempt)
        n = rng_pts.poisson(intensity * L**d)
        if n < 2:
            continue
        pts = rng_pts.uniform(0.0, L, size=(n, d))
        energies = energy_law.sample(rng_en, n)
        tree = cKDTree(pts, boxsize=L)
        pairs = tree.query_pairs(R_max, output_type="ndarray")
        if len(pairs) == 0:
            continue
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
        i, j = pairs[:, 0].astype(np.int64), pairs[:, 1].astype(np.int64)
        delta = pts[j] - pts[i]
        delta -= L * np.round(delta / L)
        dist = np.linalg.norm(delta, axis=1)
        Ei, Ej = energies[i], energies[j]
        rates = np.exp(-dist - np.abs(Ei) - np.abs(Ej) - np.abs(Ei - Ej))
        kept = rates >= rate_floor
        floor_mass = float(rates[~kept].sum())
        n_floor = int((~kept).sum())
        edges = np.stack([i[kept], j[kept]], axis=1)
        rates, delta = rates[kept], delta[kept]
        if len(edges) == 0:
            continue
        keep, ncomp = _largest_component(n, edges)
        if len(keep) < 2:
            continue
        pts_k, e_k, r_k, d_k = _restrict(pts, edges, rates, delta, keep)
        sphere = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
        tail = intensity * sphere * special.gammaincc(d, R_max) * math.gamma(d)
        meta = {
            "intensity_param": float(intensity),
            "energy_law": energy_law.to_dict(),
            "R_max": float(R_max),
            "rate_floor": float(rate_floor),
            "dropped_tail_bound": float(tail),
            "dropped_floor_pairs": n_floor,
            "dropped_floor_mass": floor_mass,
            "sampled_points": int(n),
            "components": int(ncomp),
            "restricted_to_largest": bool(ncomp > 1),
            "attempt": attempt,
            "energies": [float(v) for v in energies[keep]],
        }
        return Environment(GroupAction(d, "continuum", np.eye(d)), L * np.eye(d), pts_k, e_k, r_k, d_k,
                           model_tag="mott_ppp", seed=seed, meta=meta)
    raise RuntimeError(f"Mott sample empty or without edges after {max_retries} attempts "
                       f"(intensity={intensity}, L={L}, R_max={R_max})")


def gen_percolation_cluster(lattice, L, p, seed=0, d=2):
    """Largest open cluster of Bernoulli site percolation with unit rates.

    ``lattice`` is ``"zd"`` (dimension ``d``, side ``L``) or ``"hexagonal"``
    (``L`` cells per side).
    """
    if not 0.0 < p <= 1.0:
        raise ValueError("percolation parameter must lie in (0, 1]")
    if int(L) != L or L < 2:
        raise ValueError("L must be an integer >= 2")
    L = int(L)
    if lattice == "zd":
        geom = GroupAction(d, "lattice", np.eye(d))
        A = np.zeros((1, d))
        template = [(0, 0, tuple(np.eye(d, dtype=int)[k])) for k in range(d)]
    elif lattice == "hexagonal":
        geom, A, template = hexagonal_preset()
    else:
        raise ValueError("lattice must be 'zd' or 'hexagonal'")
    points, ii, jj, dd = _lattice_graph(geom.basis, A, template, L)
    period = L * geom.basis
    points = _wrap_points(points, period)
    N = len(points)
    open_ = rng_for(seed, "percolation_sites").random(N) < p
    m = open_[ii] & open_[jj]
    edges, disp, _ = _canonical_edges(ii[m], jj[m], dd[m])
    if not open_.any() or len(edges) == 0:
        raise RuntimeError("percolation sample has no open cluster with an edge")
    keep, ncomp = _largest_component(N, edges)
    keep = keep[open_[keep]]
    if len(keep) < 2:
        raise RuntimeError("largest open cluster is a single site")
    pts_k, e_k, r_k, d_k = _restrict(points, edges, np.ones(len(edges)), disp, keep)
    meta = {"lattice": lattice, "p": float(p), "open_sites": int(open_.sum()),
            "cluster_size": int(len(keep)), "cells_per_side": L}
    return Environment(geom, period, pts_k, e_k, r_k, d_k, model_tag="percolation_cluster",
                       seed=seed, meta=meta)


@dataclass(frozen=True)
class EnvironmentLaw:
    """Declarative description of one of the four environment models."""

    model: str
    params: dict
    cutoff_radius: float = None

    def __post_init__(self):
        if self.model not in ("zd_conductance", "crystal_conductance", "mott_ppp", "percolation_cluster"):
            raise ValueError(f"unknown model {self.model!r}")
        p = self.params
        if self.model == "percolation_cluster" and not 0.0 <= p.get("p", -1) <= 1.0:
            raise ValueError("percolation parameter out of [0,1]")
        if self.model in ("zd_conductance", "crystal_conductance"):
            _check_law(p["law"])
        if self.model == "mott_ppp" and p.get("intensity", 0) <= 0:
            raise ValueError("PPP intensity must be positive")

    def generate(self, seed):
        p = dict(self.params)
        if self.model == "zd_conductance":
            return gen_zd_conductance(p["d"], p["L"], p["law"], seed)
        if self.model == "crystal_conductance":
            if p.get("preset", "hexagonal") != "hexagonal":
                raise ValueError("only the hexagonal preset is available declaratively")
            geom, A, tpl = hexagonal_preset()
            return gen_crystal_conductance(geom, A, tpl, p["L"], p["law"], seed)
        if self.model == "mott_ppp":
            R = self.cutoff_radius if self.cutoff_radius is not None else MOTT_DEFAULT_RMAX
            return gen_mott_ppp(p["d"], p["L"], p["intensity"], p["energy_law"], R,
                                p.get("rate_floor", 0.0), seed)
        return gen_percolation_cluster(p.get("lattice", "zd"), p["L"], p["p"], seed, d=p.get("d", 2))


# ----------------------------------------------------------------------
# Palm averages and diagnostics
# ----------------------------------------------------------------------
def palm_site_average(env, f):
    """Average of a point-indexed observable over all points of the sample."""
    f = np.asarray(f, dtype=float)
    if len(f) == 0 or env.n_points == 0:
        raise ValueError("empty environment")
    if f.shape[0] != env.n_points:
        raise ValueError("observable must have one value per point")
    return float(f.mean(axis=0)) if f.ndim == 1 else f.mean(axis=0)


def moment_check(env, k):
    """Site average of ``sum_j c_ij |x_j - x_i|^k`` for ``k`` in {0, 2}."""
    if k not in (0, 2):
        raise ValueError("moment order must be 0 or 2")
    w = env.rates * (np.einsum("mk,mk->m", env.disp, env.disp) if k == 2 else 1.0)
    per_point = np.zeros(env.n_points)
    np.add.at(per_point, env.edges[:, 0], w)
    np.add.at(per_point, env.edges[:, 1], w)
    return palm_site_average(env, per_point)


@dataclass(frozen=True)
class ErgodicCheck:
    lhs: float
    rhs: float
    gap: float


def ergodic_average_check(env, f, phi, eps):
    """Compare ``eps^d sum_i phi(eps x_i) f(i)`` with ``m E_0[f] int phi``."""
    need = phi.r_supp / eps
    if env.half_width() <= need:
        raise ValueError(f"support of phi (radius {phi.r_supp}) does not fit: need a box half-width "
                         f"> {need:g} microscopic units (L > {2 * need:g}), have {env.half_width():g}")
    f = np.asarray(f, dtype=float)
    lhs = eps**env.d * float(np.dot(phi(eps * env.centered), f))
    rhs = env.intensity * palm_site_average(env, f) * phi.integral()
    return ErgodicCheck(lhs, rhs, abs(lhs - rhs))
