"""Continuum heat semigroup with a possibly degenerate diffusion matrix.

``P_t f(x) = E[f(x + B_t)]`` where ``B`` is a Brownian motion with
covariance ``2 D t``.  Only the span of the positive eigenvalues of ``D``
is smoothed; null directions are left untouched.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

__all__ = [
    "eigen_split",
    "MacroProfile",
    "heat_solution",
    "gaussian_smooth",
    "homogenized_resolvent",
    "QuadratureError",
]

class QuadratureError(RuntimeError):
    pass


def eigen_split(D, rank_tol=1e-8):
    """Eigenvalues (descending) and eigenvectors with small eigenvalues zeroed."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    w, U = np.linalg.eigh(0.5 * (D + D.T))
    order = np.argsort(w)[::-1]
    w, U = w[order], U[:, order]
    top = max(w[0], 0.0)
    w = np.where(w > rank_tol * top, w, 0.0)
    return w, U


def _points(x, d):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[:, None] if d == 1 else x[None, :]
    return x


def gaussian_smooth(func, D, t, x, r_supp=None, tol=1e-7, max_nodes=128):
    """``E[func(x + B_t)]`` for an array of points ``x`` of shape ``(n, d)``.

    With ``D`` nonsingular and a known support radius, the Gaussian
    convolution is integrated by tensor Gauss-Legendre on the window
    ``supp(func)`` intersected with ``x +- 10 sigma`` (per coordinate).  Otherwise
    tensor Gauss-Hermite on the positive-eigenvalue subspace is used.  Node
    counts double until two successive results agree to ``tol``.
    """
    w, U = eigen_split(D)
    d = len(w)
    x = _points(x, d)
    if t == 0 or not np.any(w > 0):
        return np.asarray(func(x), dtype=float)
    pos = w > 0
    windowed = r_supp is not None and bool(pos.all())
    n = 16 if d <= 2 else 8
    prev = None
    while True:
        if windowed:
            val = _windowed_gl(func, D, t, x, float(r_supp), n)
        else:
            val = _hermite(func, w[pos], U[:, pos], t, x, n)
        if prev is not None and np.max(np.abs(val - prev)) <= tol:
            return val
        if n * 2 > max_nodes or (n * 2) ** d > 300_000:
            raise QuadratureError(f"heat-semigroup quadrature did not converge (t={t}, nodes={n})")
        prev = val
        n *= 2


def _tensor(z, wz, k):
    grids = np.meshgrid(*([z] * k), indexing="ij")
    Z = np.stack([g.ravel() for g in grids], axis=1)
    W = np.ones(1)
    for _ in range(k):
        W = np.outer(W, wz).ravel()
    return Z, W


def _hermite(func, w, U, t, x, n):
    z, wz = np.polynomial.hermite_e.hermegauss(n)
    Z, W = _tensor(z, wz / np.sqrt(2 * np.pi), U.shape[1])
    shifts = (Z * np.sqrt(2.0 * w * t)) @ U.T
    d = x.shape[1]
    val = np.zeros(len(x))
    chunk = max(1, 2_000_000 // len(shifts))
    for s in range(0, len(x), chunk):
        xs = x[s:s + chunk]
        pts = (xs[:, None, :] + shifts[None, :, :]).reshape(-1, d)
        val[s:s + chunk] = np.asarray(func(pts)).reshape(len(xs), -1) @ W
    return val


def _windowed_gl(func, D, t, x, r, n):
    d = x.shape[1]
    D = np.atleast_2d(D)
    cov = 2.0 * t * D
    P = np.linalg.inv(cov)
    norm = 1.0 / np.sqrt((2 * np.pi) ** d * np.linalg.det(cov))
    sd = np.sqrt(np.diag(cov))
    lo = np.maximum(-r, x - 10 * sd)
    hi = np.minimum(r, x + 10 * sd)
    live = np.all(hi > lo, axis=1)
    out = np.zeros(len(x))
    idx = np.flatnonzero(live)
    if len(idx) == 0:
        return out
    z, wz = np.polynomial.legendre.leggauss(n)
    Z, W = _tensor(0.5 * (z + 1.0), 0.5 * wz, d)  # nodes on [0, 1]^d
    chunk = max(1, 2_000_000 // len(Z))
    for s in range(0, len(idx), chunk):
        ii = idx[s:s + chunk]
        a, b = lo[ii], hi[ii]
        pts = a[:, None, :] + (b - a)[:, None, :] * Z[None, :, :]
        diff = pts - x[ii, None, :]
        q = np.einsum("nqi,ij,nqj->nq", diff, P, diff)
        fv = np.asarray(func(pts.reshape(-1, d)), dtype=float).reshape(len(ii), -1)
        vol = np.prod(b - a, axis=1)
        out[ii] = norm * vol * ((fv * np.exp(-0.5 * q)) @ W)
    return out


@dataclass(frozen=True)
class MacroProfile:
    """Initial macroscopic density together with the matrix ``D``.

    ``kind`` is one of

    * ``constant``: ``value``;
    * ``step``: ``high`` where ``x . direction < offset``, else ``low``;
    * ``box``: ``value`` on the product of intervals ``[lower_k, upper_k)``;
    * ``gaussian``: ``amplitude * exp(-|x|^2 / (2 width^2))``;
    * ``bump``: ``amplitude * exp(-1/(1 - |x/radius|^2))``;
    * ``table``: linear interpolation of ``values`` at ``nodes`` along
      ``direction``, constant beyond the end nodes;
    * ``function``: an arbitrary callable with support radius ``radius``.
    """

    kind: str
    D: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        if not np.allclose(D, D.T):
            raise ValueError("D must be symmetric")
        w = np.linalg.eigvalsh(D)
        if w.min() < -1e-10 * max(abs(w.max()), 1.0):
            raise ValueError("D must be positive semidefinite")
        object.__setattr__(self, "D", D)
        if self.kind not in ("constant", "step", "box", "gaussian", "bump", "table", "function"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        lo, hi = self.bounds()
        if self.kind != "function" and (lo < 0 or hi > 1):
            raise ValueError("initial profile must take values in [0, 1]")

    @property
    def d(self):
        return self.D.shape[0]

    def bounds(self):
        p = self.params
        if self.kind == "constant":
            return p["value"], p["value"]
        if self.kind == "step":
            return min(p.get("low", 0.0), p.get("high", 1.0)), max(p.get("low", 0.0), p.get("high", 1.0))
        if self.kind == "box":
            return min(0.0, p["value"]), max(0.0, p["value"])
        if self.kind in ("gaussian", "bump"):
            return 0.0, p["amplitude"]
        if self.kind == "table":
            return float(min(p["values"])), float(max(p["values"]))
        return -np.inf, np.inf

    def _direction(self):
        n = np.asarray(self.params.get("direction", np.eye(self.d)[0]), dtype=float)
        return n / np.linalg.norm(n)

    def initial(self, x):
        """``rho_0`` at points ``x`` of shape ``(n, d)``."""
        x = _points(x, self.d)
        p = self.params
        if self.kind == "constant":
            return np.full(len(x), float(p["value"]))
        if self.kind == "step":
            s = x @ self._direction()
            return np.where(s < p.get("offset", 0.0), p.get("high", 1.0), p.get("low", 0.0))
        if self.kind == "box":
            lo = np.asarray(p["lower"], dtype=float)
            hi = np.asarray(p["upper"], dtype=float)
            inside = np.all((x >= lo) & (x < hi), axis=1)
            return np.where(inside, float(p["value"]), 0.0)
        if self.kind == "gaussian":
            return p["amplitude"] * np.exp(-np.einsum("nk,nk->n", x, x) / (2 * p["width"] ** 2))
        if self.kind == "bump":
            q = 1.0 - np.einsum("nk,nk->n", x, x) / p["radius"] ** 2
            out = np.zeros(len(x))
            m = q > 1e-3
            out[m] = p["amplitude"] * np.exp(-1.0 / q[m])
            return out
        if self.kind == "table":
            s = x @ self._direction()
            return np.interp(s, np.asarray(p["nodes"], float), np.asarray(p["values"], float))
        return np.asarray(p["func"](x), dtype=float)

    __call__ = initial

    def breakpoints(self):
        """Discontinuity locations along the first axis (for 1-D quadrature)."""
        if self.kind == "step":
            return [self.params.get("offset", 0.0)]
        if self.kind == "box":
            return [self.params["lower"][0], self.params["upper"][0]]
        if self.kind == "table":
            return list(self.params["nodes"])
        return []


def _erfc_step(s, var):
    return 0.5 * special.erfc(s / np.sqrt(2.0 * var))


def heat_solution(profile, x, t, tol=1e-7):
    """``rho(x, t) = P_t rho_0 (x)`` with covariance ``2 D t``.

    Closed forms are used for constant, step, box (when ``D`` is diagonal)
    and Gaussian profiles; the rest goes through :func:`gaussian_smooth`.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    x = _points(x, profile.d)
    if t == 0:
        return profile.initial(x)
    D = profile.D
    p = profile.params
    kind = profile.kind
    if kind == "constant":
        return np.full(len(x), float(p["value"]))
    if kind == "step":
        n = profile._direction()
        var = 2.0 * t * float(n @ D @ n)
        s = x @ n - p.get("offset", 0.0)
        hi, lo = p.get("high", 1.0), p.get("low", 0.0)
        if var <= 1e-14 * max(1.0, np.abs(D).max()) * t:
            return np.where(s < 0, hi, lo)
        return lo + (hi - lo) * _erfc_step(s, var)
    if kind == "box" and np.allclose(D, np.diag(np.diag(D))):
        out = np.full(len(x), float(p["value"]))
        for k in range(profile.d):
            lo_k, hi_k = p["lower"][k], p["upper"][k]
            var = 2.0 * t * D[k, k]
            if var <= 0:
                out *= (x[:, k] >= lo_k) & (x[:, k] < hi_k)
            else:
                out *= _erfc_step(lo_k - x[:, k], var) - _erfc_step(hi_k - x[:, k], var)
        return out
    if kind == "gaussian":
        S0 = p["width"] ** 2 * np.eye(profile.d)
        S = S0 + 2.0 * t * D
        Sinv = np.linalg.inv(S)
        fac = np.sqrt(np.linalg.det(S0) / np.linalg.det(S))
        return p["amplitude"] * fac * np.exp(-0.5 * np.einsum("ni,ij,nj->n", x, Sinv, x))
    r = p.get("radius")
    return gaussian_smooth(profile.initial, D, t, x, r_supp=r, tol=tol)


def homogenized_resolvent(func, D, lam, x, r_supp=None, tol=1e-7):
    """``R_lam f(x) = int_0^inf e^{-lam s} P_s f(x) ds``.

    In one dimension with ``D > 0`` the Green's function
    ``exp(-kappa |z|) / (2 sqrt(lam D))``, ``kappa = sqrt(lam / D)``, is
    integrated against ``f`` on each side of ``x`` by Gauss-Legendre.
    Otherwise ``s = -log(1 - u) / lam`` maps the Laplace integral to
    ``[0, 1)``, which is integrated adaptively.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    D = np.atleast_2d(np.asarray(D, dtype=float))
    x = _points(x, D.shape[0])
    if D.shape == (1, 1) and D[0, 0] > 0 and r_supp is not None:
        return _resolvent_1d(func, float(D[0, 0]), lam, x[:, 0], float(r_supp), tol)

    def integrand(u):
        if u >= 1.0:
            return np.zeros(len(x))
        s = -np.log1p(-u) / lam
        return gaussian_smooth(func, D, s, x, r_supp=r_supp, tol=0.1 * tol)

    val, err = integrate.quad_vec(integrand, 0.0, 1.0, epsabs=tol, epsrel=0.0, norm="max", limit=400)
    return val / lam


def _resolvent_1d(func, D, lam, x, r, tol, max_nodes=4096):
    kappa = math.sqrt(lam / D)
    pref = 1.0 / (2.0 * math.sqrt(lam * D))

    def side(a, b, n):
        # int_a^b exp(-kappa |x - y|) f(y) dy with y on one side of x
        z, w = np.polynomial.legendre.leggauss(n)
        h = np.clip(b - a, 0.0, None)
        y = a[:, None] + 0.5 * h[:, None] * (z[None, :] + 1.0)
        fy = np.asarray(func(y.reshape(-1, 1)), dtype=float).reshape(y.shape)
        k = np.exp(-kappa * np.abs(x[:, None] - y))
        return 0.5 * h * ((fy * k) @ w)

    lo = np.full(len(x), -r)
    hi = np.full(len(x), r)
    mid = np.clip(x, -r, r)
    n, prev = 32, None
    while True:
        val = pref * (side(lo, mid, n) + side(mid, hi, n))
        if prev is not None and np.max(np.abs(val - prev)) <= tol:
            return val
        if 2 * n > max_nodes:
            raise QuadratureError("resolvent quadrature did not converge")
        prev, n = val, 2 * n
