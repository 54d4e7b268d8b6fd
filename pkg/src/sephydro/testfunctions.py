"""Compactly supported smooth test functions with exact Hessians.

The shipped family is built from two radial profiles written as functions of
``s = |x|^2`` (so derivatives never divide by ``|x|``):

* the bump ``exp(-1/(1 - s/r^2))`` on the ball of radius ``r``;
* the plateau equal to 1 on ``B_l`` and 0 outside ``B_{l+1}``.

Plateaus multiplied by monomials give an indexed family ``phi_j`` used by
:func:`sephydro.hydrodynamics.measure_distance`.
"""
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy import integrate

__all__ = [
    "TestFunction",
    "bump",
    "plateau",
    "zero_function",
    "times_monomial",
    "standard_family",
    "integrate_box",
]


def _as_points(x, d):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 and d == 1:
        x = x[:, None]
    elif x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != d:
        raise ValueError(f"points must have last dimension {d}, got {x.shape}")
    return x


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Smooth function with value, gradient and Hessian evaluators.

    All evaluators take an ``(n, d)`` array of points (a 1-D array is
    accepted when ``d == 1``) and return arrays of shape ``(n,)``,
    ``(n, d)`` and ``(n, d, d)``.
    """

    __test__ = False  # not a pytest class

    d: int
    r_supp: float
    _value: object = field(repr=False)
    _grad: object = field(repr=False)
    _hess: object = field(repr=False)
    name: str = "phi"
    smoothness: str = "C-infinity"

    def __call__(self, x):
        return self._value(_as_points(x, self.d))

    def gradient(self, x):
        return self._grad(_as_points(x, self.d))

    def hessian(self, x):
        return self._hess(_as_points(x, self.d))

    def div_d_grad(self, x, D):
        """``sum_ik D_ik d^2 phi / dx_i dx_k`` at the points ``x``."""
        D = np.atleast_2d(np.asarray(D, dtype=float))
        return np.einsum("ik,nik->n", D, self.hessian(x))

    def integral(self, tol=1e-10):
        return integrate_box(self, self.d, self.r_supp, tol=tol)

    def l1_norm(self, tol=1e-10):
        return integrate_box(lambda x: np.abs(self(x)), self.d, self.r_supp, tol=tol)


def _radial(d, r_supp, h, name):
    """Build a TestFunction from ``h(s) -> (h, h', h'')`` with ``s = |x|^2``."""

    def value(x):
        return h(np.einsum("nk,nk->n", x, x))[0]

    def grad(x):
        _, h1, _ = h(np.einsum("nk,nk->n", x, x))
        return 2.0 * h1[:, None] * x

    def hess(x):
        _, h1, h2 = h(np.einsum("nk,nk->n", x, x))
        out = 4.0 * h2[:, None, None] * x[:, :, None] * x[:, None, :]
        out += 2.0 * h1[:, None, None] * np.eye(d)[None]
        return out

    return TestFunction(d, float(r_supp), value, grad, hess, name=name)


def _bump_profile(r):
    r2 = r * r

    def h(s):
        s = np.asarray(s, dtype=float)
        v = np.zeros_like(s)
        v1 = np.zeros_like(s)
        v2 = np.zeros_like(s)
        q = 1.0 - s / r2
        m = q > 1e-3
        qm = q[m]
        hv = np.exp(-1.0 / qm)
        v[m] = hv
        v1[m] = -hv / (r2 * qm**2)
        v2[m] = hv / r2**2 * (1.0 / qm**4 - 2.0 / qm**3)
        return v, v1, v2

    return h


def bump(d=1, r=1.0, amplitude=1.0):
    """``amplitude * exp(-1/(1 - |x/r|^2))`` on ``B_r``.

    With the default arguments this is the canonical bump used throughout
    the acceptance experiments.
    """
    base = _bump_profile(float(r))

    def h(s):
        v, v1, v2 = base(s)
        return amplitude * v, amplitude * v1, amplitude * v2

    return _radial(d, r, h, name=f"bump(r={r:g})")


def _smooth_step(u):
    """Smooth transition 0 -> 1 on [0, 1] with first and second derivatives."""
    u = np.asarray(u, dtype=float)

    def E(z):
        e, e1, e2 = np.zeros_like(z), np.zeros_like(z), np.zeros_like(z)
        m = z > 1e-2
        zm = z[m]
        ev = np.exp(-1.0 / zm)
        e[m] = ev
        e1[m] = ev / zm**2
        e2[m] = ev * (1.0 / zm**4 - 2.0 / zm**3)
        return e, e1, e2

    a, a1, a2 = E(u)
    b, b1, b2 = E(1.0 - u)
    w = a + b
    # w > 0 everywhere since at least one of u, 1-u exceeds 1/2
    w1 = a1 - b1
    w2 = a2 + b2
    num = a1 * w - a * w1
    num1 = a2 * w - a * w2
    S = a / w
    S1 = num / w**2
    S2 = (num1 * w - 2.0 * num * w1) / w**3
    return S, S1, S2


def plateau(d=1, ell=1):
    """Values in [0, 1], equal to 1 on ``B_ell`` and 0 outside ``B_{ell+1}``."""
    ell = float(ell)
    lo = ell * ell
    width = (ell + 1.0) ** 2 - lo

    def h(s):
        s = np.asarray(s, dtype=float)
        u = np.clip((s - lo) / width, 0.0, 1.0)
        S, S1, S2 = _smooth_step(u)
        inside = (s > lo) & (s < lo + width)
        return 1.0 - S, np.where(inside, -S1 / width, 0.0), np.where(inside, -S2 / width**2, 0.0)

    return _radial(d, ell + 1.0, h, name=f"plateau(l={ell:g})")


def zero_function(d=1, r_supp=1.0):
    return TestFunction(
        d,
        float(r_supp),
        lambda x: np.zeros(len(x)),
        lambda x: np.zeros((len(x), d)),
        lambda x: np.zeros((len(x), d, d)),
        name="zero",
    )


def times_monomial(phi, powers, scale=None):
    """Product of ``phi`` with the monomial ``prod_k (x_k/scale)^powers[k]``."""
    powers = np.asarray(powers, dtype=int)
    d = phi.d
    if powers.shape != (d,):
        raise ValueError("one exponent per coordinate required")
    scale = float(phi.r_supp if scale is None else scale)

    def mono(x):
        y = x / scale
        m = np.prod(y**powers, axis=1)
        g = np.zeros_like(x)
        H = np.zeros((len(x), d, d))
        for i in range(d):
            if powers[i] == 0:
                continue
            pi = powers.copy()
            pi[i] -= 1
            g[:, i] = powers[i] * np.prod(y**pi, axis=1) / scale
            for k in range(d):
                pk = pi.copy()
                if pk[k] == 0:
                    continue
                coef = powers[i] * pk[k]
                pk[k] -= 1
                H[:, i, k] = coef * np.prod(y**pk, axis=1) / scale**2
        return m, g, H

    def value(x):
        return phi._value(x) * mono(x)[0]

    def grad(x):
        m, g, _ = mono(x)
        return phi._grad(x) * m[:, None] + phi._value(x)[:, None] * g

    def hess(x):
        m, g, H = mono(x)
        v, gv, Hv = phi._value(x), phi._grad(x), phi._hess(x)
        return (
            Hv * m[:, None, None]
            + gv[:, :, None] * g[:, None, :]
            + g[:, :, None] * gv[:, None, :]
            + v[:, None, None] * H
        )

    label = "*".join(f"x{k}^{p}" for k, p in enumerate(powers) if p) or "1"
    return TestFunction(d, phi.r_supp, value, grad, hess, name=f"{phi.name}*{label}")


def standard_family(d=1, ell_max=2, degree=2):
    """Finite prefix of the indexed family ``phi_j``.

    For each radius ``ell = 0..ell_max`` the plateau comes first, followed by
    the plateau times every monomial of total degree ``1..degree`` (in
    lexicographic order of the exponent vector).
    """
    fam = []
    exps = [p for p in product(range(degree + 1), repeat=d) if 0 < sum(p) <= degree]
    exps.sort(key=lambda p: (sum(p), tuple(-q for q in p)))
    for ell in range(ell_max + 1):
        base = plateau(d, ell)
        fam.append(base)
        fam.extend(times_monomial(base, p) for p in exps)
    return fam


def integrate_box(func, d, radius, tol=1e-8, breakpoints=None, max_nodes=None):
    """Integrate ``func`` over ``[-radius, radius]^d``.

    ``d == 1`` uses adaptive Gauss-Kronrod (``scipy.integrate.quad``) with
    optional interior ``breakpoints``; higher dimensions use tensor
    Gauss-Legendre with node doubling until two successive values agree to
    ``tol``.
    """
    radius = float(radius)
    if d == 1:
        def f1(t):
            return float(func(np.array([[t]]))[0])

        pts = None
        if breakpoints is not None:
            pts = [p for p in breakpoints if -radius < p < radius] or None
        val, _ = integrate.quad(f1, -radius, radius, points=pts, epsabs=tol, epsrel=tol, limit=400)
        return val
    if max_nodes is None:
        max_nodes = {2: 512, 3: 96}.get(d, 32)
    n = 16
    prev = None
    while True:
        z, w = np.polynomial.legendre.leggauss(n)
        z = z * radius
        w = w * radius
        grids = np.meshgrid(*([z] * d), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        wts = np.ones(1)
        for _ in range(d):
            wts = np.outer(wts, w).ravel()
        val = float(np.dot(wts, func(pts)))
        if prev is not None and abs(val - prev) <= tol * max(1.0, abs(val)):
            return val
        if 2 * n > max_nodes:
            return val
        prev = val
        n *= 2
