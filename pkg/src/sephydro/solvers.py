"""Preconditioned conjugate gradient with residual history."""
import math

import numpy as np
from scipy import sparse

__all__ = ["ConvergenceError", "CGInfo", "pcg", "make_preconditioner"]


class ConvergenceError(RuntimeError):
    """Raised when CG misses its tolerance within the iteration cap."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


class CGInfo:
    __slots__ = ("iterations", "history", "preconditioner")

    def __init__(self, iterations, history, preconditioner):
        self.iterations = iterations
        self.history = history
        self.preconditioner = preconditioner

    @property
    def residual(self):
        return self.history[-1] if self.history else 0.0

    def to_dict(self):
        return {"iterations": self.iterations, "relative_residual": self.residual,
                "preconditioner": self.preconditioner}


def _project(labels):
    """Map ``z`` to its mean-zero part on every label class."""
    n_lab = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=n_lab)

    def proj(z):
        return z - (np.bincount(labels, weights=z, minlength=n_lab) / counts)[labels]

    return proj


def make_preconditioner(A, kind="jacobi", nullspace=None):
    """Return ``z = M^{-1} r`` for ``kind`` in {"jacobi", "amg", "none"}.

    ``nullspace`` (component labels) marks a singular graph Laplacian whose
    kernel is the per-component constants; the AMG output is then projected
    off that kernel, otherwise the V-cycle leaks kernel components and CG
    stagnates.
    """
    if kind == "none":
        return lambda r: r
    if kind == "jacobi":
        dinv = 1.0 / A.diagonal()
        return lambda r: dinv * r
    if kind == "amg":
        import pyamg

        # "local" weighting bounds the spectral radius by row sums; the default
        # estimate starts from a random vector and makes the hierarchy depend on
        # the global numpy RNG state
        A = sparse.csr_matrix(A, copy=True)
        A.eliminate_zeros()  # zero-rate edges must not join aggregates
        ml = pyamg.smoothed_aggregation_solver(A, symmetry="symmetric",
                                               smooth=("jacobi", {"weighting": "local"}))
        M = ml.aspreconditioner(cycle="V")
        if nullspace is None:
            return lambda r: M @ r
        proj = _project(np.asarray(nullspace))
        return lambda r: proj(M @ r)
    raise ValueError(f"unknown preconditioner {kind!r}")


def pcg(A, b, tol=1e-10, maxiter=None, preconditioner="jacobi", x0=None, nullspace=None):
    """Solve the SPD system ``A x = b``.

    Stops when ``||b - A x||_2 <= tol ||b||_2``.  The default iteration cap
    is ``20 sqrt(N)``.  ``nullspace`` is forwarded to
    :func:`make_preconditioner`.

    Returns
    -------
    x : ndarray
    info : CGInfo
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    if maxiter is None:
        maxiter = max(10, math.ceil(20 * math.sqrt(n)))
    Minv = make_preconditioner(A, preconditioner, nullspace)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), CGInfo(0, [0.0], preconditioner)
    r = b - A @ x
    hist = [float(np.linalg.norm(r)) / bnorm]
    if hist[-1] <= tol:
        return x, CGInfo(0, hist, preconditioner)
    z = Minv(r)
    p = z.copy()
    rz = float(np.dot(r, z))
    for it in range(1, maxiter + 1):
        Ap = A @ p
        alpha = rz / float(np.dot(p, Ap))
        x += alpha * p
        r -= alpha * Ap
        hist.append(float(np.linalg.norm(r)) / bnorm)
        if hist[-1] <= tol:
            # recompute the true residual to guard against drift
            true_res = float(np.linalg.norm(b - A @ x)) / bnorm
            hist[-1] = true_res
            if true_res <= tol:
                return x, CGInfo(it, hist, preconditioner)
            # restart from the true residual
            r = b - A @ x
            z = Minv(r)
            rz = float(np.dot(r, z))
            p = z.copy()
            continue
        z = Minv(r)
        rz_new = float(np.dot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"CG did not reach relative residual {tol:g} in {maxiter} iterations (last {hist[-1]:.3e})", hist)
