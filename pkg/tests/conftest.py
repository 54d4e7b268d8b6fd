import numpy as np
import pytest

from sephydro.environment import Environment, GroupAction, gen_zd_conductance
from sephydro.laws import Law


def two_point(c=1.0):
    """Two points joined by a single edge of rate ``c``."""
    return Environment(GroupAction(1), [[4.0]], [[0.0], [1.0]], [[0, 1]], [c], [[1.0]])


def ring(L, law=None, seed=0):
    return gen_zd_conductance(1, L, law or Law.constant(1.0), seed=seed)


def ring_generator(L, rates=None):
    """Dense generator of a ring, built without the package."""
    rates = np.ones(L) if rates is None else np.asarray(rates, dtype=float)
    Q = np.zeros((L, L))
    for i in range(L):
        j = (i + 1) % L
        Q[i, j] += rates[i]
        Q[j, i] += rates[i]
    return Q - np.diag(Q.sum(axis=1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
