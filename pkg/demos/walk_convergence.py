"""The rescaled walk approaches Brownian motion with covariance 2D.

For a smooth bump phi we compute the resolvent (lam - L^eps)^-1 phi and the
semigroup exp(t L^eps) phi of the walk on the scaled lattice eps Z, and their
continuum counterparts with the effective constant D.  The L^1 gaps shrink as
eps goes to zero.  On random environments the decay is slow (about sqrt eps in
one dimension) and fluctuates from sample to sample, so we also average over
independent environments.
"""
import math

import numpy as np

from sephydro.environment import gen_zd_conductance
from sephydro.homogenization import resolvent_convergence_check, scaled_family, semigroup_convergence_check
from sephydro.laws import Law
from sephydro.seeding import seed_derive
from sephydro.testfunctions import bump


def main():
    phi = bump(1)
    eps = [1 / 16, 1 / 32, 1 / 64]
    width = 24
    hom = scaled_family(lambda L, k: gen_zd_conductance(1, L, Law.constant(1.0)), eps, width)
    print("homogeneous resolvent gaps:", resolvent_convergence_check(hom, eps, phi, 1.0, [[1.0]]).gaps)
    print("homogeneous semigroup gaps:", semigroup_convergence_check(hom, eps, phi, 0.25, [[1.0]]).gaps)

    D = [[1 / math.log(2)]]
    n = 30
    gaps = np.zeros((n, 2, 3))
    for r in range(n):
        envs = scaled_family(lambda L, k: gen_zd_conductance(1, L, Law.uniform(1.0, 2.0),
                                                             seed=seed_derive(0, "conductances", 3 * r + k)),
                             eps, width)
        gaps[r, 0] = resolvent_convergence_check(envs, eps, phi, 1.0, D).gaps
        gaps[r, 1] = semigroup_convergence_check(envs, eps, phi, 0.25, D).gaps
    m = gaps.mean(axis=0)
    print(f"uniform(1,2), mean over {n} environments")
    print("  resolvent gaps:", np.round(m[0], 5), "ratio", round(m[0, 2] / m[0, 0], 3))
    print("  semigroup gaps:", np.round(m[1], 5), "ratio", round(m[1, 2] / m[1, 0], 3))
    print("  (sqrt-eps decay predicts a ratio near 0.5)")


if __name__ == "__main__":
    main()
