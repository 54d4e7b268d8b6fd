"""Effective diffusivity of a random walk among random conductances.

We sample i.i.d. lognormal conductances on a 2-D torus, solve the corrector
problem in the two coordinate directions and along the diagonal, and compare
the resulting matrix with a mean-square-displacement estimate from
independent walks.  In one dimension the answer is the harmonic mean of the
conductances, which we check as well.
"""
import math

import numpy as np

from sephydro.environment import gen_zd_conductance, hexagonal_preset, gen_crystal_conductance
from sephydro.homogenization import effective_matrix, msd_diffusivity
from sephydro.laws import Law


def main():
    # one dimension: D is the harmonic mean
    env = gen_zd_conductance(1, 20_000, Law.uniform(1.0, 2.0), seed=0)
    D1 = effective_matrix(env).D[0, 0]
    print(f"1-D uniform(1,2): D = {D1:.5f}, harmonic mean = {1 / np.mean(1 / env.rates):.5f}, "
          f"infinite volume 1/ln 2 = {1 / math.log(2):.5f}")

    # two dimensions: corrector versus walkers
    env = gen_zd_conductance(2, 64, Law.lognormal(0.0, 0.5), seed=1)
    em = effective_matrix(env)
    print("2-D lognormal corrector D:\n", np.round(em.D, 4))
    est = msd_diffusivity(env, 50.0, replicas=10_000, seed=1)
    print("2-D lognormal MSD D:\n", np.round(est.D, 4), "\n  stderr\n", np.round(est.stderr, 4))

    # the honeycomb lattice with unit rates: no corrector is needed and D = (3/4) I
    geom, A, tpl = hexagonal_preset()
    hexa = gen_crystal_conductance(geom, A, tpl, 8, Law.constant(1.0))
    print("honeycomb unit rates:\n", np.round(effective_matrix(hexa).D, 10))

    # switching off the vertical bonds leaves decoupled lines: D has rank one
    sq = gen_zd_conductance(2, 16, Law.constant(1.0))
    lines = sq.with_rates(np.where(np.abs(sq.disp[:, 1]) < 0.5, 1.0, 0.0))
    em = effective_matrix(lines)
    print(f"decoupled lines: eigenvalues {em.eigenvalues}, rank {em.rank}")


if __name__ == "__main__":
    main()
