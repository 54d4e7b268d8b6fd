"""Hydrodynamic limit of exclusion among random conductances.

Start from independent Bernoulli occupations with density rho_0 = step
profile, run exclusion with rates multiplied by eps^-2 and compare the
empirical measure tested against a bump with the heat equation
d_t rho = div(D grad rho), where D is the effective matrix of the walk.  The
sup-in-time deviation shrinks as eps decreases.
"""
import numpy as np

from sephydro.environment import gen_zd_conductance
from sephydro.heat import MacroProfile
from sephydro.homogenization import effective_matrix
from sephydro.hydrodynamics import hydro_experiment
from sephydro.laws import Law
from sephydro.seeding import seed_derive
from sephydro.testfunctions import bump


def main():
    eps = [1 / 32, 1 / 64, 1 / 128]
    law = Law.uniform(1.0, 2.0)
    envs = [gen_zd_conductance(1, int(20 / e), law, seed=seed_derive(0, "conductances", k))
            for k, e in enumerate(eps)]
    D = effective_matrix(envs[-1]).D
    print(f"effective D from the finest environment: {D[0, 0]:.4f}")
    prof = MacroProfile("step", D, {"offset": 0.0, "high": 0.9, "low": 0.1})
    rep = hydro_experiment(envs, prof, eps, 0.5, [bump(1), bump(1, 2.0)], 20, seed=0)
    for e, row in zip(eps, rep.medians):
        print(f"eps = 1/{round(1 / e)}: median sup deviation {np.round(row, 4)}")
    print("mean swaps per replica:", [round(s) for s in rep.diagnostics["mean_swaps"]])


if __name__ == "__main__":
    main()
