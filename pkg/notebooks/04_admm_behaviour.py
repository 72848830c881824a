# %% [markdown]
# # ADMM on the feasibility formulation
#
# Consensus violation after a fixed budget for several penalty values, then the
# effect of perturbing the start around the reference solution.

# %%
import numpy as np

from gridmesh.admm import AdmmConfig, admm_solve
from gridmesh.casefile import bundled_composite
from gridmesh.experiments import iterations_to, perturbed_start, reference_states
from gridmesh.topology import FEASIBILITY, build_problem

problem = build_problem(*bundled_composite(53), FEASIBILITY)

# %%
for rho in (1e-1, 1.0, 1e3, 1e5):
    res = admm_solve(problem, AdmmConfig(rho=rho, max_iter=100))
    cons = res.trace.column("consensus_inf")
    print(f"rho {rho:g}: {res.status}, consensus {cons[0]:.1e} -> {cons[-1]:.1e}")

# %%
ref = reference_states(problem)
for sigma in (0.0, 0.01, 0.1, 1.0):
    res = admm_solve(problem, AdmmConfig(max_iter=100, zeta0=perturbed_start(ref, sigma)))
    k = iterations_to(res.trace, 1e-3)
    print(f"sigma {sigma:g}: consensus <= 1e-3 at", "never" if np.isinf(k) else int(k), f"({res.status})")
