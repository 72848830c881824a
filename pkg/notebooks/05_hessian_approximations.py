# %% [markdown]
# # Coordination Hessians
#
# Gauss-Newton against the general-purpose approximations. The quasi-Newton
# variants need a small proximal weight to get going at all.

# %%
import time

from gridmesh.aladin import AladinConfig, aladin_solve
from gridmesh.casefile import bundled_composite
from gridmesh.localnlp import HESSIAN_METHODS
from gridmesh.topology import build_problem

problem = build_problem(*bundled_composite(53))
for method in HESSIAN_METHODS:
    t0 = time.perf_counter()
    res = aladin_solve(problem, AladinConfig(hessian=method, nu=1.0, max_iter=300))
    print(f"{method:13s} {res.status:14s} {res.iterations:4d} iterations {time.perf_counter() - t0:6.2f} s")
