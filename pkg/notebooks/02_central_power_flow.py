# %% [markdown]
# # Central Newton-Raphson reference

# %%
import numpy as np

from gridmesh.casefile import bundled_case, bundled_composite
from gridmesh.centralized import solve_newton_raphson
from gridmesh.topology import merge_cases

sol = solve_newton_raphson(bundled_case("case9"))
print("iterations", sol.iterations)
for b, v, a in zip(sol.bus_ids, sol.vm, np.rad2deg(sol.va)):
    print(f"bus {b}: {v:.6f} pu  {a:8.4f} deg")

# %% [markdown]
# The merged composites solve the same way and serve as the reference for the distributed runs.

# %%
for name in ("53", "354"):
    merged = merge_cases(*bundled_composite(name))
    s = solve_newton_raphson(merged)
    print(name, "buses:", s.iterations, "iterations, mismatch history", ["%.1e" % h for h in s.history])
