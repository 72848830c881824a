# %% [markdown]
# # ALADIN with the least-squares formulation

# %%
from gridmesh.aladin import AladinConfig, aladin_solve
from gridmesh.casefile import bundled_composite
from gridmesh.experiments import deviation_from_central
from gridmesh.topology import build_problem

problem = build_problem(*bundled_composite(53))
res = aladin_solve(problem, AladinConfig())
print(res.status, "after", res.iterations, "iterations")

# %% [markdown]
# Global rows of the trace: power-flow, bus-spec and consensus violation per iteration.

# %%
for row in res.trace.global_rows():
    print(f"{row.iter:3d}  {row.pf_inf:9.2e}  {row.spec_inf:9.2e}  {row.consensus_inf:9.2e}  step {row.step_inf:9.2e}")

# %%
print(deviation_from_central(problem, res.states))

# %% [markdown]
# Larger composites take a few more seconds but about the same number of iterations.

# %%
for name in ("354", "826"):
    r = aladin_solve(build_problem(*bundled_composite(name)), AladinConfig())
    print(name, r.status, r.iterations)
