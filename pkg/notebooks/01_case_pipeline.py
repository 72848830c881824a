# %% [markdown]
# # From regional case files to a distributed problem
#
# Three bundled cases (9, 14 and 30 buses) joined by three transformer ties.

# %%
import numpy as np

from gridmesh.casefile import bundled_composite
from gridmesh.topology import build_problem, merge_cases, split_cases

cases, spec = bundled_composite(53)
for c in cases:
    print(c.name, c.n_bus, "buses")
for t in spec.ties:
    print(f"tie {t.from_region}:{t.from_bus} -> {t.to_region}:{t.to_bus}  x={t.x} tap={t.tap}")

# %% [markdown]
# Merging renumbers the buses region by region and keeps one slack bus.

# %%
merged = merge_cases(cases, spec)
print(merged.n_bus, "buses,", int(np.sum(merged.bus[:, 1] == 3)), "slack")

# %% [markdown]
# Splitting gives every region its core buses plus one copy per incident tie.

# %%
for reg in split_cases(cases, spec):
    print(f"region {reg.index + 1}: {reg.n_core} core, copies {[c.bus_id for c in reg.copies]}, "
          f"state {reg.n_state}, equations {reg.n_residual}")

# %%
problem = build_problem(cases, spec)
print("consensus rows:", problem.n_consensus)
