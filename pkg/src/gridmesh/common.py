"""Pieces shared by the distributed drivers."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .network import bus_spec_residual, pf_residual
from .trace import IterationTrace

CONVERGED = "converged"
MAX_ITER = "max_iter"
LOCAL_FAILURE = "local_failure"
DIVERGED = "diverged"
NUMERICAL = "numerical"


@dataclass
class SolveResult:
    states: list[np.ndarray]
    trace: IterationTrace
    status: str
    iterations: int
    lam: object = None
    zeta: list[np.ndarray] = field(default_factory=list)
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def threads() -> int:
    try:
        return max(1, int(os.environ.get("GRIDMESH_THREADS", "1")))
    except ValueError:
        return 1


def map_regions(fn, items):
    """Apply ``fn`` to every item; runs on a thread pool when GRIDMESH_THREADS > 1.
    Results come back in input order."""
    n = min(threads(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(fn, items))


def inf(x) -> float:
    x = np.asarray(x)
    return float(np.max(np.abs(x))) if x.size else 0.0


def region_norms(problem, chis):
    """Per-region (pf, spec) infinity norms and per-region consensus norms over the rows
    each region takes part in, plus the global consensus norm."""
    cons = problem.consensus_residual(chis)
    out = []
    for reg, blk, chi in zip(problem.regions, problem.consensus, chis):
        rows = np.unique(blk.A.nonzero()[0])
        out.append((inf(pf_residual(reg, chi)), inf(bus_spec_residual(reg, chi)), inf(cons[rows])))
    return out, inf(cons)
