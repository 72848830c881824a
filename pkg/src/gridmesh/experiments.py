"""Reference solutions, start perturbations and comparison against the central solve."""

from __future__ import annotations

import numpy as np

from .centralized import PFSolution, solve_newton_raphson
from .topology import DistProblem, gather, scatter


def reference_states(problem: DistProblem, sol: PFSolution | None = None) -> list[np.ndarray]:
    """Region states built from the Newton-Raphson solution of the merged case."""
    sol = sol or solve_newton_raphson(problem.merged)
    return scatter(problem, sol.vm, sol.va, sol.p, sol.q)


def perturbed_start(states, sigma: float, seed: int = 0) -> list[np.ndarray]:
    """``states + sigma * xi`` with standard normal ``xi``; the same ``xi`` for every sigma at a given seed."""
    sizes = [len(s) for s in states]
    xi = np.random.default_rng(seed).standard_normal(sum(sizes))
    out, k = [], 0
    for s, n in zip(states, sizes):
        out.append(np.asarray(s, float) + sigma * xi[k:k + n])
        k += n
    return out


def iterations_to(trace, threshold: float, column: str = "consensus_inf") -> float:
    """First iteration whose global ``column`` is at most ``threshold``; inf if never reached."""
    for row in trace.global_rows():
        if getattr(row, column) <= threshold:
            return row.iter
    return np.inf


def deviation_from_central(problem: DistProblem, chis, sol: PFSolution | None = None) -> dict[str, float]:
    """Largest per-bus absolute difference to the central solution, per quantity."""
    sol = sol or solve_newton_raphson(problem.merged)
    dist = gather(problem, chis)
    dva = np.angle(np.exp(1j * (dist["va"] - sol.va)))
    return {
        "vm": float(np.max(np.abs(dist["vm"] - sol.vm))),
        "va": float(np.max(np.abs(dva))),
        "p": float(np.max(np.abs(dist["p"] - sol.p))),
        "q": float(np.max(np.abs(dist["q"] - sol.q))),
    }
