"""Consensus ADMM over a DistProblem."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .common import (CONVERGED, DIVERGED, LOCAL_FAILURE, MAX_ITER, SolveResult, inf, map_regions,
                     region_norms)
from .errors import LocalSolveError
from .localnlp import LocalObjective, solve_local
from .topology import FEASIBILITY, DistProblem
from .trace import GLOBAL, IterationTrace

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


@dataclass
class AdmmConfig:
    rho: float = 1e3
    max_iter: int = 200
    tol: float = 1e-10
    zeta0: list | None = None
    lam0: object = 0.01  # scalar or one vector per region
    inner_tol: float = 1e-12

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")


def _initial_duals(lam0, n_regions, n_cons):
    if np.isscalar(lam0):
        return [np.full(n_cons, float(lam0)) for _ in range(n_regions)]
    lam = [np.array(l, float) for l in lam0]
    if len(lam) != n_regions or any(l.shape != (n_cons,) for l in lam):
        raise ValueError(f"need {n_regions} dual vectors of length {n_cons}")
    return lam


def admm_coordination(chis, lams, rho, A_blocks):
    """Exact minimizer of ``sum_i -lam_i^T A_i z_i + rho/2 ||A_i (chi_i - z_i)||^2`` s.t. ``sum_i A_i z_i = 0``.

    Consensus rows link one +1 entry to one -1 entry, so the constraint makes every
    linked group of coordinates equal; each group takes its lam-corrected average.
    Coordinates untouched by any A_i keep their chi value.
    """
    if len(chis) != len(lams) or len(chis) != len(A_blocks):
        raise ValueError("chi, lambda and A must have one entry per region")
    A_blocks = [sp.csr_matrix(A) for A in A_blocks]
    m = A_blocks[0].shape[0]
    for A, c, l in zip(A_blocks, chis, lams):
        if A.shape != (m, len(c)) or np.shape(l) != (m,):
            raise ValueError("shape mismatch between A_i, chi_i and lambda_i")
    A = sp.hstack(A_blocks).tocsr()
    sizes = [len(c) for c in chis]
    offs = np.r_[0, np.cumsum(sizes)]
    num = np.concatenate([Ai.T @ (l + rho * (Ai @ c)) for Ai, c, l in zip(A_blocks, chis, lams)])
    den = np.asarray(A.multiply(A).sum(axis=0)).ravel()
    # columns sharing a consensus row belong to one group
    link = (abs(A).T @ abs(A)).tocsr()
    _, label = connected_components(link, directed=False)
    used = den > 0
    gnum = np.bincount(label[used], weights=num[used], minlength=label.max() + 1)
    gden = np.bincount(label[used], weights=den[used], minlength=label.max() + 1)
    z = np.concatenate(chis).astype(float)
    z[used] = gnum[label[used]] / (rho * gden[label[used]])
    return [z[offs[i]:offs[i + 1]].copy() for i in range(len(chis))]


def admm_dual_update(lams, chis, zetas, rho, A_blocks):
    return [l + rho * (A @ (c - z)) for l, c, z, A in zip(lams, chis, zetas, A_blocks)]


def admm_solve(problem: DistProblem, cfg: AdmmConfig | None = None, record_time: bool = True,
               callback=None) -> SolveResult:
    """Run ADMM until the pf, spec and consensus norms are all within ``cfg.tol``.

    ``callback(k, chis, zeta, lam)`` is called after every iteration with the new
    coordination result and duals.
    """
    cfg = cfg or AdmmConfig()
    form = problem.formulation
    regions, A_blocks = problem.regions, problem.A
    nreg = len(regions)
    zeta = [np.array(z, float) for z in (cfg.zeta0 or problem.initial_states())]
    lam = _initial_duals(cfg.lam0, nreg, problem.n_consensus)
    trace = IterationTrace(meta={
        "method": "admm", "formulation": form, "rho": cfg.rho, "tol": cfg.tol, "max_iter": cfg.max_iter,
        "lam0": cfg.lam0 if np.isscalar(cfg.lam0) else "vector",
    })
    chis = zeta
    gammas = [None] * nreg
    status, message = MAX_ITER, ""

    def local(i):
        obj = LocalObjective.admm(regions[i], form, A_blocks[i], lam[i], cfg.rho, zeta[i])
        kw = {"gamma_start": gammas[i]} if form == FEASIBILITY else {}
        t0 = time.perf_counter()
        res = solve_local(obj, chis[i], cfg.inner_tol, **kw)
        return res, time.perf_counter() - t0

    for k in range(1, cfg.max_iter + 1):
        try:
            results = map_regions(local, list(range(nreg)))
        except LocalSolveError as exc:
            status, message = LOCAL_FAILURE, str(exc)
            break
        chis = [r.chi for r, _ in results]
        gammas = [r.gamma for r, _ in results]
        times = [t if record_time else 0.0 for _, t in results]
        zeta_new = admm_coordination(chis, lam, cfg.rho, A_blocks)
        lam_new = admm_dual_update(lam, chis, zeta_new, cfg.rho, A_blocks)
        norms, cons = region_norms(problem, chis)
        steps = [inf(zn - z) for zn, z in zip(zeta_new, zeta)]
        duals = [inf(ln - l) for ln, l in zip(lam_new, lam)]
        for i, (pf, spec, c) in enumerate(norms):
            trace.add(k, i + 1, pf, spec, c, steps[i], duals[i], times[i])
        trace.add(k, GLOBAL, max(n[0] for n in norms), max(n[1] for n in norms), cons,
                  max(steps), max(duals), sum(times))
        zeta, lam = zeta_new, lam_new
        if callback is not None:
            callback(k, chis, zeta, lam)
        log.info("admm iter %d: pf %.2e spec %.2e cons %.2e", k, max(n[0] for n in norms),
                 max(n[1] for n in norms), cons)
        if all(max(n[0], n[1]) <= cfg.tol for n in norms) and cons <= cfg.tol:
            status = CONVERGED
            break
        if not np.isfinite(cons) or cons > DIVERGENCE_LIMIT:
            status, message = DIVERGED, f"consensus violation {cons:.3e} exceeds {DIVERGENCE_LIMIT:.0e}"
            break
    return SolveResult(chis, trace, status, trace.iterations, lam, zeta, message)
