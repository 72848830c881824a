"""Augmented Lagrangian alternating direction inexact Newton (ALADIN) over a DistProblem."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .common import (CONVERGED, LOCAL_FAILURE, MAX_ITER, NUMERICAL, SolveResult, inf, map_regions,
                     region_norms)
from .errors import LocalSolveError, NumericalError
from .localnlp import GAUSS_NEWTON, HessianApprox, LocalObjective, lagrangian_gradient, solve_local
from .topology import FEASIBILITY, LEAST_SQUARES, DistProblem
from .trace import GLOBAL, IterationTrace

log = logging.getLogger(__name__)

SPARSE_LIMIT = 5000


@dataclass
class AladinConfig:
    rho: float = 1e4
    nu: float = 1e4
    hessian: str = GAUSS_NEWTON
    max_iter: int = 30
    tol: float = 1e-10
    lam0: float = 0.01
    zeta0: list | None = None
    sigma: list | None = None
    b: np.ndarray | None = None
    inner_tol: float = 1e-12
    dual_update: str = "qp"

    def __post_init__(self):
        if self.rho <= 0 or self.nu <= 0:
            raise ValueError("rho and nu must be positive")
        if self.dual_update not in ("qp", "local"):
            raise ValueError("dual_update must be 'qp' or 'local'")
        if self.sigma is not None:
            for S in self.sigma:
                S = np.asarray(S.toarray() if sp.issparse(S) else S)
                if not np.allclose(S, S.T) or la.eigvalsh(S)[0] <= 0:
                    raise ValueError("scaling matrices must be symmetric positive definite")


@dataclass(frozen=True)
class SensitivityPack:
    grad: np.ndarray
    B: np.ndarray
    jac: np.ndarray  # constraint Jacobian, zero rows in least-squares mode


def _stack_A(A_blocks):
    return sp.hstack([sp.csr_matrix(A) for A in A_blocks]).tocsr()


def _solve_kkt(H, C, rhs, dense):
    m = C.shape[0]
    if dense:
        Hd = H.toarray()
        if m == 0:
            return la.solve(Hd, rhs, assume_a="pos", check_finite=False)
        Cd = C.toarray()
        K = np.block([[Hd, Cd.T], [Cd, np.zeros((m, m))]])
        return la.solve(K, np.r_[rhs, np.zeros(m)], assume_a="sym", check_finite=False)
    K = sp.bmat([[H, C.T], [C, None]], format="csc") if m else H.tocsc()
    return splu(K).solve(np.r_[rhs, np.zeros(m)])


def aladin_coordination_qp(packs, chis, lam, rho, A_blocks, b=None):
    """Solve the coordination QP as one symmetric KKT system.

    Returns the per-region steps, the multipliers of the linearized local
    constraints, and the consensus multiplier ``lam + rho (A (chi + dchi) - b)``.
    """
    A = _stack_A(A_blocks)
    sizes = [len(c) for c in chis]
    offs = np.r_[0, np.cumsum(sizes)]
    n = int(offs[-1])
    chi = np.concatenate(chis)
    b = np.zeros(A.shape[0]) if b is None else np.asarray(b, float)
    lam = np.asarray(lam, float)
    viol = A @ chi - b
    grad = np.concatenate([p.grad for p in packs])
    rhs = -(grad + A.T @ lam + rho * (A.T @ viol))
    C = sp.block_diag([sp.csr_matrix(p.jac) for p in packs]).tocsr()
    Bblk = sp.block_diag([sp.csr_matrix(p.B) for p in packs]).tocsr()
    H = Bblk + rho * (A.T @ A)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", la.LinAlgWarning)
            sol = _solve_kkt(H, C, rhs, n + C.shape[0] <= SPARSE_LIMIT)
    except (la.LinAlgError, RuntimeError) as exc:
        raise NumericalError(f"coordination QP is singular: {exc}") from None
    if not np.all(np.isfinite(sol)):
        raise NumericalError("coordination QP produced a non-finite step")
    step = sol[:n]
    steps = [step[offs[i]:offs[i + 1]] for i in range(len(chis))]
    lam_qp = lam + rho * (viol + A @ step)
    return steps, sol[n:], lam_qp


def aladin_update(chis, steps, lam, rho, A_blocks, b=None):
    """zeta_i = chi_i + dchi_i and lam + rho (sum_i A_i chi_i - b)."""
    zeta = [c + d for c, d in zip(chis, steps)]
    viol = sum(A @ c for A, c in zip(A_blocks, chis))
    if b is not None:
        viol = viol - b
    return zeta, lam + rho * viol


def aladin_solve(problem: DistProblem, cfg: AladinConfig | None = None, record_time: bool = True,
                 callback=None) -> SolveResult:
    """Run ALADIN until the pf, spec and consensus norms are all within ``cfg.tol``.

    ``callback(k, chis, zeta, lam)`` is called after every full iteration.
    """
    cfg = cfg or AladinConfig()
    form = problem.formulation
    if cfg.hessian == GAUSS_NEWTON and form != LEAST_SQUARES:
        raise ValueError("Gauss-Newton Hessian requires the least-squares formulation")
    regions, A_blocks = problem.regions, problem.A
    nreg = len(regions)
    zeta = [np.array(z, float) for z in (cfg.zeta0 or problem.initial_states())]
    lam = np.full(problem.n_consensus, cfg.lam0)
    b = None if cfg.b is None else np.asarray(cfg.b, float)
    hess = [HessianApprox(cfg.hessian) for _ in regions]
    gammas = [None] * nreg
    trace = IterationTrace(meta={
        "method": "aladin", "formulation": form, "hessian": cfg.hessian, "rho": cfg.rho, "nu": cfg.nu,
        "tol": cfg.tol, "max_iter": cfg.max_iter, "lam0": cfg.lam0, "dual_update": cfg.dual_update,
    })
    chis = zeta
    status, message = MAX_ITER, ""

    def local(i):
        obj = LocalObjective.aladin(regions[i], form, A_blocks[i], lam, cfg.nu, zeta[i],
                                    None if cfg.sigma is None else cfg.sigma[i])
        t0 = time.perf_counter()
        kw = {"gamma_start": gammas[i]} if form == FEASIBILITY else {}
        res = solve_local(obj, zeta[i], cfg.inner_tol, **kw)
        return res, time.perf_counter() - t0

    for k in range(1, cfg.max_iter + 1):
        try:
            results = map_regions(local, list(range(nreg)))
        except LocalSolveError as exc:
            status, message = LOCAL_FAILURE, str(exc)
            break
        chis = [r.chi for r, _ in results]
        times = [t if record_time else 0.0 for _, t in results]
        norms, cons = region_norms(problem, chis)
        if b is not None:
            cons = inf(problem.consensus_residual(chis) - b)

        def sensitivities(i):
            res = results[i][0]
            reg = regions[i]
            gammas[i] = res.gamma
            if form == LEAST_SQUARES:
                grad = 2.0 * res.J.T @ res.r
                jac = np.zeros((0, reg.n_state))
            else:
                grad = np.zeros(reg.n_state)
                jac = res.J
            h = hess[i]
            # quasi-Newton pairs come from successive outer iterates
            h.observe(res.chi, lagrangian_gradient(reg, form, res.chi, res.gamma))
            B = h.compute(reg, form, res.chi, res.gamma, res.J)
            return SensitivityPack(grad, B, jac)

        done = all(max(n[0], n[1]) <= cfg.tol for n in norms) and cons <= cfg.tol
        if done:
            for i, (pf, spec, c) in enumerate(norms):
                trace.add(k, i + 1, pf, spec, c, 0.0, 0.0, times[i])
            trace.add(k, GLOBAL, max(n[0] for n in norms), max(n[1] for n in norms), cons, 0.0, 0.0, sum(times))
            status = CONVERGED
            break
        packs = map_regions(sensitivities, list(range(nreg)))
        try:
            steps, _, lam_qp = aladin_coordination_qp(packs, chis, lam, cfg.rho, A_blocks, b)
        except NumericalError as exc:
            status, message = NUMERICAL, str(exc)
            break
        zeta, lam_local = aladin_update(chis, steps, lam, cfg.rho, A_blocks, b)
        lam_next = lam_qp if cfg.dual_update == "qp" else lam_local
        dual = inf(lam_next - lam)
        for i, (pf, spec, c) in enumerate(norms):
            trace.add(k, i + 1, pf, spec, c, inf(steps[i]), dual, times[i])
        trace.add(k, GLOBAL, max(n[0] for n in norms), max(n[1] for n in norms), cons,
                  max(inf(s) for s in steps), dual, sum(times))
        lam = lam_next
        if callback is not None:
            callback(k, chis, zeta, lam)
        log.info("aladin iter %d: pf %.2e spec %.2e cons %.2e", k, max(n[0] for n in norms),
                 max(n[1] for n in norms), cons)
    return SolveResult(chis, trace, status, trace.iterations, lam, zeta, message)
