"""Newton-Raphson AC power flow in polar coordinates, used as the reference solution."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .casefile import PQ, PV, REF, VA, VM, CaseData
from .errors import ConvergenceError, NumericalError
from .network import build_admittance, bus_specs, dS_dV, injections


@dataclass
class PFSolution:
    bus_ids: np.ndarray
    vm: np.ndarray
    va: np.ndarray  # radians
    p: np.ndarray   # net injection, p.u.
    q: np.ndarray
    iterations: int
    mismatch: float
    history: list[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "bus": self.bus_ids.tolist(), "vm": self.vm.tolist(), "va": self.va.tolist(),
            "p": self.p.tolist(), "q": self.q.tolist(),
            "iterations": self.iterations, "mismatch": self.mismatch,
        }


def solve_newton_raphson(case: CaseData, tol: float = 1e-10, max_iter: int = 30) -> PFSolution:
    """Full Newton power flow. Reactive limits are not enforced.

    Raises ConvergenceError after ``max_iter`` iterations and NumericalError on a
    singular Jacobian or a non-finite iterate.
    """
    Y = build_admittance(case).Y.tocsc()
    types, a, b = bus_specs(case)
    pv = np.flatnonzero(types == PV)
    pq = np.flatnonzero(types == PQ)
    pvpq = np.r_[pv, pq]
    vm = case.bus[:, VM].copy()
    va = np.deg2rad(case.bus[:, VA])
    ref = types == REF
    vm[ref] = a[ref]
    va[ref] = b[ref]
    vm[pv] = b[pv]
    p_set = np.where(types == REF, 0.0, a)
    q_set = np.where(types == PQ, b, 0.0)

    def mismatch(V):
        S = injections(Y, V)
        return np.r_[S.real[pvpq] - p_set[pvpq], S.imag[pq] - q_set[pq]]

    V = vm * np.exp(1j * va)
    F = mismatch(V)
    norm = float(np.max(np.abs(F), initial=0.0))
    history = [norm]
    it = 0
    while norm > tol:
        if it >= max_iter:
            raise ConvergenceError(f"Newton-Raphson did not converge in {max_iter} iterations (mismatch {norm:.3e})",
                                   iterations=it, residual=norm)
        dSa, dSv = dS_dV(Y, V, dense=False)
        dSa, dSv = sp.csr_matrix(dSa), sp.csr_matrix(dSv)
        J = sp.vstack([
            sp.hstack([dSa[pvpq][:, pvpq].real, dSv[pvpq][:, pq].real]),
            sp.hstack([dSa[pq][:, pvpq].imag, dSv[pq][:, pq].imag]),
        ]).tocsc()
        try:
            dx = -splu(J).solve(F)
        except RuntimeError as exc:
            raise NumericalError(f"singular power-flow Jacobian: {exc}") from None
        if not np.all(np.isfinite(dx)):
            raise NumericalError("non-finite Newton step")
        va[pvpq] += dx[: len(pvpq)]
        vm[pq] += dx[len(pvpq):]
        V = vm * np.exp(1j * va)
        F = mismatch(V)
        norm = float(np.max(np.abs(F), initial=0.0))
        history.append(norm)
        it += 1
        if not np.isfinite(norm):
            raise NumericalError("power-flow iterate became non-finite")
    S = injections(Y, V)
    return PFSolution(case.bus_ids, np.abs(V), np.angle(V), S.real.copy(), S.imag.copy(), it, norm, history)
