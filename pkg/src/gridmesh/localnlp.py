"""Regional subproblems and Hessian approximations.

Every local problem has the form::

    min  f(chi) + c @ chi + 0.5 (chi - zeta)^T W (chi - zeta)     [s.t. g(chi) = 0]

where ``g`` stacks the power-flow and bus-specification residuals of the region.
In least-squares mode ``f = ||g||^2`` and there are no constraints; in
feasibility mode ``f = 0`` and ``g = 0`` is imposed. ADMM uses ``c = A^T lam``
and ``W = rho A^T A``, ALADIN uses ``W = nu Sigma``.
"""

from __future__ import annotations

import logging
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .errors import LocalSolveError
from .network import RegionModel, pf_hessian, pf_jacobian, residual
from .topology import FEASIBILITY, LEAST_SQUARES

log = logging.getLogger(__name__)

FINITE_DIFF = "finite-diff"
BFGS = "bfgs"
LBFGS = "lbfgs"
GAUSS_NEWTON = "gauss-newton"
HESSIAN_METHODS = (FINITE_DIFF, BFGS, LBFGS, GAUSS_NEWTON)

DELTA_MIN = 1e-6


def _dense(M):
    return M.toarray() if sp.issparse(M) else np.asarray(M)


@dataclass(eq=False)
class LocalObjective:
    model: RegionModel
    formulation: str
    c: np.ndarray
    W: np.ndarray
    zeta: np.ndarray

    @classmethod
    def admm(cls, model, formulation, A, lam, rho, zeta):
        A = sp.csr_matrix(A)
        return cls(model, formulation, A.T @ lam, _dense(rho * (A.T @ A)), np.asarray(zeta, float))

    @classmethod
    def aladin(cls, model, formulation, A, lam, nu, zeta, sigma=None):
        n = model.n_state
        S = np.eye(n) if sigma is None else _dense(sigma)
        return cls(model, formulation, sp.csr_matrix(A).T @ lam, nu * S, np.asarray(zeta, float))

    def augmentation(self, chi) -> float:
        d = chi - self.zeta
        return float(self.c @ chi + 0.5 * d @ self.W @ d)

    def augmentation_grad(self, chi) -> np.ndarray:
        return self.c + self.W @ (chi - self.zeta)

    def change(self, chi, step, r, r_new) -> float:
        """``value(chi + step) - value(chi)`` evaluated without cancellation against the value itself."""
        d = chi - self.zeta
        v = float(self.c @ step + step @ self.W @ (d + 0.5 * step))
        if self.formulation == LEAST_SQUARES:
            v += float((r_new - r) @ (r_new + r))
        return v

    def value(self, chi, r=None) -> float:
        v = self.augmentation(chi)
        if self.formulation == LEAST_SQUARES:
            r = residual(self.model, chi) if r is None else r
            v += float(r @ r)
        return v


@dataclass
class LocalResult:
    chi: np.ndarray
    iterations: int
    kkt: float
    converged: bool
    r: np.ndarray
    J: np.ndarray
    gamma: np.ndarray | None = None
    path: list = field(default_factory=list)  # (chi, grad f) pairs of accepted iterates


def _lm_solve(M, rhs):
    try:
        c = la.cho_factor(M, check_finite=False)
        return la.cho_solve(c, rhs, check_finite=False)
    except la.LinAlgError:
        return None


def solve_local_least_squares(obj: LocalObjective, chi_start, tol: float = 1e-12, max_iter: int = 200,
                              mu0: float = 1e-4, raise_on_failure: bool = True) -> LocalResult:
    """Levenberg-damped Gauss-Newton on ``||g||^2`` plus the exact quadratic augmentation.

    When Gauss-Newton settles into a slow linear rate the residual curvature term
    is added to the model Hessian; damping keeps every step a descent step.

    Accepted steps never increase the objective. Stops when the gradient's
    infinity norm is below ``tol`` relative to the size of its two parts, or when
    progress has stalled at rounding level with the gradient within ``sqrt(tol)``.
    """
    if obj.formulation != LEAST_SQUARES:
        raise ValueError("solve_local_least_squares needs the least-squares formulation")
    model = obj.model
    chi = np.array(chi_start, float)
    r = residual(model, chi)
    J = _dense(pf_jacobian(model, chi))
    mu = mu0
    path = []
    it = 0
    stalls = slow = 0
    best = prev = np.inf
    I = np.eye(model.n_state)
    while True:
        g_ls = 2.0 * J.T @ r
        g_aug = obj.augmentation_grad(chi)
        grad = g_ls + g_aug
        gnorm = float(np.max(np.abs(grad)))
        # the two gradient parts cancel at the solution, so measure against their size
        scale = max(1.0, float(np.max(np.abs(g_ls))), float(np.max(np.abs(g_aug))))
        path.append((chi.copy(), g_ls))
        if gnorm <= tol * scale:
            return LocalResult(chi, it, gnorm, True, r, J, None, path)
        stalls = stalls + 1 if gnorm > 0.5 * best else 0
        best = min(best, gnorm)
        if stalls >= 3 and gnorm <= np.sqrt(tol) * scale:
            return LocalResult(chi, it, gnorm, True, r, J, None, path)
        if it >= max_iter:
            break
        slow = slow + 1 if gnorm > 0.25 * prev else 0
        prev = gnorm
        H = 2.0 * J.T @ J + obj.W
        if slow >= 2:
            # linear Gauss-Newton rate on a nonzero-residual minimum: add the second-order term
            H = H + pf_hessian(model, chi, 2.0 * r)
        accepted = False
        while mu <= 1e12:
            step = _lm_solve(H + mu * I, -grad)
            if step is None:
                mu *= 10
                continue
            trial = chi + step
            r_t = residual(model, trial)
            dF = obj.change(chi, step, r, r_t)
            if np.isfinite(dF) and dF <= 0.0:
                accepted = True
                break
            mu *= 10
        if not accepted or not np.any(trial != chi):
            if gnorm <= np.sqrt(tol) * scale:
                return LocalResult(chi, it, gnorm, True, r, J, None, path)
            break
        chi, r = trial, r_t
        J = _dense(pf_jacobian(model, chi))
        mu = max(mu / 10, 1e-12)
        it += 1
    msg = f"region {model.index}: least-squares solve stopped at gradient norm {gnorm:.3e} after {it} iterations"
    if raise_on_failure:
        raise LocalSolveError(msg)
    log.warning(msg)
    return LocalResult(chi, it, gnorm, False, r, J, None, path)


def _inertia_ok(K, n):
    try:
        _, d, _ = la.ldl(K, check_finite=False)
    except (ValueError, la.LinAlgError):
        return False
    ev = np.linalg.eigvalsh(d)
    return int(np.sum(ev > 0)) == n and int(np.sum(ev < 0)) == K.shape[0] - n


def solve_local_feasibility(obj: LocalObjective, chi_start, tol: float = 1e-12, max_iter: int = 100,
                            gamma_start=None, raise_on_failure: bool = True) -> LocalResult:
    """Newton iterations on the KKT system of ``min augmentation s.t. g = 0`` with an
    l1 merit line search and inertia correction of the Lagrangian Hessian."""
    if obj.formulation != FEASIBILITY:
        raise ValueError("solve_local_feasibility needs the feasibility formulation")
    model = obj.model
    n, m = model.n_state, model.n_residual
    chi = np.array(chi_start, float)
    gamma = np.zeros(m) if gamma_start is None else np.array(gamma_start, float)
    g = residual(model, chi)
    J = _dense(pf_jacobian(model, chi))
    path = []
    it = 0
    penalty = 1.0
    delta_prev = 0.0
    stalls = 0
    best = np.inf
    while True:
        grad_phi = obj.augmentation_grad(chi)
        Jg = J.T @ gamma
        stat = grad_phi + Jg
        scale = max(1.0, float(np.max(np.abs(grad_phi))), float(np.max(np.abs(Jg))))
        kkt = float(max(np.max(np.abs(stat)), np.max(np.abs(g))))
        path.append((chi.copy(), Jg))
        if np.max(np.abs(g)) <= tol and np.max(np.abs(stat)) <= tol * scale:
            return LocalResult(chi, it, kkt, True, g, J, gamma, path)
        stalls = stalls + 1 if kkt > 0.5 * best else 0
        best = min(best, kkt)
        if stalls >= 3 and np.max(np.abs(g)) <= np.sqrt(tol) and np.max(np.abs(stat)) <= np.sqrt(tol) * scale:
            return LocalResult(chi, it, kkt, True, g, J, gamma, path)
        if it >= max_iter:
            break
        H = obj.W + pf_hessian(model, chi, gamma)
        K = np.block([[H, J.T], [J, np.zeros((m, m))]])
        delta = 0.0
        if not _inertia_ok(K, n):
            delta = max(1e-8, delta_prev / 3)
            while True:
                K[:n, :n] = H + delta * np.eye(n)
                if _inertia_ok(K, n):
                    break
                delta *= 10
                if delta > 1e12:
                    raise LocalSolveError(f"region {model.index}: cannot correct KKT inertia")
        delta_prev = delta
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", la.LinAlgWarning)
                sol = la.solve(K, -np.r_[grad_phi, g], assume_a="sym", check_finite=False)
        except la.LinAlgError:
            raise LocalSolveError(f"region {model.index}: singular KKT matrix") from None
        if not np.all(np.isfinite(sol)):
            raise LocalSolveError(f"region {model.index}: non-finite KKT step")
        step, gamma_new = sol[:n], sol[n:]
        penalty = max(penalty, 1.1 * float(np.max(np.abs(gamma_new))))
        merit0 = obj.augmentation(chi) + penalty * np.sum(np.abs(g))
        slope = grad_phi @ step - penalty * np.sum(np.abs(g))
        alpha = 1.0
        while True:
            trial = chi + alpha * step
            g_t = residual(model, trial)
            merit = obj.augmentation(trial) + penalty * np.sum(np.abs(g_t))
            if np.isfinite(merit) and merit <= merit0 + 1e-4 * alpha * min(slope, 0.0) + 1e-13 * abs(merit0):
                break
            alpha *= 0.5
            if alpha < 1e-10:
                break
        if alpha < 1e-10:
            if np.max(np.abs(g)) <= np.sqrt(tol) and np.max(np.abs(stat)) <= np.sqrt(tol) * scale:
                return LocalResult(chi, it, kkt, True, g, J, gamma, path)
            break
        chi, g = trial, g_t
        gamma = gamma + alpha * (gamma_new - gamma)
        J = _dense(pf_jacobian(model, chi))
        it += 1
    msg = f"region {model.index}: feasibility solve stopped at KKT residual {kkt:.3e} after {it} iterations"
    if raise_on_failure:
        raise LocalSolveError(msg)
    log.warning(msg)
    return LocalResult(chi, it, kkt, False, g, J, gamma, path)


def solve_local(obj: LocalObjective, chi_start, tol: float = 1e-12, **kw) -> LocalResult:
    if obj.formulation == LEAST_SQUARES:
        return solve_local_least_squares(obj, chi_start, tol, **kw)
    return solve_local_feasibility(obj, chi_start, tol, **kw)


# ----------------------------------------------------------------------------
# Hessian approximations


def make_pd(B, delta_min: float = DELTA_MIN) -> np.ndarray:
    """Symmetrize and shift so the smallest eigenvalue is at least ``delta_min``."""
    B = 0.5 * (B + B.T)
    lmin = float(la.eigvalsh(B, subset_by_index=[0, 0], check_finite=False)[0])
    shift = max(0.0, delta_min - lmin)
    if shift:
        B = B + shift * np.eye(B.shape[0])
    return B


def lagrangian_gradient(model: RegionModel, formulation: str, chi, gamma=None) -> np.ndarray:
    """Gradient of ``f + gamma^T g`` (least squares: ``2 J^T g``; feasibility: ``J^T gamma``)."""
    J = pf_jacobian(model, chi)
    if formulation == LEAST_SQUARES:
        return 2.0 * (J.T @ residual(model, chi))
    return J.T @ (np.zeros(model.n_residual) if gamma is None else gamma)


def bfgs_update(B, s, y):
    """Standard BFGS update; returns ``B`` unchanged when the curvature condition fails."""
    sy = float(s @ y)
    if sy <= 1e-8 * np.linalg.norm(s) * np.linalg.norm(y) or not np.isfinite(sy):
        return B
    Bs = B @ s
    return B - np.outer(Bs, Bs) / float(s @ Bs) + np.outer(y, y) / sy


class HessianApprox:
    """Per-region Hessian approximation with its own state.

    ``FINITE_DIFF`` differences the exact Lagrangian gradient, ``GAUSS_NEWTON``
    uses ``2 J^T J``; the quasi-Newton methods are fed curvature pairs via
    :meth:`observe` and start from a scaled identity.
    """

    def __init__(self, method: str = GAUSS_NEWTON, delta_min: float = DELTA_MIN, memory: int = 10,
                 fd_step: float = 1e-5):
        if method not in HESSIAN_METHODS:
            raise ValueError(f"unknown Hessian method {method!r}; choose from {HESSIAN_METHODS}")
        self.method = method
        self.delta_min = delta_min
        self.fd_step = fd_step
        self.B = None
        self.pairs = deque(maxlen=memory)
        self._last = None

    def observe(self, chi, grad) -> None:
        """Record an iterate and its Lagrangian gradient; consecutive records form (s, y) pairs."""
        if self.method not in (BFGS, LBFGS):
            return
        chi, grad = np.asarray(chi, float), np.asarray(grad, float)
        if self._last is not None:
            s, y = chi - self._last[0], grad - self._last[1]
            if np.any(s):
                if self.method == BFGS:
                    if self.B is None:
                        self.B = self._initial(s, y, len(s))
                    self.B = bfgs_update(self.B, s, y)
                else:
                    if s @ y > 1e-8 * np.linalg.norm(s) * np.linalg.norm(y):
                        self.pairs.append((s, y))
        self._last = (chi.copy(), grad.copy())

    def _initial(self, s, y, n):
        sy = float(s @ y)
        scale = float(y @ y) / sy if sy > 0 else 1.0
        return scale * np.eye(n)

    def compute(self, model: RegionModel, formulation: str, chi, gamma=None, J=None) -> np.ndarray:
        n = model.n_state
        chi = np.asarray(chi, float)
        if self.method == GAUSS_NEWTON:
            if formulation != LEAST_SQUARES:
                raise ValueError("Gauss-Newton Hessian applies to the least-squares formulation only")
            J = _dense(pf_jacobian(model, chi) if J is None else J)
            return make_pd(2.0 * J.T @ J, self.delta_min)
        if self.method == FINITE_DIFF:
            H = np.empty((n, n))
            for j in range(n):
                h = self.fd_step * max(1.0, abs(chi[j]))
                e = np.zeros(n)
                e[j] = h
                H[:, j] = (lagrangian_gradient(model, formulation, chi + e, gamma)
                           - lagrangian_gradient(model, formulation, chi - e, gamma)) / (2 * h)
            return make_pd(H, self.delta_min)
        if self.method == BFGS:
            B = np.eye(n) if self.B is None else self.B
            return make_pd(B, self.delta_min)
        B = np.eye(n)
        if self.pairs:
            s, y = self.pairs[-1]
            B = self._initial(s, y, n)
            for s, y in self.pairs:
                B = bfgs_update(B, s, y)
        return make_pd(B, self.delta_min)


def hessian_approx(h: HessianApprox, model: RegionModel, formulation: str, chi, gamma=None, J=None) -> np.ndarray:
    return h.compute(model, formulation, chi, gamma, J)
