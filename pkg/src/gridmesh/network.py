"""Bus admittance matrices and per-region power-flow residuals with analytic derivatives.

A region's stacked state is a flat vector::

    chi = [theta_core, v_core, p_core, q_core, theta_copy, v_copy]

with angles in radians and powers as net injections in p.u. The residual of a
region is ``[pf_p, pf_q, spec_1, spec_2]`` (``4 * n_core`` entries).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .casefile import (
    BR_B, BR_R, BR_STATUS, BR_X, BS, BUS_I, BUS_TYPE, F_BUS, GEN_BUS, GEN_STATUS,
    GS, PD, PG, PQ, PV, QD, QG, REF, SHIFT, T_BUS, TAP, VA, VG, VM, CaseData,
    CaseValidationError,
)

DENSE_LIMIT = 2000


@dataclass(frozen=True)
class Admittance:
    Y: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def G(self):
        return self.Y.real

    @property
    def B(self):
        return self.Y.imag


def branch_primitives(r, x, b, tap, shift_deg):
    """Two-port admittances (Yff, Yft, Ytf, Ytt) of the standard pi branch model."""
    r, x, b = np.asarray(r, float), np.asarray(x, float), np.asarray(b, float)
    if np.any((r == 0) & (x == 0)):
        raise CaseValidationError("branch with r = x = 0")
    tap = np.where(np.asarray(tap, float) == 0, 1.0, tap)
    ys = 1.0 / (r + 1j * x)
    t = tap * np.exp(1j * np.deg2rad(shift_deg))
    ytt = ys + 0.5j * b
    yff = ytt / (t * np.conj(t))
    yft = -ys / np.conj(t)
    ytf = -ys / t
    return yff, yft, ytf, ytt


def assemble_ybus(n, f, t, r, x, b, tap, shift, shunt=None) -> sp.csr_matrix:
    """Assemble Y from branch endpoint positions ``f``, ``t`` and per-bus shunts (p.u.)."""
    f, t = np.asarray(f, int), np.asarray(t, int)
    yff, yft, ytf, ytt = branch_primitives(r, x, b, tap, shift)
    rows = np.concatenate([f, f, t, t])
    cols = np.concatenate([f, t, f, t])
    vals = np.concatenate([yff, yft, ytf, ytt])
    Y = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    if shunt is not None:
        Y = Y + sp.diags(np.asarray(shunt, complex))
    return sp.csr_matrix(Y)


def build_admittance(case: CaseData) -> Admittance:
    idx = case.bus_index()
    br = case.branch[case.branch[:, BR_STATUS] > 0]
    f = [idx[int(i)] for i in br[:, F_BUS]]
    t = [idx[int(i)] for i in br[:, T_BUS]]
    shunt = (case.bus[:, GS] + 1j * case.bus[:, BS]) / case.base_mva
    Y = assemble_ybus(case.n_bus, f, t, br[:, BR_R], br[:, BR_X], br[:, BR_B], br[:, TAP], br[:, SHIFT], shunt)
    return Admittance(Y)


@dataclass(frozen=True)
class CopyBus:
    owner: int        # 0-based region that owns the bus as a core bus
    owner_pos: int    # position of the bus among the owner's core buses
    bus_id: int       # global (merged) bus id


@dataclass(eq=False)
class RegionModel:
    """One region: core buses, copy buses, admittance over both, and bus specifications.

    ``spec_type`` holds PQ/PV/REF codes per core bus; ``spec_a``/``spec_b`` the two
    fixed values (REF: v, theta; PQ: p, q; PV: p, v) in p.u. and radians.
    """

    index: int
    core_ids: np.ndarray
    copies: tuple[CopyBus, ...]
    Y: sp.csr_matrix
    spec_type: np.ndarray
    spec_a: np.ndarray
    spec_b: np.ndarray
    x0: np.ndarray
    local_ids: np.ndarray | None = None
    case: CaseData | None = None

    def __post_init__(self):
        self.core_ids = np.asarray(self.core_ids, int)
        nc, ncp = self.n_core, self.n_copy
        self._ydense = self.Y.toarray() if self.dense else None
        # column positions of theta and v for all region buses (core then copy)
        self.theta_cols = np.r_[np.arange(nc), 4 * nc + np.arange(ncp)]
        self.v_cols = np.r_[nc + np.arange(nc), 4 * nc + ncp + np.arange(ncp)]
        t = self.spec_type
        # column selected by each spec row
        first = np.where(t == REF, nc + np.arange(nc), 2 * nc + np.arange(nc))
        second = np.where(t == REF, np.arange(nc), np.where(t == PQ, 3 * nc + np.arange(nc), nc + np.arange(nc)))
        self.spec_cols = np.r_[first, second]
        self.spec_vals = np.r_[self.spec_a, self.spec_b]

    @property
    def n_core(self) -> int:
        return len(self.core_ids)

    @property
    def n_copy(self) -> int:
        return len(self.copies)

    @property
    def n_state(self) -> int:
        return 4 * self.n_core + 2 * self.n_copy

    @property
    def n_residual(self) -> int:
        return 4 * self.n_core

    @property
    def dof_deficit(self) -> int:
        return self.n_state - self.n_residual

    @property
    def dense(self) -> bool:
        return self.n_state <= DENSE_LIMIT

    def split(self, chi):
        nc, ncp = self.n_core, self.n_copy
        chi = np.asarray(chi, float)
        return (chi[:nc], chi[nc:2 * nc], chi[2 * nc:3 * nc], chi[3 * nc:4 * nc],
                chi[4 * nc:4 * nc + ncp], chi[4 * nc + ncp:])

    def stack(self, theta, v, p, q, theta_copy=(), v_copy=()):
        return np.concatenate([theta, v, p, q, theta_copy, v_copy]).astype(float)

    def voltages(self, chi):
        """Complex voltages of all region buses (core first, then copy)."""
        self._check(chi)
        return chi[self.v_cols] * np.exp(1j * chi[self.theta_cols])

    def _check(self, chi):
        if np.shape(chi) != (self.n_state,):
            raise ValueError(f"region {self.index}: state has shape {np.shape(chi)}, expected ({self.n_state},)")

    def _ymat(self):
        return self._ydense if self.dense else self.Y


def injections(Y, V):
    """Complex power injections S = V * conj(Y V)."""
    return V * np.conj(Y @ V)


def pf_residual(model: RegionModel, chi) -> np.ndarray:
    """Computed injection minus state injection at each core bus, ``[P; Q]``."""
    chi = np.asarray(chi, float)
    V = model.voltages(chi)
    S = injections(model._ymat(), V)[: model.n_core]
    _, _, p, q, _, _ = model.split(chi)
    return np.r_[S.real - p, S.imag - q]


def bus_spec_residual(model: RegionModel, chi) -> np.ndarray:
    chi = np.asarray(chi, float)
    model._check(chi)
    return chi[model.spec_cols] - model.spec_vals


def residual(model: RegionModel, chi) -> np.ndarray:
    return np.r_[pf_residual(model, chi), bus_spec_residual(model, chi)]


def dS_dV(Y, V, dense: bool, vm=None):
    """Derivatives of S = V conj(Y V) w.r.t. voltage angle and magnitude (polar).

    ``vm`` is the signed magnitude state; it defaults to ``|V|``. Passing it keeps
    the derivatives correct for iterates with negative magnitudes.
    """
    I = Y @ V
    Vn = V / (np.abs(V) if vm is None else vm)
    if dense:
        dS_dVm = V[:, None] * np.conj(Y * Vn[None, :]) + np.diag(np.conj(I) * Vn)
        dS_dVa = 1j * V[:, None] * np.conj(np.diag(I) - Y * V[None, :])
    else:
        dV, dVn = sp.diags(V), sp.diags(Vn)
        dS_dVm = dV @ np.conj(Y @ dVn) + sp.diags(np.conj(I) * Vn)
        dS_dVa = 1j * dV @ np.conj(sp.diags(I) - Y @ dV)
    return dS_dVa, dS_dVm


def pf_jacobian(model: RegionModel, chi):
    """Jacobian of :func:`residual` w.r.t. the full region state.

    Dense ``ndarray`` for regions up to ``DENSE_LIMIT`` state variables, CSR beyond.
    """
    chi = np.asarray(chi, float)
    nc, ns = model.n_core, model.n_state
    V = model.voltages(chi)
    dSa, dSv = dS_dV(model._ymat(), V, model.dense, chi[model.v_cols])
    if model.dense:
        J = np.zeros((4 * nc, ns))
        J[:nc, model.theta_cols] = dSa[:nc].real
        J[:nc, model.v_cols] = dSv[:nc].real
        J[nc:2 * nc, model.theta_cols] = dSa[:nc].imag
        J[nc:2 * nc, model.v_cols] = dSv[:nc].imag
        J[np.arange(nc), 2 * nc + np.arange(nc)] = -1.0
        J[nc + np.arange(nc), 3 * nc + np.arange(nc)] = -1.0
        J[2 * nc + np.arange(2 * nc), model.spec_cols] = 1.0
        return J
    dSa, dSv = sp.csr_matrix(dSa[:nc]), sp.csr_matrix(dSv[:nc])
    perm = np.r_[model.theta_cols, model.v_cols]
    top = sp.vstack([sp.hstack([dSa.real, dSv.real]), sp.hstack([dSa.imag, dSv.imag])]).tocoo()
    eye = np.arange(2 * nc)
    rows = np.r_[top.row, eye, 2 * nc + eye]
    cols = np.r_[perm[top.col], 2 * nc + eye, model.spec_cols]
    vals = np.r_[top.data, -np.ones(2 * nc), np.ones(2 * nc)]
    return sp.csr_matrix((vals, (rows, cols)), shape=(4 * nc, ns))


def _d2S(Y, V, lam, vm):
    """Second derivatives of lam^T S w.r.t. (angle, magnitude), dense, complex."""
    Y = Y.toarray() if sp.issparse(Y) else Y
    I = Y @ V
    A = np.diag(lam * V)
    B = Y * V[None, :]
    C = A @ np.conj(B)
    D = Y.conj().T * V[None, :]
    E = np.diag(np.conj(V)) @ (D * lam[None, :] - np.diag(D @ lam))
    F = C - A * np.conj(I)[None, :]
    Gm = 1.0 / vm
    Gaa = E + F
    Gva = 1j * Gm[:, None] * (E - F)
    Gvv = Gm[:, None] * (C + C.T) * Gm[None, :]
    return Gaa, Gva, Gvv


def pf_hessian(model: RegionModel, chi, mult) -> np.ndarray:
    """Hessian of ``mult @ residual(model, chi)`` w.r.t. chi (only power-flow rows are nonlinear)."""
    chi = np.asarray(chi, float)
    nc, n = model.n_core, model.n_core + model.n_copy
    mu = np.zeros(n, complex)
    eta = np.zeros(n, complex)
    mu[:nc] = mult[:nc]
    eta[:nc] = mult[nc:2 * nc]
    V = model.voltages(chi)
    Y = model._ymat()
    vm = chi[model.v_cols]
    Paa, Pva, Pvv = _d2S(Y, V, mu, vm)
    Qaa, Qva, Qvv = _d2S(Y, V, eta, vm)
    haa = Paa.real + Qaa.imag
    hva = Pva.real + Qva.imag
    hvv = Pvv.real + Qvv.imag
    H = np.zeros((model.n_state, model.n_state))
    tc, vc = model.theta_cols, model.v_cols
    H[np.ix_(tc, tc)] = haa
    H[np.ix_(vc, tc)] = hva
    H[np.ix_(tc, vc)] = hva.T
    H[np.ix_(vc, vc)] = hvv
    return 0.5 * (H + H.T)


def region_from_case(case: CaseData, index: int = 0) -> RegionModel:
    """Single-region model of a whole case (no copy buses)."""
    specs = bus_specs(case)
    Y = build_admittance(case).Y
    return RegionModel(index, case.bus_ids, (), Y, *specs, initial_state(case))


def bus_specs(case: CaseData):
    """Bus types and the two fixed values per bus, in p.u./rad."""
    bus = case.bus
    pg, qg, vg = gen_totals(case)
    p = (pg - bus[:, PD]) / case.base_mva
    q = (qg - bus[:, QD]) / case.base_mva
    t = bus[:, BUS_TYPE].astype(int)
    vset = np.where(np.isnan(vg), bus[:, VM], vg)
    va = np.deg2rad(bus[:, VA])
    a = np.where(t == REF, vset, p)
    b = np.where(t == REF, va, np.where(t == PQ, q, vset))
    return t, a, b


def gen_totals(case: CaseData):
    """Per-bus sums of active generator Pg, Qg (MW/MVAr) and the voltage set-point
    of the first active generator (NaN where none)."""
    idx = case.bus_index()
    n = case.n_bus
    pg, qg, vg = np.zeros(n), np.zeros(n), np.full(n, np.nan)
    for row in case.gen[case.gen[:, GEN_STATUS] > 0]:
        k = idx[int(row[GEN_BUS])]
        pg[k] += row[PG]
        qg[k] += row[QG]
        if np.isnan(vg[k]):
            vg[k] = row[VG]
    return pg, qg, vg


def initial_state(case: CaseData) -> np.ndarray:
    """Case-file start: angles/magnitudes from the bus table, net injections gen - load."""
    pg, qg, _ = gen_totals(case)
    bus = case.bus
    return np.r_[np.deg2rad(bus[:, VA]), bus[:, VM],
                 (pg - bus[:, PD]) / case.base_mva, (qg - bus[:, QD]) / case.base_mva]
