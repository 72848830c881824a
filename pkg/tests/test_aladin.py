import numpy as np
import pytest
import scipy.sparse as sp

from gridmesh.aladin import AladinConfig, SensitivityPack, aladin_coordination_qp, aladin_solve, aladin_update
from gridmesh.casefile import bundled_composite
from gridmesh.experiments import reference_states
from gridmesh.localnlp import FINITE_DIFF
from gridmesh.topology import FEASIBILITY, LEAST_SQUARES, build_problem


@pytest.fixture(scope="module")
def problem53():
    return build_problem(*bundled_composite(53), LEAST_SQUARES)


def _tiny():
    B1 = np.array([[2.0, 0.3], [0.3, 1.0]])
    B2 = np.array([[1.5, -0.2], [-0.2, 3.0]])
    A1 = np.array([[1.0, 0.0], [0.0, 1.0]])
    A2 = np.array([[-1.0, 0.0], [0.0, -1.0]])
    C1 = np.array([[1.0, 2.0]])
    packs = [SensitivityPack(np.array([0.4, -1.0]), B1, C1),
             SensitivityPack(np.array([0.1, 0.7]), B2, np.zeros((0, 2)))]
    chis = [np.array([0.2, 0.5]), np.array([-0.1, 0.4])]
    return packs, chis, [A1, A2]


def test_zero_step_at_stationary_point():
    packs, chis, A = _tiny()
    chis = [np.array([0.3, 0.3]), np.array([0.3, 0.3])]
    packs = [SensitivityPack(np.zeros(2), p.B, p.jac) for p in packs]
    steps, _, lam_qp = aladin_coordination_qp(packs, chis, np.zeros(2), 10.0, A)
    assert all(np.max(np.abs(s)) == 0.0 for s in steps)
    assert np.max(np.abs(lam_qp)) == 0.0


def test_qp_matches_dense_oracle():
    packs, chis, A = _tiny()
    rho, lam = 3.0, np.array([0.5, -0.25])
    steps, mu, lam_qp = aladin_coordination_qp(packs, chis, lam, rho, A)
    # oracle: min sum 1/2 d^T B d + g^T d + lam^T A d + rho/2 ||A (chi + d)||^2  s.t. C1 d1 = 0
    Afull = np.hstack(A)
    H = np.zeros((4, 4))
    H[:2, :2], H[2:, 2:] = packs[0].B, packs[1].B
    H += rho * Afull.T @ Afull
    chi = np.r_[chis[0], chis[1]]
    g = np.r_[packs[0].grad, packs[1].grad] + Afull.T @ lam + rho * Afull.T @ (Afull @ chi)
    C = np.zeros((1, 4))
    C[0, :2] = packs[0].jac
    K = np.block([[H, C.T], [C, np.zeros((1, 1))]])
    sol = np.linalg.solve(K, np.r_[-g, 0.0])
    np.testing.assert_allclose(np.r_[steps[0], steps[1]], sol[:4], atol=1e-10)
    np.testing.assert_allclose(mu, sol[4:], atol=1e-10)
    np.testing.assert_allclose(lam_qp, lam + rho * Afull @ (chi + sol[:4]), atol=1e-12)


def test_least_squares_qp_is_one_linear_system():
    packs, chis, A = _tiny()
    packs = [SensitivityPack(p.grad, p.B, np.zeros((0, 2))) for p in packs]
    rho, lam, b = 5.0, np.array([0.1, 0.2]), np.array([0.05, -0.02])
    steps, mu, _ = aladin_coordination_qp(packs, chis, lam, rho, A, b)
    assert mu.size == 0
    Afull = np.hstack(A)
    H = sp.block_diag([p.B for p in packs]).toarray() + rho * Afull.T @ Afull
    chi = np.r_[chis[0], chis[1]]
    rhs = -(np.r_[packs[0].grad, packs[1].grad] + Afull.T @ lam + rho * Afull.T @ (Afull @ chi - b))
    assert np.max(np.abs(H @ np.r_[steps[0], steps[1]] - rhs)) <= 1e-12


def test_update_identities():
    packs, chis, A = _tiny()
    lam = np.array([0.3, -0.4])
    zeta, new = aladin_update(chis, [np.zeros(2), np.zeros(2)], lam, 0.0, A)
    np.testing.assert_array_equal(new, lam)
    np.testing.assert_array_equal(zeta[0], chis[0])
    b = A[0] @ chis[0] + A[1] @ chis[1]
    _, same = aladin_update(chis, [np.zeros(2)] * 2, lam, 4.0, A, b)
    np.testing.assert_array_equal(same, lam)
    rng = np.random.default_rng(0)
    steps = [rng.standard_normal(2) for _ in chis]
    zeta, new = aladin_update(chis, steps, lam, 4.0, A)
    np.testing.assert_array_equal(new - lam, 4.0 * (A[0] @ chis[0] + A[1] @ chis[1]))
    np.testing.assert_array_equal(zeta[1], chis[1] + steps[1])


@pytest.mark.parametrize("formulation", [LEAST_SQUARES, FEASIBILITY])
def test_fixed_point(problem53, formulation):
    problem = problem53.with_formulation(formulation)
    ref = reference_states(problem)
    hess = "gauss-newton" if formulation == LEAST_SQUARES else FINITE_DIFF
    cfg = AladinConfig(zeta0=ref, lam0=0.0, tol=1e-9, hessian=hess)
    res = aladin_solve(problem, cfg, record_time=False)
    assert res.converged and res.iterations == 1
    assert res.trace.global_rows()[0].step_inf == 0.0


def test_large_rho_reduces_consensus_violation(problem53):
    seen = []

    def grab(k, chis, zeta, lam):
        seen.append((np.max(np.abs(problem53.consensus_residual(chis))),
                     np.max(np.abs(problem53.consensus_residual(zeta)))))

    aladin_solve(problem53, AladinConfig(rho=1e6, max_iter=1), record_time=False, callback=grab)
    before, after = seen[0]
    assert after < before


def test_gauss_newton_needs_least_squares(problem53):
    with pytest.raises(ValueError):
        aladin_solve(problem53.with_formulation(FEASIBILITY), AladinConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        AladinConfig(rho=-1.0)
    with pytest.raises(ValueError):
        AladinConfig(dual_update="other")
    with pytest.raises(ValueError):
        AladinConfig(sigma=[np.array([[1.0, 2.0], [2.0, 1.0]])])


def test_trace_meta(problem53):
    res = aladin_solve(problem53, AladinConfig(max_iter=2), record_time=False)
    assert res.trace.meta["method"] == "aladin"
    assert res.trace.meta["hessian"] == "gauss-newton"
    assert res.iterations == 2
