import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp

from gridmesh.casefile import bundled_composite, parse_matpower_case
from gridmesh.centralized import solve_newton_raphson
from gridmesh.errors import LocalSolveError
from gridmesh.experiments import reference_states
from gridmesh.localnlp import (BFGS, DELTA_MIN, FINITE_DIFF, GAUSS_NEWTON, HESSIAN_METHODS, LBFGS, HessianApprox,
                               LocalObjective, bfgs_update, make_pd, solve_local, solve_local_feasibility,
                               solve_local_least_squares)
from gridmesh.network import pf_jacobian, region_from_case, residual
from gridmesh.topology import FEASIBILITY, LEAST_SQUARES, build_problem

from conftest import TWO_BUS

LOADED = TWO_BUS.replace("2   1   0   0   0   0", "2   1   49.97917   -1.24974   0   0")


def _alone(model, formulation, nu=0.0, zeta=None):
    A = sp.csr_matrix((0, model.n_state))
    zeta = model.x0 if zeta is None else zeta
    return LocalObjective.aladin(model, formulation, A, np.zeros(0), nu, zeta)


@pytest.fixture(scope="module")
def problem53():
    return build_problem(*bundled_composite(53))


def test_least_squares_stationary_start():
    case = parse_matpower_case(LOADED)
    sol = solve_newton_raphson(case)
    model = region_from_case(case)
    chi = model.stack(sol.va, sol.vm, sol.p, sol.q)
    res = solve_local_least_squares(_alone(model, LEAST_SQUARES), chi)
    assert res.iterations <= 1
    np.testing.assert_allclose(res.chi, chi, atol=1e-10)


def test_least_squares_from_flat_start_matches_newton():
    case = parse_matpower_case(LOADED)
    sol = solve_newton_raphson(case)
    model = region_from_case(case)
    res = solve_local_least_squares(_alone(model, LEAST_SQUARES), model.x0)
    th, v, p, q, _, _ = model.split(res.chi)
    np.testing.assert_allclose(v, sol.vm, atol=1e-8)
    np.testing.assert_allclose(th, sol.va, atol=1e-8)


def test_large_nu_stays_near_zeta(problem53):
    reg = problem53.regions[1]
    ref = reference_states(problem53)[1]
    zeta = ref + 0.01 * np.random.default_rng(0).standard_normal(reg.n_state)
    dist = []
    for nu in (1e2, 1e4, 1e6):
        res = solve_local(_alone(reg, LEAST_SQUARES, nu, zeta), zeta)
        dist.append(np.linalg.norm(res.chi - zeta))
    assert dist[0] > dist[1] > dist[2]
    assert dist[2] < 0.05 * dist[0]


def test_least_squares_objective_monotone(problem53):
    reg = problem53.regions[2]
    zeta = reg.x0 + 0.05 * np.random.default_rng(1).standard_normal(reg.n_state)
    A = problem53.A[2]
    obj = LocalObjective.aladin(reg, LEAST_SQUARES, A, np.full(A.shape[0], 0.3), 10.0, zeta)
    res = solve_local_least_squares(obj, reg.x0)
    values = [obj.value(c) for c, _ in res.path]
    assert all(b <= a + 1e-12 * max(1.0, abs(a)) for a, b in zip(values, values[1:]))


def test_feasibility_zero_augmentation_feasible_start(problem53):
    reg = problem53.regions[0]
    ref = reference_states(problem53)[0]
    obj = LocalObjective.admm(reg, FEASIBILITY, problem53.A[0], np.zeros(problem53.n_consensus), 0.0, ref)
    res = solve_local_feasibility(obj, ref)
    assert np.max(np.abs(residual(reg, res.chi))) <= 1e-12
    assert res.kkt <= 1e-12


def test_feasibility_admm_step_at_solution(problem53):
    reg = problem53.regions[1]
    ref = reference_states(problem53)[1]
    obj = LocalObjective.admm(reg, FEASIBILITY, problem53.A[1], np.zeros(problem53.n_consensus), 1e3, ref)
    res = solve_local_feasibility(obj, ref)
    np.testing.assert_allclose(res.chi, ref, atol=1e-10)


def test_feasibility_projected_gradient(problem53):
    reg = problem53.regions[2]
    ref = reference_states(problem53)[2]
    zeta = ref + 0.01 * np.random.default_rng(2).standard_normal(reg.n_state)
    obj = LocalObjective.aladin(reg, FEASIBILITY, problem53.A[2], np.zeros(problem53.n_consensus), 1e2, zeta)
    res = solve_local_feasibility(obj, zeta)
    assert np.max(np.abs(residual(reg, res.chi))) <= 1e-10
    Z = la.null_space(pf_jacobian(reg, res.chi))
    assert Z.shape[1] == reg.dof_deficit
    assert np.max(np.abs(Z.T @ obj.augmentation_grad(res.chi))) <= 1e-8


def test_wrong_formulation_rejected(problem53):
    reg = problem53.regions[0]
    with pytest.raises(ValueError):
        solve_local_feasibility(_alone(reg, LEAST_SQUARES), reg.x0)
    with pytest.raises(ValueError):
        solve_local_least_squares(_alone(reg, FEASIBILITY), reg.x0)


def test_failure_raises(problem53):
    reg = problem53.regions[0]
    with pytest.raises(LocalSolveError):
        solve_local_least_squares(_alone(reg, LEAST_SQUARES), reg.x0, max_iter=1)


def test_gauss_newton_zero_jacobian(problem53):
    reg = problem53.regions[0]
    B = HessianApprox(GAUSS_NEWTON).compute(reg, LEAST_SQUARES, reg.x0, J=np.zeros((reg.n_residual, reg.n_state)))
    np.testing.assert_allclose(B, DELTA_MIN * np.eye(reg.n_state), rtol=1e-9)


def test_gauss_newton_needs_least_squares(problem53):
    reg = problem53.regions[0]
    with pytest.raises(ValueError):
        HessianApprox(GAUSS_NEWTON).compute(reg, FEASIBILITY, reg.x0)


def test_finite_difference_hessian_at_zero_residual(problem53):
    reg = problem53.regions[0]
    ref = reference_states(problem53)[0]
    B_fd = HessianApprox(FINITE_DIFF).compute(reg, LEAST_SQUARES, ref)
    J = pf_jacobian(reg, ref)
    B_gn = 2 * J.T @ J
    assert np.linalg.norm(B_fd - B_gn, 2) / np.linalg.norm(B_gn, 2) <= 1e-3


def test_bfgs_recovers_quadratic():
    Q = np.array([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]])
    x = np.array([1.0, -2.0, 0.5])
    B = np.eye(3)
    for _ in range(3):
        g = Q @ x
        d = -np.linalg.solve(B, g)
        alpha = -(g @ d) / (d @ Q @ d)
        s = alpha * d
        B = bfgs_update(B, s, Q @ s)
        x = x + s
    np.testing.assert_allclose(B, Q, atol=1e-10)


def test_bfgs_skips_bad_curvature():
    B = np.eye(2)
    assert bfgs_update(B, np.array([1.0, 0.0]), np.array([-1.0, 0.0])) is B


@pytest.mark.parametrize("method", HESSIAN_METHODS)
def test_outputs_symmetric_positive_definite(problem53, method):
    reg = problem53.regions[1]
    rng = np.random.default_rng(4)
    h = HessianApprox(method)
    chi = reg.x0 + 0.1 * rng.standard_normal(reg.n_state)
    from gridmesh.localnlp import lagrangian_gradient
    for _ in range(3):
        h.observe(chi, lagrangian_gradient(reg, LEAST_SQUARES, chi))
        chi = chi + 0.01 * rng.standard_normal(reg.n_state)
    B = h.compute(reg, LEAST_SQUARES, chi)
    np.testing.assert_allclose(B, B.T, atol=1e-12)
    assert np.linalg.eigvalsh(B)[0] >= DELTA_MIN * (1 - 1e-6)


def test_make_pd_floor():
    B = make_pd(np.diag([-3.0, 0.0, 5.0]))
    assert np.linalg.eigvalsh(B)[0] == pytest.approx(DELTA_MIN)


def test_unknown_method():
    with pytest.raises(ValueError):
        HessianApprox("newton")
