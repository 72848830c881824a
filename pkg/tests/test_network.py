import numpy as np
import pytest
import scipy.sparse as sp

from gridmesh.casefile import PQ, bundled_case, bundled_composite
from gridmesh.centralized import solve_newton_raphson
from gridmesh.experiments import reference_states
from gridmesh.network import (
    assemble_ybus, branch_primitives, build_admittance, bus_spec_residual, pf_hessian, pf_jacobian,
    pf_residual, region_from_case, residual,
)
from gridmesh.topology import build_problem


def _fd_jacobian(model, chi, h=1e-6):
    J = np.empty((model.n_residual, model.n_state))
    for j in range(model.n_state):
        e = np.zeros(model.n_state)
        e[j] = h
        J[:, j] = (residual(model, chi + e) - residual(model, chi - e)) / (2 * h)
    return J


def test_two_bus_admittance(two_bus):
    Y = build_admittance(two_bus).Y.toarray()
    np.testing.assert_allclose(Y, [[-10j, 10j], [10j, -10j]], atol=1e-14)
    np.testing.assert_allclose(build_admittance(two_bus).G.toarray(), 0.0)


def test_empty_network_admittance():
    Y = assemble_ybus(1, [], [], [], [], [], [], [], shunt=[0.0])
    assert Y.shape == (1, 1)
    assert abs(Y.toarray()).max() == 0


def test_tie_self_admittance():
    yff, _, _, ytt = branch_primitives([0.0], [0.00623], [0.0], [0.985], [0.0])
    # frozen: 1 / (0.00623 * 0.985**2)
    assert abs(yff[0]) == pytest.approx(165.43960799, rel=1e-9)
    assert abs(ytt[0]) == pytest.approx(1 / 0.00623, rel=1e-12)


def test_phase_shift_makes_y_asymmetric():
    _, yft, ytf, _ = branch_primitives([0.01], [0.1], [0.0], [1.0], [10.0])
    assert abs(yft[0] - ytf[0]) > 1e-3


def test_flat_start_residual_is_zero(two_bus):
    model = region_from_case(two_bus)
    chi = model.stack([0, 0], [1, 1], [0, 0], [0, 0])
    np.testing.assert_allclose(pf_residual(model, chi), 0.0, atol=1e-14)
    np.testing.assert_allclose(bus_spec_residual(model, chi), 0.0, atol=1e-14)


def test_angle_offset_residual(two_bus):
    model = region_from_case(two_bus)
    chi = model.stack([0, -0.05], [1, 1], [0, 0], [0, 0])
    r = pf_residual(model, chi)
    assert r[1] == pytest.approx(-0.4997917, abs=1e-7)
    assert r[3] == pytest.approx(0.0124974, abs=1e-7)


def test_spec_residual_affine(two_bus):
    case = two_bus.copy()
    case.bus[1, 2] = 90.0
    model = region_from_case(case)
    chi = model.stack([0, 0], [1, 1], [0, -0.8], [0, 0])
    assert model.spec_type[1] == PQ
    # slack row (v, theta) is zero, PQ p row is +0.1
    spec = bus_spec_residual(model, chi)
    assert spec[0] == 0.0 and spec[2] == 0.0
    assert spec[1] == pytest.approx(0.1, abs=1e-14)


def test_pv_spec_from_gen_table():
    model = region_from_case(bundled_case("case9"))
    assert model.spec_a[1] == pytest.approx(1.63)
    assert model.spec_a[2] == pytest.approx(0.85)


def test_solution_residual_small():
    case = bundled_case("case9")
    sol = solve_newton_raphson(case)
    model = region_from_case(case)
    chi = model.stack(sol.va, sol.vm, sol.p, sol.q)
    assert np.max(np.abs(residual(model, chi))) < 1e-10


def test_jacobian_flat_start(two_bus):
    model = region_from_case(two_bus)
    J = pf_jacobian(model, model.stack([0, 0], [1, 1], [0, 0], [0, 0]))
    assert J[1, 1] == pytest.approx(10.0)


def test_jacobian_selector_rows(two_bus):
    model = region_from_case(bundled_case("case14"))
    J = pf_jacobian(model, model.x0)
    spec = J[2 * model.n_core:]
    assert np.all(np.sum(spec != 0, axis=1) == 1)
    assert np.all(np.abs(spec[spec != 0]) == 1)
    power = J[:2 * model.n_core, 2 * model.n_core:4 * model.n_core]
    np.testing.assert_array_equal(power, -np.eye(2 * model.n_core))


def test_jacobian_matches_finite_differences_on_random_states():
    problem = build_problem(*bundled_composite(53))
    rng = np.random.default_rng(7)
    worst = 0.0
    for k in range(100):
        reg = problem.regions[k % len(problem.regions)]
        chi = reg.x0 + 0.2 * rng.standard_normal(reg.n_state)
        J = pf_jacobian(reg, chi)
        Jfd = _fd_jacobian(reg, chi)
        worst = max(worst, np.max(np.abs(J - Jfd)) / max(1.0, np.max(np.abs(J))))
    assert worst <= 1e-6


def test_sparse_jacobian_equals_dense(monkeypatch):
    import gridmesh.network as network

    case = bundled_case("case30")
    dense = region_from_case(case)
    rng = np.random.default_rng(1)
    chi = dense.x0 + 0.1 * rng.standard_normal(dense.n_state)
    Jd, rd = pf_jacobian(dense, chi), residual(dense, chi)
    monkeypatch.setattr(network, "DENSE_LIMIT", 0)
    sparse = region_from_case(case)
    assert not sparse.dense
    Js = pf_jacobian(sparse, chi)
    assert sp.issparse(Js)
    np.testing.assert_allclose(Js.toarray(), Jd, atol=1e-12)
    np.testing.assert_allclose(residual(sparse, chi), rd, atol=1e-12)


def test_hessian_matches_finite_differences():
    problem = build_problem(*bundled_composite(53))
    reg = problem.regions[0]
    rng = np.random.default_rng(3)
    chi = reg.x0 + 0.1 * rng.standard_normal(reg.n_state)
    chi[reg.v_cols[:2]] *= -1  # negative magnitudes are legal iterates
    mult = rng.standard_normal(reg.n_residual)
    H = pf_hessian(reg, chi, mult)
    h = 1e-6
    Hfd = np.empty_like(H)
    for j in range(reg.n_state):
        e = np.zeros(reg.n_state)
        e[j] = h
        Hfd[:, j] = (mult @ pf_jacobian(reg, chi + e) - mult @ pf_jacobian(reg, chi - e)) / (2 * h)
    assert np.max(np.abs(H - Hfd)) <= 1e-6 * max(1.0, np.max(np.abs(H)))


def test_regions_at_reference_solution():
    problem = build_problem(*bundled_composite(53))
    for reg, chi in zip(problem.regions, reference_states(problem)):
        assert np.max(np.abs(residual(reg, chi))) < 1e-8


def test_wrong_state_size(two_bus):
    model = region_from_case(two_bus)
    with pytest.raises(ValueError):
        residual(model, np.zeros(3))
