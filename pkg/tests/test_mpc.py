import math

import numpy as np
import pytest

from trailer_mpc import (ControllerState, JointAnglePolytope, LqController,
                         MpcConfig, MpcController, VehicleState,
                         analytic_straight_model, build_output_matrix,
                         default_joint_polytope, design_cost,
                         shift_joint_polytope, slew_bound)
from trailer_mpc.exceptions import (NominalOutsidePolytope, PathExhausted,
                                    RiccatiDiverged)
from trailer_mpc.paths import generate_straight, interpolate


def test_output_matrix_tractor_row(params):
    # tractor lateral offset sensitivity: (1, L3+L2+M1, L2+M1, M1)
    M = build_output_matrix(params)
    assert M.shape == (8, 4)
    assert np.allclose(M[0], [1.0, 13.53, 5.53, 1.66])
    assert np.allclose(M[1], [0.0, 1.0, 1.0, 1.0])
    assert np.allclose(M[4], [0.0, 0.0, 0.0, 1.0])


def test_design_cost_dare_residual_and_stability(params):
    cfg = MpcConfig()
    model = analytic_straight_model(params, -1.0, cfg.delta_s)
    cost = design_cost(params, cfg, model)
    F, G, Q, P, K = model.F, model.G, cost.Q, cost.P, cost.K
    PG = P @ G
    residual = F.T @ P @ F - P - np.outer(F.T @ PG, (PG @ F) / (1.0 + G @ PG)) + Q
    assert np.max(np.abs(residual)) < 1e-9
    assert cost.spectral_radius < 1.0
    rho = np.max(np.abs(np.linalg.eigvals(F - np.outer(G, K))))
    assert rho == pytest.approx(cost.spectral_radius, abs=1e-12)


def test_design_cost_matches_scipy_dare(params):
    from scipy.linalg import solve_discrete_are

    cfg = MpcConfig()
    model = analytic_straight_model(params, -1.0, cfg.delta_s)
    cost = design_cost(params, cfg, model)
    P_ref = solve_discrete_are(model.F, model.G[:, None], cost.Q, np.eye(1))
    assert np.max(np.abs(cost.P - P_ref)) < 1e-7 * np.max(np.abs(P_ref))


def test_riccati_diverges_on_unstabilizable_pair(params):
    cfg = MpcConfig()
    model = analytic_straight_model(params, -1.0, cfg.delta_s)
    from trailer_mpc.error_model import LinearizedModel

    broken = LinearizedModel(A=model.A, B=np.zeros(4), F=model.F,
                             G=np.zeros(4), delta_s=model.delta_s)
    with pytest.raises(RiccatiDiverged):
        design_cost(params, cfg, broken)


def test_polytope_contains_and_box():
    poly = JointAnglePolytope.box(0.5, 0.3)
    assert poly.m == 4
    assert poly.contains(0.4, -0.2)
    assert not poly.contains(0.6, 0.0)
    assert poly.contains(0.55, 0.0, slack=0.1)
    with pytest.raises(ValueError):
        JointAnglePolytope(np.array([[1.0, 0.0]]), np.array([0.0]))


def test_polytope_csv_round_trip(tmp_path):
    poly = default_joint_polytope()
    f = tmp_path / "poly.csv"
    poly.write_csv(f)
    back = JointAnglePolytope.read_csv(f)
    assert np.array_equal(back.H, poly.H)
    assert np.array_equal(back.h, poly.h)


def test_default_polytope_symmetric_origin_inside():
    poly = default_joint_polytope()
    assert poly.contains(0.0, 0.0)
    # facets come in +/- pairs with equal support
    assert np.allclose(poly.H[0::2], -poly.H[1::2])
    assert np.allclose(poly.h[0::2], poly.h[1::2])


def test_shift_joint_polytope(straight_back):
    poly = default_joint_polytope()
    H, hbar = shift_joint_polytope(poly, straight_back.sample(0))
    assert np.allclose(hbar, poly.h)  # zero nominal angles: unshifted
    bad = interpolate(straight_back, 0.0)
    bad = type(bad)(bad.s, bad.x3r, bad.y3r, bad.theta3r, 2.0, 0.0,
                    bad.ur, bad.v3r_sign, bad.kappa3r)
    with pytest.raises(NominalOutsidePolytope):
        shift_joint_polytope(poly, bad)


def test_slew_bound_zero_angles(params, straight_back):
    # C1 = 1 on the straight nominal: the bound is udot_max per meter
    assert slew_bound(straight_back.sample(0), params) == pytest.approx(0.13)


def test_config_validation():
    with pytest.raises(ValueError):
        MpcConfig(horizon=0)
    with pytest.raises(ValueError):
        MpcConfig(qbar=np.ones(5))


def test_controller_requires_matching_grid(params, straight_back):
    with pytest.raises(ValueError):
        MpcController(params, straight_back, MpcConfig(delta_s=0.1))


def test_zero_error_fixed_point(params, straight_back):
    controller = MpcController(params, straight_back, MpcConfig())
    ctrl = ControllerState(s_prev=0.0)
    state = VehicleState(0.0, 0.0, 0.0, 0.0, 0.0)
    u_cmd, diag = controller.step(state, ctrl)
    assert diag.qp_status == "Optimal"
    assert abs(u_cmd) < 1e-8
    assert diag.slack_max < 1e-10


def test_condensing_equivalence_small_horizon(params):
    # the condensed QP cost must equal the explicit stacked-state cost
    cfg = MpcConfig(horizon=5)
    path = generate_straight(30.0, -1.0, cfg.delta_s)
    controller = MpcController(params, path, cfg, use_polytope=False)
    struct = controller._structure(0)
    N = cfg.horizon
    model = analytic_straight_model(params, -1.0, cfg.delta_s)
    F, G = model.F, model.G
    Q, P = controller.cost.Q, controller.cost.P

    rng = np.random.default_rng(7)
    for _ in range(5):
        x0 = rng.normal(scale=0.1, size=4)
        ut = rng.normal(scale=0.05, size=N)
        # explicit rollout cost
        x = x0.copy()
        cost_ref = 0.0
        for k in range(N):
            x = F @ x + G * ut[k]
            Wk = P if k == N - 1 else Q
            cost_ref += x @ Wk @ x
        cost_ref += ut @ ut
        q = struct.W @ x0
        cost_qp = 0.5 * ut @ struct.P @ ut + q @ ut
        offset = cost_ref - cost_qp  # constant term dropped by condensing
        x = x0.copy()
        cost0 = sum((np.linalg.matrix_power(F, k + 1) @ x0) @
                    ((P if k == N - 1 else Q) @
                     (np.linalg.matrix_power(F, k + 1) @ x0))
                    for k in range(N))
        assert offset == pytest.approx(cost0, rel=1e-9)


def test_constraint_row_counts(params, straight_back):
    cfg = MpcConfig()
    controller = MpcController(params, straight_back, cfg)
    struct = controller._structure(0)
    N = cfg.horizon
    m_poly = controller.polytope.m
    assert struct.A.shape == (2 * N + 2 * N * m_poly, N + N * m_poly)
    assert struct.P.shape[0] == N + N * m_poly
    # box rows then slew rows then soft rows then slack nonnegativity
    assert np.allclose(struct.u[:N], cfg.u_max)
    assert np.allclose(struct.l[:N], -cfg.u_max)
    c = slew_bound(straight_back.sample(1), params) * cfg.delta_s
    assert np.allclose(struct.u[N + 1:2 * N], c)
    assert np.all(struct.l[2 * N + N * m_poly:] == 0.0)


def test_first_cycle_slew_window(params, straight_back):
    cfg = MpcConfig()
    controller = MpcController(params, straight_back, cfg)
    ctrl = ControllerState(s_prev=0.0)
    state = VehicleState(0.0, 1.5, 0.0, 0.0, 0.0)  # lateral offset
    u_prev_expect = 0.0  # nominal curvature at the start
    u_cmd, diag = controller.step(state, ctrl)
    assert abs(u_cmd - u_prev_expect) <= cfg.udot_max / cfg.f_s + 1e-12
    u2, _ = controller.step(state, ctrl)
    assert abs(u2 - u_cmd) <= cfg.udot_max / cfg.f_s + 1e-12


def test_path_exhausted(params):
    cfg = MpcConfig()
    path = generate_straight(12.0, -1.0, cfg.delta_s)
    controller = MpcController(params, path, cfg)
    # the constructor pads the path, but stepping past the padded end fails
    ctrl = ControllerState(s_prev=0.0)
    state = VehicleState(-23.0, 0.0, 0.0, 0.0, 0.0)
    ctrl.s_prev = 22.8
    with pytest.raises(PathExhausted):
        controller.step(state, ctrl)


def test_lq_controller_saturates(params, straight_back):
    cfg = MpcConfig()
    lq = LqController(params, straight_back, cfg)
    ctrl = ControllerState(s_prev=0.0)
    state = VehicleState(0.0, 5.6, 0.0, 0.0, 0.0)
    u_cmd, diag = lq.step(state, ctrl)
    assert abs(u_cmd) == pytest.approx(cfg.u_max)
    assert diag.qp_status == "LQ"


def test_mpc_command_within_limits_under_large_error(params, straight_back):
    cfg = MpcConfig()
    controller = MpcController(params, straight_back, cfg)
    ctrl = ControllerState(s_prev=0.0)
    state = VehicleState(0.0, 5.6, 0.0, 0.0, 0.0)
    u_prev = None
    for _ in range(12):
        u_cmd, diag = controller.step(state, ctrl)
        assert abs(u_cmd) <= cfg.u_max + 1e-12
        if u_prev is not None:
            assert abs(u_cmd - u_prev) <= cfg.udot_max / cfg.f_s + 1e-9
        u_prev = u_cmd
        assert max(diag.primal_residual, diag.dual_residual,
                   diag.comp_residual) < 1e-6
