import math

import numpy as np
import pytest

from ltvlab import ilqr
from ltvlab.dynamics import LinearSystem, Pendulum, Trajectory, hessian_fd, rollout, wrap_angle
from ltvlab.ltv import LtvModel


def riccati(A, B, Q, R, Q_T, T):
    """Textbook finite-horizon discrete Riccati recursion; returns (P_0, [L_t]) with u_t = -L_t x_t."""
    P = Q_T
    Ls = []
    for _ in range(T):
        L = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ (A - B @ L)
        Ls.append(L)
    return P, Ls[::-1]


@pytest.fixture
def lqr():
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    B = np.array([[0.005], [0.1]])
    Q, R, Q_T = np.diag([1.0, 0.1]), np.array([[0.5]]), np.diag([10.0, 1.0])
    T = 20
    sys = LinearSystem(M=A, N=B, u_max=100.0)
    x0 = np.array([1.0, -0.5])
    cost = ilqr.CostSpec(Q, R, Q_T, [0.0, 0.0], T)
    return sys, x0, cost


def test_cost_contract():
    cost = ilqr.CostSpec(np.eye(2), np.eye(1), 3 * np.eye(2), [1.0, 2.0], 3)
    at_target = Trajectory(np.tile([1.0, 2.0], (4, 1)), np.zeros((3, 1)))
    assert ilqr.evaluate_cost(cost, at_target) == 0.0
    free = ilqr.CostSpec(np.zeros((2, 2)), 2 * np.eye(1), np.zeros((2, 2)), [0, 0], 3)
    tr = Trajectory(np.zeros((4, 2)), np.array([[1.0], [-2.0], [0.5]]))
    tr2 = Trajectory(np.zeros((4, 2)), 2 * tr.controls)
    assert ilqr.evaluate_cost(free, tr2) == pytest.approx(4 * ilqr.evaluate_cost(free, tr))
    with pytest.raises(ValueError):
        ilqr.evaluate_cost(cost, Trajectory(np.zeros((3, 2)), np.zeros((2, 1))))


def test_cost_two_step_hand_example():
    # scalar: Q=2, R=4, Q_T=6, target 1; x = (0, 2, 3), u = (1, -1)
    cost = ilqr.CostSpec([[2.0]], [[4.0]], [[6.0]], [1.0], 2)
    tr = Trajectory(np.array([[0.0], [2.0], [3.0]]), np.array([[1.0], [-1.0]]))
    # 0.5*2*1 + 0.5*4*1  +  0.5*2*1 + 0.5*4*1  +  0.5*6*4 = 3 + 3 + 12
    assert ilqr.evaluate_cost(cost, tr) == 18.0


def test_cost_angle_wrapping():
    cost = ilqr.CostSpec([[1.0, 0], [0, 0]], [[1.0]], np.zeros((2, 2)), [0.0, 0.0], 1, wrap=(0,))
    assert cost.running([2 * math.pi + 0.1, 0.0], [0.0]) == pytest.approx(0.5 * 0.01)


def test_cost_spec_validation():
    with pytest.raises(ValueError):
        ilqr.CostSpec(np.eye(1), [[-1.0]], np.eye(1), [0.0], 1)
    with pytest.raises(ValueError):
        ilqr.CostSpec(np.eye(2), [[1.0, 2.0], [0.0, 1.0]], np.eye(2), [0.0, 0.0], 1)
    with pytest.raises(ValueError):
        ilqr.CostSpec([[np.nan]], [[1.0]], [[1.0]], [0.0], 1)


def test_backward_pass_matches_riccati(lqr):
    sys, x0, cost = lqr
    T = cost.horizon
    nominal = rollout(sys, x0, np.zeros((T, 1)))
    lin = LtvModel(np.tile(sys.M, (T, 1, 1)), np.tile(sys.N, (T, 1, 1)))
    gains, ok = ilqr.backward_pass(lin, cost, nominal)
    assert ok
    P0, Ls = riccati(sys.M, sys.N, cost.Q, cost.R, cost.Q_T, T)
    for t in range(T):
        np.testing.assert_allclose(gains.K[t], -Ls[t], atol=1e-8)
    # one forward pass at alpha = 1 lands on the optimum 0.5 x0' P0 x0
    traj, J, acc = ilqr.forward_pass(sys, nominal, gains, 1.0, cost, ilqr.evaluate_cost(cost, nominal))
    assert acc and J == pytest.approx(0.5 * x0 @ P0 @ x0, abs=1e-8)


def test_solve_lqr_one_iteration(lqr):
    sys, x0, cost = lqr
    P0, Ls = riccati(sys.M, sys.N, cost.Q, cost.R, cost.Q_T, cost.horizon)
    for model in ("ltv", "fd"):
        sol = ilqr.solve(ilqr.IlqrTask(sys, x0, cost, np.zeros(cost.horizon)), ilqr.IlqrOptions(model=model))
        assert sol.converged and sol.iterations == 1
        assert sol.cost_history[-1] == pytest.approx(0.5 * x0 @ P0 @ x0, abs=1e-8)
        # optimal closed-loop controls reproduce u_t = -L_t x_t
        X = sol.trajectory.states
        for t in range(cost.horizon):
            np.testing.assert_allclose(sol.controls[t], -Ls[t] @ X[t], atol=1e-8)


def test_regularization_at_fixed_inputs(lqr):
    # one-step horizon: V_{t+1} = Q_T regardless of mu, so the inputs to the step are fixed
    sys, x0, cost = lqr
    cost = ilqr.CostSpec(cost.Q, cost.R, cost.Q_T, cost.target, 1)
    nominal = rollout(sys, x0, [[0.3]])
    lin = LtvModel(sys.M[None], sys.N[None])
    mus = (0.0, 1.0, 10.0, 100.0, 1e4, 1e8)
    gains = [ilqr.backward_pass(lin, cost, nominal, mu)[0] for mu in mus]
    k_norms = [np.linalg.norm(g.k[-1]) for g in gains]
    assert all(a > b for a, b in zip(k_norms, k_norms[1:]))
    # mu enters Q_ux as well as Q_uu, so K tends to -(B'B)^{-1} B'A rather than 0
    B, A = sys.N, sys.M
    limit = -np.linalg.solve(B.T @ B, B.T @ A)
    np.testing.assert_allclose(gains[-1].K[-1], limit, rtol=1e-5)


def test_indefinite_quu_fails():
    sys = LinearSystem(M=[[1.0]], N=[[1.0]])
    cost = ilqr.CostSpec([[0.0]], [[1.0]], [[-10.0]], [0.0], 3)
    nominal = rollout(sys, [1.0], np.zeros(3))
    gains, ok = ilqr.backward_pass(LtvModel(np.ones((3, 1, 1)), np.ones((3, 1, 1))), cost, nominal, 0.0)
    assert gains is None and not ok


def test_null_update_reproduces_nominal(lqr):
    sys, x0, cost = lqr
    T = cost.horizon
    nominal = rollout(sys, x0, np.sin(np.arange(T))[:, None])
    g = ilqr.Gains(np.ones((T, 1)), np.zeros((T, 1, 2)), None, None)
    traj, _, acc = ilqr.forward_pass(sys, nominal, g, 0.0)
    assert acc and np.array_equal(traj.states, nominal.states) and np.array_equal(traj.controls, nominal.controls)


def test_line_search_decays_alpha():
    # x' = x + u, reach 1 in one step; k = 3 overshoots at alpha = 1 but not at 0.5
    sys = LinearSystem(M=[[1.0]], N=[[1.0]], u_max=10.0)
    cost = ilqr.CostSpec([[0.0]], [[0.01]], [[1.0]], [1.0], 1)
    nominal = rollout(sys, [0.0], [[0.0]])
    J0 = ilqr.evaluate_cost(cost, nominal)
    g = ilqr.Gains(np.array([[3.0]]), np.zeros((1, 1, 1)), None, None)
    tried = []
    for alpha in ilqr.IlqrOptions().alphas():
        _, J, acc = ilqr.forward_pass(sys, nominal, g, alpha, cost, J0)
        tried.append((alpha, acc))
        if acc:
            break
    assert tried == [(1.0, False), (0.5, True)]
    assert J == pytest.approx(0.5 * 0.25 + 0.5 * 0.01 * 2.25)


def test_pendulum_swingup(pendulum_solution, pendulum_setup):
    sol = pendulum_solution
    xT = sol.trajectory.states[-1]
    assert sol.converged
    assert abs(math.degrees(wrap_angle(xT[0] - math.pi / 3))) < 2.0
    assert abs(xT[1]) < 0.05
    h = sol.cost_history
    assert all(b < a for a, b in zip(h, h[1:]))
    assert np.max(np.linalg.norm(sol.gains.k, axis=1)) < ilqr.IlqrOptions().gain_tol


def test_cartpole_swingup_converges(cartpole_solution):
    sol = cartpole_solution
    assert sol.converged
    assert np.linalg.norm(ilqr.CostSpec(np.zeros((4, 4)), [[1.0]], np.eye(4), np.zeros(4), 30, (1,))
                          .diff(sol.trajectory.states[-1])) < 0.1


def test_feedback_closed_forms(pendulum_setup, pendulum_nominal):
    s = pendulum_setup
    from ltvlab.ltv import identify

    lin = identify(s.system, pendulum_nominal)
    g, ok = ilqr.backward_pass(lin, s.cost, pendulum_nominal, 0.0)
    assert ok
    R = s.cost.R
    for t in (0, 12, 29):
        A, B = lin.A[t], lin.B[t]
        v, V = g.v[t + 1], g.V[t + 1]
        M = R + B.T @ V @ B
        np.testing.assert_allclose(g.k[t], -np.linalg.solve(M, R @ pendulum_nominal.controls[t] + B.T @ v),
                                   rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(g.K[t], -np.linalg.solve(M, B.T @ V @ A), rtol=1e-8, atol=1e-10)


def test_ddp_linear_equals_backward(lqr):
    sys, x0, cost = lqr
    T = cost.horizon
    nominal = rollout(sys, x0, np.zeros((T, 1)))
    K = ilqr.ddp_feedback(sys, nominal, cost)
    g, _ = ilqr.backward_pass(LtvModel(np.tile(sys.M, (T, 1, 1)), np.tile(sys.N, (T, 1, 1))), cost, nominal)
    np.testing.assert_allclose(K, g.K, atol=1e-6)


def test_ddp_feedback_stabilizes(pendulum_setup, pendulum_nominal):
    s = pendulum_setup
    K = ilqr.ddp_feedback(s.system, pendulum_nominal, s.cost)
    x0 = pendulum_nominal.states[0] + [math.radians(1.0), 0.0]
    closed = ilqr.closed_loop_rollout(s.system, pendulum_nominal, K, x0)
    opened = rollout(s.system, x0, pendulum_nominal.controls)
    target = pendulum_nominal.states[-1]
    assert np.linalg.norm(closed.states[-1] - target) < np.linalg.norm(opened.states[-1] - target)


def test_fd_hessian_symmetry(pendulum_nominal):
    p = Pendulum()
    hxx, hux, huu = hessian_fd(p, pendulum_nominal.states[5], pendulum_nominal.controls[5])
    for i in range(p.n_x):
        np.testing.assert_allclose(hxx[i], hxx[i].T, atol=1e-4)


def test_solve_errors(lqr):
    sys, x0, cost = lqr
    with pytest.raises(ValueError):
        ilqr.solve(ilqr.IlqrTask(sys, x0, cost, np.zeros(cost.horizon)), ilqr.IlqrOptions(model="surrogate"))
    with pytest.raises(ValueError):
        ilqr.IlqrOptions(eps=0)
    with pytest.raises(ValueError):
        ilqr.IlqrOptions(alpha_decay=1.0)
    with pytest.raises(ValueError):
        ilqr.options_from_dict({"epsilon": 1})
    opts = ilqr.options_from_dict({"eps": 1e-5, "max_iter": 7})
    assert ilqr.options_to_dict(opts)["max_iter"] == 7

    big = LinearSystem(M=[[1e200]], N=[[1.0]])
    c1 = ilqr.CostSpec([[1.0]], [[1.0]], [[1.0]], [0.0], 5)
    with pytest.raises(ilqr.IlqrError):
        ilqr.solve(ilqr.IlqrTask(big, np.array([1e200]), c1, np.zeros(5)), ilqr.IlqrOptions(model="fd"))


def test_solution_serialization(pendulum_solution):
    d = pendulum_solution.to_dict()
    assert len(d["k"]) == 30 and d["converged"] is True and d["cost_history"][0] >= d["cost_history"][-1]
