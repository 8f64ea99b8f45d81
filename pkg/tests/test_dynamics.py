import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltvlab.dynamics import (CartPole, DimensionError, DivergenceError, LinearSystem, Pendulum, Trajectory,
                             hessian_fd, linearize_fd, make_system, rollout, step, wrap_angle)

finite = st.floats(-3.0, 3.0, allow_nan=False)


def fine_step(system, x, u, sub=1000):
    """Reference: RK4 with dt/sub sub-steps on the same vector field."""
    h = system.dt / sub
    x = np.array(x, dtype=float)
    u = np.asarray(u, dtype=float)
    for _ in range(sub):
        k1 = system.deriv(x, u)
        k2 = system.deriv(x + 0.5 * h * k1, u)
        k3 = system.deriv(x + 0.5 * h * k2, u)
        k4 = system.deriv(x + h * k3, u)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def test_pendulum_equilibria_are_fixed_points():
    p = Pendulum()
    # sin(pi) is ~1e-16 in floating point, so hanging is fixed only to rounding
    np.testing.assert_allclose(step(p, [np.pi, 0.0], [0.0]), [np.pi, 0.0], atol=1e-15, rtol=0)
    np.testing.assert_array_equal(step(p, [0.0, 0.0], [0.0]), [0.0, 0.0])


def test_hanging_sin_residual_is_below_integrator_truncation():
    # sin(pi) is not exactly zero in floating point; the drift must stay tiny
    p = Pendulum()
    x = step(p, [np.pi, 0.0], [0.0])
    assert np.max(np.abs(x - [np.pi, 0.0])) < 1e-10


def test_small_angle_step_matches_fine_integration():
    p = Pendulum()
    x1 = step(p, [0.01, 0.0], [0.0])
    np.testing.assert_allclose(x1, fine_step(p, [0.01, 0.0], [0.0]), atol=1e-8, rtol=0)


def test_cartpole_step_matches_fine_integration():
    c = CartPole()
    x = np.array([0.1, 2.5, -0.3, 0.7])
    # faster dynamics than the pendulum: fourth-order local error is around 1e-6 here
    np.testing.assert_allclose(step(c, x, [3.0]), fine_step(c, x, [3.0]), atol=1e-5, rtol=0)


def test_cartpole_upright_fixed_point():
    c = CartPole()
    x = step(c, np.zeros(4), [0.0])
    assert np.max(np.abs(x)) < 1e-10


def test_step_errors():
    p = Pendulum()
    with pytest.raises(DimensionError):
        step(p, [0.0, 0.0, 0.0], [0.0])
    with pytest.raises(DimensionError):
        step(p, [0.0, 0.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        step(p, [np.nan, 0.0], [0.0])


def test_step_is_deterministic():
    p = Pendulum()
    a = step(p, [0.3, -0.2], [1.5])
    b = step(p, [0.3, -0.2], [1.5])
    assert a.tobytes() == b.tobytes()


def test_rollout_constant_at_hanging_equilibrium():
    p = Pendulum()
    tr = rollout(p, [np.pi, 0.0], np.zeros((30, 1)))
    assert tr.states.shape == (31, 2)
    assert np.max(np.abs(tr.states - [np.pi, 0.0])) < 1e-10


@given(st.integers(1, 40))
@settings(max_examples=15, deadline=None)
def test_rollout_length_contract(T):
    tr = rollout(Pendulum(), [0.2, 0.0], np.full((T, 1), 0.5))
    assert tr.states.shape == (T + 1, 2) and tr.controls.shape == (T, 1)


def test_damped_energy_non_increasing():
    p = Pendulum(damping=0.5)
    tr = rollout(p, [0.5, 0.0], np.zeros((200, 1)))
    E = np.array([p.energy(x) for x in tr.states])
    assert np.all(np.diff(E) <= 1e-9)
    assert E[-1] < E[0]


def test_undamped_cartpole_conserves_energy():
    c = CartPole()
    tr = rollout(c, [0.0, 2.0, 0.0, 0.0], np.zeros((40, 1)))
    E = np.array([c.energy(x) for x in tr.states])
    assert np.ptp(E) < 1e-5 * abs(E).max()


def test_rollout_divergence_carries_timestep():
    lin = LinearSystem(np.array([[1e200]]), np.array([[1.0]]))
    with pytest.raises(DivergenceError) as info:
        rollout(lin, [1e200], np.zeros((5, 1)))
    assert info.value.t == 1


@given(st.integers(1, 15), st.integers(1, 15), finite, finite)
@settings(max_examples=20, deadline=None)
def test_rollout_split_consistency(T1, T2, th, om):
    p = Pendulum()
    rng = np.random.default_rng(T1 * 100 + T2)
    c = rng.uniform(-p.u_max, p.u_max, (T1 + T2, 1))
    full = rollout(p, [th, om], c)
    a = rollout(p, [th, om], c[:T1])
    b = rollout(p, a.states[-1], c[T1:])
    np.testing.assert_array_equal(full.states, np.vstack([a.states, b.states[1:]]))


@given(st.lists(finite, min_size=4, max_size=4), st.floats(-20, 20))
@settings(max_examples=30, deadline=None)
def test_batch_step_bit_identical_to_scalar(x, u):
    for sys, xs in ((Pendulum(), x[:2]), (CartPole(), x)):
        X = np.array([xs, np.array(xs) * 0.5])
        U = np.array([[u], [-u]])
        batch = sys.step_batch(X, U)
        for i in range(2):
            assert batch[i].tobytes() == sys.step(X[i], U[i]).tobytes()


def test_linearize_linear_system_exact():
    M = np.array([[0.9, 0.2, 0.0], [-0.1, 1.0, 0.3], [0.0, 0.05, 0.8]])
    N = np.array([[0.0, 1.0], [0.5, 0.0], [0.1, 0.2]])
    A, B = linearize_fd(LinearSystem(M, N), np.array([0.3, -1.0, 2.0]), np.array([0.1, 0.4]))
    np.testing.assert_allclose(A, M, atol=1e-10)
    np.testing.assert_allclose(B, N, atol=1e-10)


def test_linearize_pendulum_hanging_matches_discretized_symbolic_jacobian():
    p = Pendulum()
    # continuous Jacobian at theta = pi: d(omega_dot)/d(theta) = (g/l) cos(pi)
    Ac = np.array([[0.0, 1.0], [-p.gravity / p.length, -p.damping / (p.mass * p.length**2)]])
    Bc = np.array([[0.0], [1.0 / (p.mass * p.length**2)]])
    h = p.dt / p.substeps
    # one RK4 step of a linear ODE is the 4th-order Taylor polynomial of expm
    I = np.eye(2)
    hA = h * Ac
    Ah = I + hA + hA @ hA / 2 + np.linalg.matrix_power(hA, 3) / 6 + np.linalg.matrix_power(hA, 4) / 24
    Bh = h * (I + hA / 2 + hA @ hA / 6 + np.linalg.matrix_power(hA, 3) / 24) @ Bc
    Ad, Bd = I, np.zeros((2, 1))
    for _ in range(p.substeps):
        Ad, Bd = Ah @ Ad, Ah @ Bd + Bh
    A, B = linearize_fd(p, np.array([np.pi, 0.0]), np.array([0.0]))
    np.testing.assert_allclose(A, Ad, atol=1e-6)
    np.testing.assert_allclose(B, Bd, atol=1e-6)
    np.testing.assert_allclose(np.diag(A), 1.0, atol=p.dt**2 * 10)


def test_linearize_eps_errors():
    p = Pendulum()
    with pytest.raises(ValueError):
        linearize_fd(p, np.zeros(2), np.zeros(1), eps=0.0)
    with pytest.raises(ArithmeticError):
        linearize_fd(p, np.zeros(2), np.zeros(1), eps=1e-320)


def test_hessian_fd_linear_system_is_zero():
    lin = LinearSystem(np.array([[1.0, 0.1], [0.0, 1.0]]), np.array([[0.0], [0.1]]))
    hxx, hux, huu = hessian_fd(lin, np.array([0.2, 0.1]), np.array([0.3]))
    assert max(np.abs(hxx).max(), np.abs(hux).max(), np.abs(huu).max()) < 1e-6


def test_hessian_fd_pendulum_symmetric():
    hxx, _, _ = hessian_fd(Pendulum(), np.array([0.4, 0.2]), np.array([1.0]))
    np.testing.assert_allclose(hxx, np.transpose(hxx, (0, 2, 1)), atol=1e-5)


def test_euler_integrator_selectable():
    p = Pendulum(integrator="euler", substeps=1)
    x = np.array([0.3, 0.1])
    np.testing.assert_allclose(p.step(x, [0.0]), x + p.dt * p.deriv(x, np.array([0.0])))


def test_substeps_split_the_interval():
    p2 = Pendulum(substeps=2)
    half = Pendulum(dt=p2.dt / 2, substeps=1)
    x = np.array([0.4, -0.3])
    np.testing.assert_array_equal(p2.step(x, [1.0]), half.step(half.step(x, [1.0]), [1.0]))


def test_invalid_params_rejected():
    with pytest.raises(ValueError):
        Pendulum(substeps=0)
    with pytest.raises(ValueError):
        Pendulum(dt=0.0)
    with pytest.raises(ValueError):
        CartPole(u_max=-1.0)
    with pytest.raises(ValueError):
        make_system({"system": "swimmer"})


def test_make_system_round_trip():
    for sys in (Pendulum(), CartPole()):
        again = make_system(sys.to_dict())
        assert again.to_dict() == sys.to_dict()


def test_trajectory_coherence_and_round_trip():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 2)), np.zeros((3, 1)))
    tr = rollout(Pendulum(), [0.1, 0.0], np.ones(5))
    again = Trajectory.from_dict(tr.to_dict())
    np.testing.assert_array_equal(again.states, tr.states)


def test_wrap_angle_range():
    a = wrap_angle(np.array([np.pi, -np.pi, 3 * np.pi, 0.5]))
    assert np.all(a >= -np.pi) and np.all(a < np.pi)
    np.testing.assert_allclose(np.cos(a), np.cos([np.pi, -np.pi, 3 * np.pi, 0.5]), atol=1e-12)
