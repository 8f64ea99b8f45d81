import math

import numpy as np
import pytest

from ltvlab import ltv
from ltvlab.dynamics import DivergenceError, LinearSystem, Pendulum, Trajectory, linearize_fd, rollout
from ltvlab.regress import condition_number


@pytest.fixture(scope="module")
def linear():
    sys = LinearSystem(M=[[1.0, 0.1], [-0.2, 0.95]], N=[[0.0, 1.0], [0.1, 0.5]], u_max=2.0)
    nom = rollout(sys, [1.0, -1.0], np.random.default_rng(0).uniform(-1, 1, (15, 2)))
    return sys, nom


def test_exact_on_linear_system(linear):
    sys, nom = linear
    for method in ("lls", "lls-cd"):
        m = ltv.identify(sys, nom, 2 * (sys.n_x + sys.n_u), state_scale=1e-2, control_scale=1e-2, method=method)
        np.testing.assert_allclose(m.A, np.broadcast_to(sys.M, m.A.shape), atol=1e-8)
        np.testing.assert_allclose(m.B, np.broadcast_to(sys.N, m.B.shape), atol=1e-8)
        assert np.max(np.abs(m.residual_mean)) < 1e-12


def test_hanging_pendulum_matches_fd():
    p = Pendulum()
    nom = rollout(p, [math.pi, 0.0], np.zeros((5, 1)))
    m = ltv.identify(p, nom, 20, state_scale=1e-4, control_scale=1e-4, seed=3)
    A, B = linearize_fd(p, [math.pi, 0.0], [0.0])
    np.testing.assert_allclose(m.A[0], A, atol=1e-4)
    np.testing.assert_allclose(m.B[0], B, atol=1e-4)


def test_too_few_rollouts(linear):
    sys, nom = linear
    with pytest.raises(ltv.RankError):
        ltv.identify(sys, nom, 3)


def test_scales_validated(linear):
    sys, nom = linear
    with pytest.raises(ValueError):
        ltv.identify(sys, nom, 8, state_scale=0.0)
    with pytest.raises(ValueError):
        ltv.identify(sys, nom, 8, method="secant")


def test_predict_contract(linear):
    sys, nom = linear
    m = ltv.identify(sys, nom, 8)
    assert np.all(ltv.predict(m, 0, np.zeros(2), np.zeros(2)) == 0)
    np.testing.assert_array_equal(m.predict(3, np.zeros(2), [1.0, 0.0]), m.B[3][:, 0])
    with pytest.raises(IndexError):
        ltv.predict(m, m.horizon, np.zeros(2), np.zeros(2))
    dx, du0, du1 = np.array([0.3, -0.1]), np.array([0.2, 0.0]), np.array([-0.5, 1.0])
    two = ltv.predict(m, 4, ltv.predict(m, 3, dx, du0), du1)
    chain = m.A[4] @ m.A[3] @ dx + m.A[4] @ m.B[3] @ du0 + m.B[4] @ du1
    np.testing.assert_allclose(two, chain, rtol=1e-14)
    dev = ltv.rollout_deviation(m, dx, np.zeros((m.horizon, 2)))
    assert dev.shape == (m.horizon + 1, 2) and np.array_equal(dev[0], dx)


def test_deviation_rollout_exact_on_linear(linear):
    sys, nom = linear
    m = ltv.identify(sys, nom, 8)
    du = 0.1 * np.ones((nom.horizon, 2))
    pert = rollout(sys, nom.states[0] + [0.05, 0.0], nom.controls + du)
    dev = ltv.rollout_deviation(m, [0.05, 0.0], du)
    np.testing.assert_allclose(nom.states + dev, pert.states, atol=1e-10)


def test_gram_well_conditioned_isotropic(linear):
    sys, nom = linear
    worst = max(ltv.gram_conditioning(ltv.identify(sys, nom, 200, 1e-3, 1e-3, seed=s), t)
                for s in range(20) for t in (0, 7, 14))
    assert worst <= 10


def test_gram_degenerate_and_permutation(linear):
    sys, nom = linear
    m = ltv.identify(sys, nom, 8)
    d = np.ones((6, 4))
    m.grams[0] = d.T @ d
    assert ltv.gram_conditioning(m, 0) == math.inf
    with pytest.raises(IndexError):
        ltv.gram_conditioning(m, -1)
    dX = np.random.default_rng(1).standard_normal((50, 4))
    perm = np.random.default_rng(2).permutation(50)
    assert condition_number(dX.T @ dX) == pytest.approx(condition_number(dX[perm].T @ dX[perm]), rel=1e-12)


def test_consistency_with_shrinking_scale(pendulum_nominal):
    p = Pendulum()
    errs = []
    for s in (1e-2, 1e-3, 1e-4):
        m = ltv.identify(p, pendulum_nominal, 50, state_scale=s, control_scale=s, seed=0)
        e = 0.0
        for t in (0, 10, 20):
            A, B = linearize_fd(p, pendulum_nominal.states[t], pendulum_nominal.controls[t])
            e = max(e, np.max(np.abs(m.A[t] - A)), np.max(np.abs(m.B[t] - B)))
        errs.append(e)
    assert errs[0] > errs[1] > errs[2]


def test_sampling_distribution_immaterial(pendulum_nominal):
    p = Pendulum()
    t = 10
    n, scale = 400, 1e-2
    g = ltv.identify(p, pendulum_nominal, n, scale, scale, seed=0, distribution="gaussian")
    u = ltv.identify(p, pendulum_nominal, n, scale, scale, seed=1, distribution="uniform")
    # standard error from the spread of the estimates over further seeds
    spread = []
    for s in range(2, 12):
        spread.append(ltv.identify(p, pendulum_nominal, n, scale, scale, seed=s).A[t])
    se = np.std(spread, axis=0, ddof=1)
    assert np.all(np.abs(g.A[t] - u.A[t]) < 5 * np.sqrt(2) * se + 1e-12)


def test_divergence_is_reported():
    class Blowup(LinearSystem):
        def step_batch(self, X, U):
            out = super().step_batch(X, U)
            out[:] = np.inf
            return out

    sys = Blowup(M=[[1.0]], N=[[1.0]])
    nom = Trajectory(np.zeros((3, 1)), np.zeros((2, 1)))
    with pytest.raises(DivergenceError):
        ltv.identify(sys, nom, 4)


def test_determinism_and_serialization(linear):
    sys, nom = linear
    a, b = ltv.identify(sys, nom, 8, seed=4), ltv.identify(sys, nom, 8, seed=4)
    assert np.array_equal(a.A, b.A)
    d = a.to_dict()
    assert d["nominal_sha256"] == ltv.trajectory_hash(nom) and d["meta"]["n_rollouts"] == 8
