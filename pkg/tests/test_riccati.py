from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_system
from etvoi.model import CostSpec, TimeVaryingLinearSystem
from etvoi.policies import PeriodicTrigger, VoiTrigger
from etvoi.riccati import IncompleteTrajectoryError, backward_riccati, lemma1_residual
from etvoi.simulate import run_trajectory


def scalar_fixed_point(a, b, q, r, tol=1e-12):
    """Iterate s <- q + a^2 s - (a b s)^2 / (b^2 s + r) to convergence."""
    s = q
    for _ in range(100_000):
        nxt = q + a * a * s - (a * b * s) ** 2 / (b * b * s + r)
        if abs(nxt - s) <= tol * max(1.0, abs(s)):
            return nxt
        s = nxt
    raise RuntimeError("no convergence")


def test_scalar_matches_fixed_point(scalar):
    _, sys_, cost, ric = scalar
    s = scalar_fixed_point(1.1, 1.0, 1.0, 0.1)
    assert abs(ric.S[0, 0, 0] - s) <= 1e-6
    l_inf = 1.1 * s / (s + 0.1)
    assert np.max(np.abs(ric.L[:81, 0, 0] - l_inf)) <= 1e-8


def test_zero_dynamics():
    rng = np.random.default_rng(0)
    N = 4
    Q = [np.diag(rng.uniform(1, 2, 2)) for _ in range(N + 2)]
    sys_ = TimeVaryingLinearSystem.time_invariant(np.zeros((2, 2)), np.ones((2, 1)), np.eye(2), [0, 0], np.eye(2), N)
    ric = backward_riccati(sys_, CostSpec(N=N, Q=Q, R=[[1.0]]))
    for k in range(N + 1):
        np.testing.assert_array_equal(ric.S[k], Q[k])
        assert np.all(ric.L[k] == 0) and np.all(ric.Gamma[k] == 0)
    assert np.all(ric.Gamma[N + 1] == 0)


def test_single_step_hand_expansion():
    rng = np.random.default_rng(1)
    A, B = rng.normal(size=(2, 2)), rng.normal(size=(2, 1))
    Q0, Q1, R = np.diag([1.0, 2.0]), np.diag([3.0, 0.5]), np.array([[0.7]])
    sys_ = TimeVaryingLinearSystem.time_invariant(A, B, np.eye(2), [0, 0], np.eye(2), 0)
    ric = backward_riccati(sys_, CostSpec(N=0, Q=[Q0, Q1], R=R))
    lam = B.T @ Q1 @ B + R
    G = A.T @ Q1 @ B @ np.linalg.inv(lam) @ B.T @ Q1 @ A
    np.testing.assert_allclose(ric.Gamma[0], G, rtol=1e-12)
    np.testing.assert_allclose(ric.S[0], Q0 + A.T @ Q1 @ A - G, rtol=1e-12)
    np.testing.assert_array_equal(ric.S[1], Q1)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_structure_properties(n, m, seed):
    rng = np.random.default_rng(seed)
    sys_, cost = random_system(rng, n=n, m=m, N=30, time_varying=True, radius=1.2)
    ric = backward_riccati(sys_, cost)
    for k in range(sys_.N + 2):
        S = ric.S[k]
        scale = max(1.0, np.abs(S).max())
        assert np.abs(S - S.T).max() <= 1e-10 * scale
        assert np.linalg.eigvalsh(S).min() >= -1e-8 * scale
    for k in range(sys_.N + 1):
        np.testing.assert_allclose(ric.Gamma[k], ric.L[k].T @ ric.Lambda[k] @ ric.L[k], atol=1e-10 * max(1.0, np.abs(ric.Gamma[k]).max()))
    c = 3.7
    scaled = CostSpec(N=cost.N, Q=tuple(c * q for q in cost.Q), R=tuple(c * r for r in cost.R))
    ric2 = backward_riccati(sys_, scaled)
    np.testing.assert_allclose(ric2.S, c * ric.S, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(ric2.Gamma, c * ric.Gamma, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(ric2.L, ric.L, rtol=1e-10, atol=1e-10)


def _path(sys_, ric, x0, u_fn, w):
    N = sys_.N
    x = np.empty((N + 2, sys_.n))
    u = np.empty((N + 1, sys_.m))
    x[0] = x0
    for k in range(N + 1):
        st_ = sys_.at(k)
        u[k] = u_fn(k, x[k])
        x[k + 1] = st_.A @ x[k] + st_.B @ u[k] + w[k]
    return x, u


def test_lemma1_noiseless_optimal_feedback(scalar):
    _, sys_, cost, ric = scalar
    w = np.zeros((sys_.N + 1, 1))
    x, u = _path(sys_, ric, [2.0], lambda k, x: -ric.L[k] @ x, w)
    traj = SimpleNamespace(x=x, u=u, w=w, delta=np.zeros(sys_.N + 1))
    assert lemma1_residual(traj, ric, cost, sys_) <= 1e-10


def test_lemma1_arbitrary_scalar_inputs(scalar):
    _, sys_, cost, ric = scalar
    rng = np.random.default_rng(2)
    w = rng.normal(size=(sys_.N + 1, 1)) * np.sqrt(3.0)
    x, u = _path(sys_, ric, [0.5], lambda k, x: -ric.L[k] @ x + rng.normal(size=1), w)
    delta = rng.integers(0, 2, sys_.N + 1)
    traj = SimpleNamespace(x=x, u=u, w=w, delta=delta)
    assert lemma1_residual(traj, ric, cost, sys_) <= 1e-9


def test_lemma1_pendulum_voi(pendulum):
    _, sys_, cost, ric = pendulum
    rec = run_trajectory(sys_, cost, ric, VoiTrigger(sys_, ric), seed=4, stream_index=0)
    assert lemma1_residual(rec, ric, cost, sys_) <= 1e-8


def test_lemma1_needs_noise(scalar):
    _, sys_, cost, ric = scalar
    rec = run_trajectory(sys_, cost, ric, PeriodicTrigger(1), seed=0)
    bad = SimpleNamespace(x=rec.x, u=rec.u, w=None, delta=rec.delta)
    with pytest.raises(IncompleteTrajectoryError):
        lemma1_residual(bad, ric, cost, sys_)
    bad.w = rec.w[:-1]
    with pytest.raises(IncompleteTrajectoryError):
        lemma1_residual(bad, ric, cost, sys_)
