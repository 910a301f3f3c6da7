import copy
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_system
from etvoi.model import (
    ContinuousLinearSystem,
    CostSpec,
    PatternError,
    TimeVaryingLinearSystem,
    measure,
    pendulum_continuous,
    step_process,
    validate_system,
    zoh_discretize,
)

PRINTED_A = np.array([
    [1.0000, 0.0100, 0.0001, 0.0000],
    [0.0000, 0.9982, 0.0267, 0.0001],
    [0.0000, 0.0000, 1.0016, 0.0100],
    [0.0000, -0.0045, 0.3122, 1.0016],
])
PRINTED_B = np.array([[0.0001], [0.0182], [0.0002], [0.0454]])


def scalar_system(W=3.0, N=100):
    sys_ = TimeVaryingLinearSystem.time_invariant([[1.1]], [[1.0]], [[W]], [0.0], [[1.0]], N)
    cost = CostSpec(N=N, Q=[[1.0]], R=[[0.1]], ell=1.0, lam=1.0, Q_final=[[1.0]])
    return sys_, cost


def test_scalar_system_is_clean():
    assert validate_system(*scalar_system()) == []


def test_negative_noise_flagged():
    diags = validate_system(*scalar_system(W=-1.0))
    assert len(diags) == 1
    d = diags[0]
    assert d.field == "W" and d.k == 0 and "not PD" in d.message


def test_horizon_mismatch_flagged():
    sys_, _ = scalar_system()
    cost = CostSpec(N=101, Q=[[1.0]], R=[[0.1]])
    diags = validate_system(sys_, cost)
    assert len(diags) == 1 and "horizon mismatch" in diags[0].message


def test_zero_input_weight_flagged():
    sys_, _ = scalar_system()
    diags = validate_system(sys_, CostSpec(N=100, Q=[[1.0]], R=[[0.0]]))
    assert [str(d) for d in diags] == ["error: R[k=0]: not PD (min eigenvalue 0.000e+00)"]


def test_shape_and_pattern_errors():
    sys_ = TimeVaryingLinearSystem(N=3, A=np.eye(2), B=np.ones((3, 1)), W=np.eye(2), m0=[0, 0], M0=np.eye(2))
    cost = CostSpec(N=3, Q=np.eye(2), R=[[1.0]])
    assert any(d.field == "B" and "shape" in d.message for d in validate_system(sys_, cost))
    bad = TimeVaryingLinearSystem(N=3, A=np.eye(2), B=np.ones((2, 1)), W=np.eye(2), m0=[0, 0], M0=np.eye(2), C=np.eye(2), V=np.eye(2))
    assert any(d.field == "info_pattern" for d in validate_system(bad, cost))
    wrong_len = TimeVaryingLinearSystem(N=3, A=[np.eye(2)] * 2, B=np.ones((2, 1)), W=np.eye(2), m0=[0, 0], M0=np.eye(2))
    assert any("sequence length" in d.message for d in validate_system(wrong_len, cost))


def test_rank_warnings_only_when_clean():
    sys_ = TimeVaryingLinearSystem.time_invariant(np.eye(2), [[1.0], [0.0]], np.eye(2), [0, 0], np.eye(2), 5, C=[[1.0, 0.0]], V=[[1.0]])
    diags = validate_system(sys_, CostSpec(N=5, Q=np.eye(2), R=[[1.0]]))
    assert {d.severity for d in diags} == {"warning"}
    assert {d.field for d in diags} == {"A,B", "A,C"}


def test_validate_is_pure():
    rng = np.random.default_rng(0)
    sys_, cost = random_system(rng, n=3, p=2)
    before = copy.deepcopy((sys_.A, sys_.W, cost.Q))
    first = validate_system(sys_, cost)
    assert validate_system(sys_, cost) == first
    for a, b in zip(before, (sys_.A, sys_.W, cost.Q)):
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)


def test_zoh_nilpotent():
    Bc = np.array([[1.0], [2.0]])
    A, B = zoh_discretize(ContinuousLinearSystem(np.zeros((2, 2)), Bc, 0.01))
    np.testing.assert_array_equal(A, np.eye(2))
    np.testing.assert_allclose(B, 0.01 * Bc, rtol=1e-14)


def test_zoh_scalar_closed_form():
    A, B = zoh_discretize(ContinuousLinearSystem([[1.1]], [[1.0]], 0.01))
    assert math.isclose(A[0, 0], math.exp(0.011), rel_tol=1e-14)
    assert math.isclose(B[0, 0], (math.exp(0.011) - 1) / 1.1, rel_tol=1e-12)


def test_zoh_pendulum_matches_printed():
    A, B = zoh_discretize(pendulum_continuous())
    assert np.max(np.abs(A - PRINTED_A)) <= 1e-4
    assert np.max(np.abs(B - PRINTED_B)) <= 1e-4


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 2), st.floats(1e-3, 0.2), st.integers(0, 2**32 - 1))
def test_zoh_semigroup(n, m, dt, seed):
    rng = np.random.default_rng(seed)
    Ac, Bc = rng.normal(size=(n, n)), rng.normal(size=(n, m))
    A1, B1 = zoh_discretize(ContinuousLinearSystem(Ac, Bc, dt))
    A2, B2 = zoh_discretize(ContinuousLinearSystem(Ac, Bc, 2 * dt))
    np.testing.assert_allclose(A1 @ A1, A2, atol=1e-10)
    np.testing.assert_allclose(A1 @ B1 + B1, B2, atol=1e-10)


def test_zoh_rejects_bad_dt():
    with pytest.raises(ValueError):
        zoh_discretize(ContinuousLinearSystem([[1.0]], [[1.0]], 0.0))


def test_step_process_examples():
    sys_, _ = scalar_system()
    assert step_process(sys_, 0, [0.0], [0.0], [0.0])[0] == 0.0
    assert step_process(sys_, 0, [1.0], [0.0], [0.0])[0] == 1.1


def test_step_and_measure_direct_recomputation():
    rng = np.random.default_rng(5)
    sys_, _ = random_system(rng, n=4, m=2, p=3, time_varying=True)
    for k in (0, 4, 10):
        x, u, w, v = rng.normal(size=4), rng.normal(size=2), rng.normal(size=4), rng.normal(size=3)
        A, B, C = sys_.A[k], sys_.B[k], sys_.C[k]
        ref = [sum(A[i, j] * x[j] for j in range(4)) + sum(B[i, j] * u[j] for j in range(2)) + w[i] for i in range(4)]
        np.testing.assert_allclose(step_process(sys_, k, x, u, w), ref, rtol=1e-14, atol=1e-14)
        ref = [sum(C[i, j] * x[j] for j in range(4)) + v[i] for i in range(3)]
        np.testing.assert_allclose(measure(sys_, k, x, v), ref, rtol=1e-14, atol=1e-14)


def test_measure_examples(pendulum):
    _, sys_, _, _ = pendulum
    assert np.all(measure(sys_, 0, np.zeros(4), np.zeros(2)) == 0)
    np.testing.assert_array_equal(measure(sys_, 0, [1.0, 2.0, 3.0, 4.0], [0.0, 0.0]), [1.0, 3.0])
    with pytest.raises(PatternError):
        measure(scalar_system()[0], 0, [1.0], [0.0])


def test_superposition():
    rng = np.random.default_rng(6)
    sys_, _ = random_system(rng, n=3, m=2, p=2)
    a = (rng.normal(size=3), rng.normal(size=2), rng.normal(size=3))
    b = (rng.normal(size=3), rng.normal(size=2), rng.normal(size=3))
    s = tuple(x + 2 * y for x, y in zip(a, b))
    np.testing.assert_allclose(step_process(sys_, 1, *s), step_process(sys_, 1, *a) + 2 * step_process(sys_, 1, *b), atol=1e-12)
    xa, va, xb, vb = rng.normal(size=3), rng.normal(size=2), rng.normal(size=3), rng.normal(size=2)
    np.testing.assert_allclose(measure(sys_, 1, xa - xb, va - vb), measure(sys_, 1, xa, va) - measure(sys_, 1, xb, vb), atol=1e-12)


def test_time_broadcast_and_range():
    sys_, cost = scalar_system(N=4)
    assert sys_.at(4).A[0, 0] == 1.1
    with pytest.raises(IndexError):
        sys_.at(5)
    assert cost.Q_at(5)[0, 0] == 1.0
    with pytest.raises(IndexError):
        cost.R_at(5)
    assert cost.theta(2) == 1.0
    assert cost.with_lambda(3.0).thetas().tolist() == [3.0] * 5
