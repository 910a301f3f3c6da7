"""Backward Riccati recursion and the pathwise cost-decomposition check."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import CostSpec, TimeVaryingLinearSystem
from .numerics import SingularityError, solve_spd

__all__ = ["RiccatiSolution", "backward_riccati", "lemma1_residual", "IncompleteTrajectoryError"]


class IncompleteTrajectoryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """S_k (k=0..N+1), Gamma_k (k=0..N+1, Gamma_{N+1}=0), L_k and Lambda_k (k=0..N)."""

    S: np.ndarray
    Gamma: np.ndarray
    L: np.ndarray
    Lambda: np.ndarray

    @property
    def N(self) -> int:
        return self.L.shape[0] - 1


def backward_riccati(sys: TimeVaryingLinearSystem, cost: CostSpec) -> RiccatiSolution:
    N, n, m = sys.N, sys.n, sys.m
    if n == 1 and m == 1:
        return _backward_scalar(sys, cost)
    S = np.empty((N + 2, n, n))
    Gamma = np.zeros((N + 2, n, n))
    L = np.empty((N + 1, m, n))
    Lam = np.empty((N + 1, m, m))
    S[N + 1] = cost.Q_at(N + 1)
    for k in range(N, -1, -1):
        st = sys.at(k)
        A, B, S1 = st.A, st.B, S[k + 1]
        S1B = S1 @ B
        lam = B.T @ S1B + cost.R_at(k)
        Lam[k] = 0.5 * (lam + lam.T)
        try:
            L[k] = solve_spd(Lam[k], S1B.T @ A)
        except SingularityError:
            raise SingularityError("Lambda = B'SB + R", k) from None
        # A'S B Lambda^{-1} B'S A == L' Lambda L
        g = A.T @ S1B @ L[k]
        Gamma[k] = 0.5 * (g + g.T)
        s = cost.Q_at(k) + A.T @ S1 @ A - Gamma[k]
        S[k] = 0.5 * (s + s.T)
        if not np.all(np.isfinite(S[k])):
            raise FloatingPointError(f"Riccati recursion overflowed at k={k}")
    return RiccatiSolution(S=S, Gamma=Gamma, L=L, Lambda=Lam)


def _backward_scalar(sys: TimeVaryingLinearSystem, cost: CostSpec) -> RiccatiSolution:
    # same recursion in float arithmetic; numpy call overhead dominates at 1x1
    N = sys.N
    S = [0.0] * (N + 2)
    G = [0.0] * (N + 2)
    L = [0.0] * (N + 1)
    Lam = [0.0] * (N + 1)
    S[N + 1] = s1 = float(cost.Q_at(N + 1)[0, 0])
    for k in range(N, -1, -1):
        st = sys.at(k)
        a, b = float(st.A[0, 0]), float(st.B[0, 0])
        lam = b * s1 * b + float(cost.R_at(k)[0, 0])
        if not lam > 0:
            raise SingularityError("Lambda = B'SB + R", k)
        l = b * s1 * a / lam
        g = a * s1 * b * l
        s1 = float(cost.Q_at(k)[0, 0]) + a * s1 * a - g
        if not math.isfinite(s1):
            raise FloatingPointError(f"Riccati recursion overflowed at k={k}")
        S[k], G[k], L[k], Lam[k] = s1, g, l, lam
    shape = (-1, 1, 1)
    return RiccatiSolution(
        S=np.array(S).reshape(shape),
        Gamma=np.array(G).reshape(shape),
        L=np.array(L).reshape(shape),
        Lambda=np.array(Lam).reshape(shape),
    )


def lemma1_residual(traj, ric: RiccatiSolution, cost: CostSpec, sys: TimeVaryingLinearSystem) -> float:
    """Relative gap between the realized cost and its completed-square form.

    Both sides are evaluated from the logged path, including the cross terms
    2 (A x + B u)' S w, so the identity holds for every realization and any
    pair of policies.
    """
    x, u, w, delta = traj.x, traj.u, traj.w, traj.delta
    N = ric.N
    if w is None or len(w) != N + 1 or np.any(~np.isfinite(w)):
        raise IncompleteTrajectoryError("trajectory is missing logged process noise")
    th = cost.thetas()
    lhs = float(x[N + 1] @ cost.Q_at(N + 1) @ x[N + 1])
    rhs = float(x[0] @ ric.S[0] @ x[0])
    for k in range(N + 1):
        st = sys.at(k)
        S1 = ric.S[k + 1]
        price = th[k] * delta[k]
        lhs += float(x[k] @ cost.Q_at(k) @ x[k] + u[k] @ cost.R_at(k) @ u[k]) + price
        drift = st.A @ x[k] + st.B @ u[k]
        gap = u[k] + ric.L[k] @ x[k]
        rhs += price + float(w[k] @ S1 @ w[k] + 2.0 * drift @ S1 @ w[k] + gap @ ric.Lambda[k] @ gap)
    return abs(lhs - rhs) / max(1.0, abs(lhs))
