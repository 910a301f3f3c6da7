"""Compiled inner loop for the batched imperfect-information VoI tail.

Same recursions as :func:`etvoi.policies.voi_imperfect`, written as scalar
loops so a batch of runs costs no Python overhead per step.  Matrix
sequences come pre-stacked over time (length N+1).
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _chol_solve_inplace(S, X):
    # S (p, p) SPD, overwritten by its Cholesky factor; X (p, r) overwritten by S^{-1} X.
    p = S.shape[0]
    for j in range(p):
        d = S[j, j]
        for q in range(j):
            d -= S[j, q] * S[j, q]
        if not d > 0.0:
            return False
        d = np.sqrt(d)
        S[j, j] = d
        for i in range(j + 1, p):
            s = S[i, j]
            for q in range(j):
                s -= S[i, q] * S[j, q]
            S[i, j] = s / d
    r = X.shape[1]
    for c in range(r):
        for i in range(p):
            s = X[i, c]
            for q in range(i):
                s -= S[i, q] * X[q, c]
            X[i, c] = s / S[i, i]
        for i in range(p - 1, -1, -1):
            s = X[i, c]
            for q in range(i + 1, p):
                s -= S[q, i] * X[q, c]
            X[i, c] = s / S[i, i]
    return True


@njit(cache=True)
def voi_tail_batch(A, C, W, V, Gamma, k, N, ebar0, P0, Pbar0):
    """Tail sums for R runs.

    ``ebar0`` (2, R, n), ``P0`` (2, R, n, n) and ``Pbar0`` (n, n) hold the
    branch states at k+1 (branch 0: no transmission at k).  Returns the tail
    (R,) and the first time an innovation covariance failed to factor
    (-1 when none did).
    """
    R = ebar0.shape[1]
    n = A.shape[1]
    p = C.shape[1]
    tail = np.zeros(R)
    e = np.empty(n)
    e2 = np.empty(n)
    P = np.empty((n, n))
    Pb = np.empty((n, n))
    CP = np.empty((p, n))
    S = np.empty((p, p))
    Y = np.empty((p, n))  # C P A'
    X = np.empty((p, n))  # S^{-1} C P A', i.e. K'
    F = np.empty((n, n))
    T1 = np.empty((n, n))
    T2 = np.empty((n, n))
    KV = np.empty((n, p))
    for r in range(R):
        acc = 0.0
        for b in range(2):
            for i in range(n):
                e[i] = ebar0[b, r, i]
                for j in range(n):
                    P[i, j] = P0[b, r, i, j]
                    Pb[i, j] = Pbar0[i, j]
            for t in range(k + 1, N):
                At, Ct, Wt, Vt = A[t], C[t], W[t], V[t]
                # CP = C P, S = C P C' + V
                for i in range(p):
                    for j in range(n):
                        s = 0.0
                        for q in range(n):
                            s += Ct[i, q] * P[q, j]
                        CP[i, j] = s
                for i in range(p):
                    for j in range(p):
                        s = Vt[i, j]
                        for q in range(n):
                            s += CP[i, q] * Ct[j, q]
                        S[i, j] = s
                for i in range(p):
                    for j in range(n):
                        s = 0.0
                        for q in range(n):
                            s += CP[i, q] * At[j, q]
                        Y[i, j] = s
                        X[i, j] = s
                if not _chol_solve_inplace(S, X):
                    return tail, t
                # F = A - K C
                for i in range(n):
                    for j in range(n):
                        s = At[i, j]
                        for q in range(p):
                            s -= X[q, i] * Ct[q, j]
                        F[i, j] = s
                # ebar <- F ebar
                for i in range(n):
                    s = 0.0
                    for j in range(n):
                        s += F[i, j] * e[j]
                    e2[i] = s
                for i in range(n):
                    e[i] = e2[i]
                # Pbar <- F Pbar F' + W + K V K'
                for i in range(n):
                    for j in range(n):
                        s = 0.0
                        for q in range(n):
                            s += F[i, q] * Pb[q, j]
                        T1[i, j] = s
                for i in range(n):
                    for q in range(p):
                        s = 0.0
                        for c in range(p):
                            s += X[c, i] * Vt[c, q]
                        KV[i, q] = s
                for i in range(n):
                    for j in range(i + 1):
                        s = Wt[i, j]
                        for q in range(n):
                            s += T1[i, q] * F[j, q]
                        for q in range(p):
                            s += KV[i, q] * X[q, j]
                        Pb[i, j] = s
                        Pb[j, i] = s
                # P <- A P A' + W - K C P A'
                for i in range(n):
                    for j in range(n):
                        s = 0.0
                        for q in range(n):
                            s += At[i, q] * P[q, j]
                        T2[i, j] = s
                for i in range(n):
                    for j in range(i + 1):
                        s = Wt[i, j]
                        for q in range(n):
                            s += T2[i, q] * At[j, q]
                        for q in range(p):
                            s -= X[q, i] * Y[q, j]
                        P[i, j] = s
                        P[j, i] = s
                G = Gamma[t + 1]
                s = 0.0
                for i in range(n):
                    for j in range(n):
                        s += G[i, j] * (e[i] * e[j] + Pb[j, i])
                if b == 0:
                    acc += s
                else:
                    acc -= s
        tail[r] = acc
    return tail, -1
