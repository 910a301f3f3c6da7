"""Independent reference computations used by the unit and acceptance tests.

None of these reuse the package's recursions: they work from the joint
Gaussian of the whole path, from direct simulation, or from closed forms.
"""

from __future__ import annotations

import numpy as np


def joint_gaussian_path(sys_, u, T):
    """Mean and covariance of z = (x_0..x_T, y_0..y_T) for a fixed input sequence.

    Every x_k and y_k is an affine map of the primitive noise
    xi = (x_0 - m_0, w_0..w_{T-1}, v_0..v_T), whose covariance is block diagonal.
    """
    n, p = sys_.n, sys_.p
    blocks = [sys_.M0] + [sys_.at(k).W for k in range(T)] + [sys_.at(k).V for k in range(T + 1)]
    dims = [b.shape[0] for b in blocks]
    offs = np.concatenate([[0], np.cumsum(dims)])
    D = offs[-1]
    cov_xi = np.zeros((D, D))
    for i, b in enumerate(blocks):
        cov_xi[offs[i]:offs[i + 1], offs[i]:offs[i + 1]] = b

    Gx = np.zeros((T + 1, n, D))
    mx = np.zeros((T + 1, n))
    Gx[0][:, offs[0]:offs[1]] = np.eye(n)
    mx[0] = sys_.m0
    for k in range(T):
        st = sys_.at(k)
        Gx[k + 1] = st.A @ Gx[k]
        Gx[k + 1][:, offs[1 + k]:offs[2 + k]] += np.eye(n)
        mx[k + 1] = st.A @ mx[k] + st.B @ u[k]
    Gy = np.zeros((T + 1, p, D))
    my = np.zeros((T + 1, p))
    for k in range(T + 1):
        C = sys_.at(k).C
        Gy[k] = C @ Gx[k]
        Gy[k][:, offs[1 + T + k]:offs[2 + T + k]] += np.eye(p)
        my[k] = C @ mx[k]
    G = np.concatenate([Gx.reshape(-1, D), Gy.reshape(-1, D)])
    mean = np.concatenate([mx.ravel(), my.ravel()])
    return mean, G @ cov_xi @ G.T


def condition(mean, cov, keep, given, values):
    """Conditional mean/covariance of z[keep] given z[given] = values."""
    S_kg = cov[np.ix_(keep, given)]
    S_gg = cov[np.ix_(given, given)]
    gain = np.linalg.solve(S_gg, S_kg.T).T
    m = mean[keep] + gain @ (values - mean[given])
    c = cov[np.ix_(keep, keep)] - gain @ S_kg.T
    return m, 0.5 * (c + c.T)


def filtered_and_predicted(sys_, u, y):
    """E/Cov of x_k given y_0..y_k (filtered) and given y_0..y_{k-1} (predicted)."""
    T = len(y) - 1
    n, p = sys_.n, sys_.p
    mean, cov = joint_gaussian_path(sys_, u, T)
    y_idx = lambda j: np.arange((T + 1) * n + j * p, (T + 1) * n + (j + 1) * p)  # noqa: E731
    out_f, out_p = [], []
    for k in range(T + 1):
        xk = np.arange(k * n, (k + 1) * n)
        g = np.concatenate([y_idx(j) for j in range(k + 1)])
        out_f.append(condition(mean, cov, xk, g, np.concatenate(y[: k + 1])))
        if k == 0:
            out_p.append((mean[xk], cov[np.ix_(xk, xk)]))
        else:
            g = np.concatenate([y_idx(j) for j in range(k)])
            out_p.append(condition(mean, cov, xk, g, np.concatenate(y[:k])))
    return out_f, out_p


def branch_rollout_mc(sys_, ric, k, eps, nu, Sigma, P, n_samples, rng):
    """Monte-Carlo estimate of the continuation-cost gap between the two branches.

    Draw the current error e_k ~ N(eps, Sigma) and all future noise, then run
    the controller error forward twice with shared draws: without (branch 0)
    and with (branch 1) the transmission of y_k, and with every later
    measurement transmitted.  The per-sample cost gap is
    sum_{t=k+1}^{N} e_t' Gamma_t e_t (branch 0 minus branch 1), whose mean plus
    -theta is the rollout value of information.  Returns (mean, stderr).
    """
    N, n = sys_.N, sys_.n
    st = sys_.at(k)
    A, C, V, W = st.A, st.C, st.V, st.W
    K = A @ P @ C.T @ np.linalg.inv(C @ P @ C.T + V)
    Lw = np.linalg.cholesky(Sigma)
    e_k = eps + rng.standard_normal((n_samples, n)) @ Lw.T
    w_k = rng.standard_normal((n_samples, n)) @ np.linalg.cholesky(W).T
    # nu is the realized innovation, fixed by the trigger's information
    e = [e_k @ A.T + w_k, e_k @ A.T + w_k - K @ nu]
    Ps = [A @ P @ A.T + W, A @ P @ A.T + W - K @ C @ P @ A.T]
    gap = np.einsum("si,ij,sj->s", e[0], ric.Gamma[k + 1], e[0]) - np.einsum("si,ij,sj->s", e[1], ric.Gamma[k + 1], e[1])
    for t in range(k + 1, N):
        s = sys_.at(t)
        w = rng.standard_normal((n_samples, n)) @ np.linalg.cholesky(s.W).T
        v = rng.standard_normal((n_samples, s.C.shape[0])) @ np.linalg.cholesky(s.V).T
        G = ric.Gamma[t + 1]
        for b in range(2):
            Kt = s.A @ Ps[b] @ s.C.T @ np.linalg.inv(s.C @ Ps[b] @ s.C.T + s.V)
            # x_{t+1} - xhat_{t+1} with y_t = C x_t + v_t delivered
            e[b] = e[b] @ s.A.T + w - (e[b] @ s.C.T + v) @ Kt.T
            Ps[b] = s.A @ Ps[b] @ s.A.T + s.W - Kt @ s.C @ Ps[b] @ s.A.T
        gap += np.einsum("si,ij,sj->s", e[0], G, e[0]) - np.einsum("si,ij,sj->s", e[1], G, e[1])
    return float(gap.mean()), float(gap.std(ddof=1) / np.sqrt(n_samples))


def always_transmit_cost(sys_, cost, ric):
    """Expected (N+1) J under delta = 1 at every step with perfect information.

    Completing the square gives E[x_0'S_0x_0] + sum_k tr(S_{k+1} W_k) plus the
    estimation penalty sum_k tr(Gamma_k P_k), where the controller error
    covariance is P_0 = M_0 and P_k = W_{k-1} afterwards (one-step delay).
    """
    N = sys_.N
    total = float(sys_.m0 @ ric.S[0] @ sys_.m0 + np.trace(ric.S[0] @ sys_.M0))
    for k in range(N + 1):
        total += float(np.trace(ric.S[k + 1] @ sys_.at(k).W))
        P = sys_.M0 if k == 0 else sys_.at(k - 1).W
        total += float(np.trace(ric.Gamma[k] @ P))
    return total
