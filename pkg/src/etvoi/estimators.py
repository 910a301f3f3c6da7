"""Conditional-Gaussian estimators at the controller and at the trigger.

All step functions broadcast over leading batch axes: a belief may hold a
stack of estimates ``xhat`` of shape (R, n) and covariances of shape
(R, n, n) (or a shared (n, n) covariance) together with a per-run ``delta``
of shape (R,).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import PatternError, TimeVaryingLinearSystem
from .numerics import SingularityError, mv, solve_spd, sym, tr_

__all__ = [
    "ControllerBelief",
    "TriggerBelief",
    "TriggerSignals",
    "MissingPayloadError",
    "controller_prior",
    "controller_gain",
    "perfect_controller_step",
    "controller_intermittent_step",
    "trigger_kf_init",
    "trigger_kf_step",
    "trigger_signals",
]


class MissingPayloadError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ControllerBelief:
    """Mean and covariance of x_k given the transmissions received before k."""

    xhat: np.ndarray
    P: np.ndarray
    k: int


@dataclass(frozen=True, eq=False)
class TriggerBelief:
    """Kalman-filter mean and covariance of x_k given y_0..y_k."""

    xcheck: np.ndarray
    Sigma: np.ndarray
    k: int


@dataclass(frozen=True, eq=False)
class TriggerSignals:
    eps: np.ndarray
    nu: np.ndarray | None = None
    K: np.ndarray | None = None

    @property
    def e(self) -> np.ndarray:
        # perfect information: the mismatch is the controller's exact error
        return self.eps


def controller_prior(sys: TimeVaryingLinearSystem) -> ControllerBelief:
    return ControllerBelief(sys.m0.copy(), sys.M0.copy(), 0)


def _delta_factor(delta, ndim_extra: int):
    d = np.asarray(delta, dtype=float)
    return d.reshape(d.shape + (1,) * ndim_extra)


def _need_payload(delta, payload, name: str):
    if payload is None and np.any(np.asarray(delta) != 0):
        raise MissingPayloadError(f"delta=1 requires the transmitted {name}")


def perfect_controller_step(b: ControllerBelief, sys: TimeVaryingLinearSystem, u, delta, x=None) -> ControllerBelief:
    """Advance the controller estimate when the state itself is transmitted."""
    _need_payload(delta, x, "state x_k")
    st = sys.at(b.k)
    xhat = mv(st.A, b.xhat) + mv(st.B, np.asarray(u, float))
    if x is not None:
        xhat = xhat + _delta_factor(delta, 1) * mv(st.A, np.asarray(x, float) - b.xhat)
    APA = st.A @ b.P @ st.A.T
    P = sym(st.W + (1.0 - _delta_factor(delta, 2)) * APA)
    return ControllerBelief(xhat, P, b.k + 1)


def controller_gain(P: np.ndarray, sys: TimeVaryingLinearSystem, k: int) -> np.ndarray:
    """K_k = A_k P C_k' (C_k P C_k' + V_k)^{-1}."""
    st = sys.at(k)
    if st.C is None:
        raise PatternError("controller gain needs the imperfect information pattern")
    CP = st.C @ P
    Sy = CP @ st.C.T + st.V
    try:
        return tr_(solve_spd(Sy, CP @ st.A.T))
    except SingularityError:
        raise SingularityError("innovation covariance C P C' + V", k) from None


def controller_intermittent_step(b: ControllerBelief, sys: TimeVaryingLinearSystem, u, delta, y=None):
    """Advance the controller estimate when measurements are transmitted.

    Returns the next belief and the gain K_k computed from the current P_k;
    the gain is returned whether or not a transmission happened.
    """
    _need_payload(delta, y, "measurement y_k")
    st = sys.at(b.k)
    K = controller_gain(b.P, sys, b.k)
    xhat = mv(st.A, b.xhat) + mv(st.B, np.asarray(u, float))
    if y is not None:
        nu = np.asarray(y, float) - mv(st.C, b.xhat)
        xhat = xhat + _delta_factor(delta, 1) * mv(K, nu)
    P = sym(st.A @ b.P @ st.A.T + st.W - _delta_factor(delta, 2) * (K @ st.C @ b.P @ st.A.T))
    return ControllerBelief(xhat, P, b.k + 1), K


def _measurement_update(x_pred, S_pred, C, V, y, k):
    CS = C @ S_pred
    try:
        G = solve_spd(CS @ C.T + V, CS)
    except SingularityError:
        raise SingularityError("innovation covariance C Sigma C' + V", k) from None
    Sigma = sym(S_pred - tr_(CS) @ G)
    # gain S C'(C S C' + V)^{-1} equals Sigma C' V^{-1} but stays accurate as V -> 0
    return x_pred + mv(tr_(G), np.asarray(y, float) - mv(C, x_pred)), Sigma


def trigger_kf_init(sys: TimeVaryingLinearSystem, y0) -> TriggerBelief:
    if not sys.imperfect:
        raise PatternError("the trigger-side filter needs the imperfect information pattern")
    st = sys.at(0)
    xc, Sigma = _measurement_update(sys.m0, sys.M0, st.C, st.V, y0, 0)
    return TriggerBelief(xc, Sigma, 0)


def trigger_kf_step(b: TriggerBelief, sys: TimeVaryingLinearSystem, u, y_next) -> TriggerBelief:
    """One Kalman predict/update from time k-1 to k using y_k."""
    if not sys.imperfect:
        raise PatternError("the trigger-side filter needs the imperfect information pattern")
    prev, cur = sys.at(b.k), sys.at(b.k + 1)
    x_pred = mv(prev.A, b.xcheck) + mv(prev.B, np.asarray(u, float))
    S_pred = sym(prev.A @ b.Sigma @ prev.A.T + prev.W)
    xc, Sigma = _measurement_update(x_pred, S_pred, cur.C, cur.V, y_next, b.k + 1)
    return TriggerBelief(xc, Sigma, b.k + 1)


def trigger_signals(
    tb: TriggerBelief | None,
    cb: ControllerBelief,
    sys: TimeVaryingLinearSystem,
    observation,
    with_gain: bool = True,
) -> TriggerSignals:
    """Quantities the trigger feeds into its decision at time k.

    ``observation`` is x_k under perfect information and y_k otherwise.  With
    ``with_gain=False`` the controller gain is skipped (state-independent
    triggers never read it, and it cannot be formed once P has diverged).
    """
    obs = np.asarray(observation, float)
    if not sys.imperfect:
        if tb is not None:
            raise PatternError("perfect information has no trigger-side filter")
        return TriggerSignals(eps=obs - cb.xhat)
    if tb is None:
        raise PatternError("imperfect information needs the trigger-side belief")
    if tb.k != cb.k:
        raise ValueError(f"belief times differ: trigger k={tb.k}, controller k={cb.k}")
    st = sys.at(cb.k)
    return TriggerSignals(
        eps=tb.xcheck - cb.xhat,
        nu=obs - mv(st.C, cb.xhat),
        K=controller_gain(cb.P, sys, cb.k) if with_gain else None,
    )
