"""Control and triggering policies.

The control side is certainty equivalence, u_k = -L_k xhat_k.  The trigger
side transmits when the value of information is non-negative.  Two VoI
realizations are provided: the closed-form rollout against always-transmit
(``voi_perfect``/``voi_imperfect``) and, for scalar perfect-information
plants, the exact VoI read from a tabulated value function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimators import TriggerSignals
from .model import CostSpec, PatternError, TimeVaryingLinearSystem
from .numerics import SingularityError, mv, solve_spd, sym, tr_
from .riccati import RiccatiSolution

__all__ = [
    "VoiResult",
    "PeriodicSpec",
    "ScalarDpTable",
    "ce_control",
    "voi_perfect",
    "voi_imperfect",
    "voi_imperfect_compiled",
    "periodic_trigger",
    "scalar_dp_value",
    "exact_voi_scalar",
    "TriggerContext",
    "VoiTrigger",
    "PeriodicTrigger",
    "NeverTrigger",
    "ExactScalarTrigger",
    "CertaintyEquivalence",
]


@dataclass(frozen=True, eq=False)
class VoiResult:
    """VoI value with its breakdown: value = instantaneous - price + tail."""

    value: np.ndarray | float
    instantaneous: np.ndarray | float
    price: float
    tail: np.ndarray | float
    extrapolated: bool = False

    @property
    def transmit(self):
        # ties go to transmission
        return np.asarray(self.value) >= 0.0


@dataclass(frozen=True)
class PeriodicSpec:
    period: int
    offset: int = 0

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("period must be a positive integer")
        if not 0 <= self.offset < self.period:
            raise ValueError("offset must lie in [0, period)")


def periodic_trigger(spec: PeriodicSpec, k: int) -> int:
    return int((k - spec.offset) % spec.period == 0)


def ce_control(ric: RiccatiSolution, k: int, xhat) -> np.ndarray:
    if not 0 <= k <= ric.N:
        raise IndexError(f"time index {k} outside 0..{ric.N}")
    return -mv(ric.L[k], np.asarray(xhat, float))


def _quad(x, M):
    return np.sum(x * mv(M, x), axis=-1)


def voi_perfect(ric: RiccatiSolution, sys: TimeVaryingLinearSystem, k: int, e, theta_k: float) -> VoiResult:
    """e' A' Gamma_{k+1} A e - theta_k; the rollout tail vanishes for period 1."""
    e = np.asarray(e, float)
    Ae = mv(sys.at(k).A, e)
    inst = _quad(Ae, ric.Gamma[k + 1])
    return VoiResult(value=inst - theta_k, instantaneous=inst, price=theta_k, tail=np.zeros_like(inst))


def voi_imperfect(
    ric: RiccatiSolution,
    sys: TimeVaryingLinearSystem,
    k: int,
    signals: TriggerSignals,
    Sigma_k,
    P_k,
    theta_k: float,
) -> VoiResult:
    """Rollout VoI against always-transmit under measurement feedback.

    The two hypothetical futures (no transmission / transmission at k) are
    propagated forward to N with the controller filter running at every
    step afterwards.  ``signals``, ``Sigma_k`` and ``P_k`` may carry leading
    batch axes.
    """
    if not sys.imperfect:
        raise PatternError("voi_imperfect needs the imperfect information pattern")
    N = sys.N
    st = sys.at(k)
    A, W = st.A, st.W
    eps, nu, K = np.asarray(signals.eps, float), np.asarray(signals.nu, float), np.asarray(signals.K, float)
    Ae = mv(A, eps)
    Knu = mv(K, nu)
    inst = np.sum(Knu * mv(ric.Gamma[k + 1], 2.0 * Ae - Knu), axis=-1)
    tail = np.zeros_like(inst)
    if k + 2 <= N:
        P_k = np.asarray(P_k, float)
        Sigma_k = np.asarray(Sigma_k, float)
        batch = np.broadcast_shapes(inst.shape, P_k.shape[:-2], Sigma_k.shape[:-2])
        n = A.shape[0]
        APA = A @ P_k @ A.T
        P0 = APA + W
        P1 = P0 - K @ st.C @ P_k @ A.T
        # branch axis first: index 0 = no transmission at k, 1 = transmission
        P = np.stack(np.broadcast_arrays(P0, P1))
        P = np.broadcast_to(P, (2,) + batch + (n, n)).copy()
        Pbar = np.broadcast_to(A @ Sigma_k @ A.T + W, (2,) + batch + (n, n)).copy()
        ebar = np.stack(np.broadcast_arrays(Ae, Ae - Knu))
        ebar = np.broadcast_to(ebar, (2,) + batch + (n,)).copy()
        for t in range(k + 1, N):
            s = sys.at(t)
            C, V, At = s.C, s.V, s.A
            CP = C @ P
            Kt = tr_(solve_spd(CP @ C.T + V, CP @ At.T, role="innovation covariance", k=t))
            F = At - Kt @ C
            ebar = mv(F, ebar)
            # symmetrized each step; without it P drifts over long horizons
            Pbar = sym(F @ Pbar @ tr_(F) + s.W + Kt @ V @ tr_(Kt))
            P = sym(At @ P @ At.T + s.W - Kt @ CP @ At.T)
            G = ric.Gamma[t + 1]
            term = _quad(ebar, G) + np.sum(G * Pbar, axis=(-1, -2))
            tail = tail + (term[0] - term[1])
    return VoiResult(value=inst - theta_k + tail, instantaneous=inst, price=theta_k, tail=tail)


def _time_stacks(sys: TimeVaryingLinearSystem):
    T = sys.N + 1
    return tuple(
        np.ascontiguousarray(np.broadcast_to(np.asarray(seq, float), (T,) + np.shape(seq[0])))
        for seq in (sys.A, sys.C, sys.W, sys.V)
    )


def voi_imperfect_compiled(
    ric: RiccatiSolution,
    sys: TimeVaryingLinearSystem,
    k: int,
    signals: TriggerSignals,
    Sigma_k,
    P_k,
    theta_k: float,
    stacks=None,
) -> VoiResult:
    """:func:`voi_imperfect` for a batch of runs, tail loop compiled.

    ``signals`` carry shape (R, ...) and ``P_k`` is (R, n, n); ``Sigma_k`` is
    shared.  ``stacks`` caches the time-stacked (A, C, W, V).
    """
    from ._kernels import voi_tail_batch

    if not sys.imperfect:
        raise PatternError("voi_imperfect needs the imperfect information pattern")
    N = sys.N
    st = sys.at(k)
    A, W = st.A, st.W
    eps, nu, K = np.asarray(signals.eps, float), np.asarray(signals.nu, float), np.asarray(signals.K, float)
    Ae = mv(A, eps)
    Knu = mv(K, nu)
    inst = np.sum(Knu * mv(ric.Gamma[k + 1], 2.0 * Ae - Knu), axis=-1)
    if k + 2 > N:
        tail = np.zeros_like(inst)
    else:
        R, n = eps.shape
        P_k = np.broadcast_to(np.asarray(P_k, float), (R, n, n))
        P0 = A @ P_k @ A.T + W
        P1 = P0 - K @ st.C @ P_k @ A.T
        Pbar = np.asarray(A @ np.asarray(Sigma_k, float) @ A.T + W)
        stacks = stacks or _time_stacks(sys)
        tail, bad = voi_tail_batch(
            *stacks, np.ascontiguousarray(ric.Gamma), k, N,
            np.ascontiguousarray(np.stack([Ae, Ae - Knu])),
            np.ascontiguousarray(np.stack([P0, P1])),
            np.ascontiguousarray(Pbar),
        )
        if bad >= 0:
            raise SingularityError("innovation covariance", int(bad))
    return VoiResult(value=inst - theta_k + tail, instantaneous=inst, price=theta_k, tail=tail)


# ---------------------------------------------------------------------------
# scalar value-function oracle


@dataclass(frozen=True, eq=False)
class ScalarDpTable:
    """Tabulated trigger value function for a scalar perfect-information plant.

    ``V[k]`` samples V^e_k on ``grid`` for k = 0..N+1; ``rho[k]`` is the
    continuation gap E[V_{k+1} | no transmission] - E[V_{k+1} | transmission]
    and ``transmit_region[k]`` the minimizing decision, both for k = 0..N.
    """

    grid: np.ndarray
    V: np.ndarray
    rho: np.ndarray
    transmit_region: np.ndarray
    quadrature: int

    def rho_at(self, k: int, e):
        return _interp_lin(np.asarray(e, float), self.grid, self.rho[k])


def _interp_lin(xq, grid, vals):
    """Piecewise-linear interpolation with linear extrapolation from the end segments."""
    out = np.interp(xq, grid, vals)
    lo, hi = xq < grid[0], xq > grid[-1]
    if np.any(lo):
        s = (vals[1] - vals[0]) / (grid[1] - grid[0])
        out = np.where(lo, vals[0] + s * (xq - grid[0]), out)
    if np.any(hi):
        s = (vals[-1] - vals[-2]) / (grid[-1] - grid[-2])
        out = np.where(hi, vals[-1] + s * (xq - grid[-1]), out)
    return out


def default_half_width(sys: TimeVaryingLinearSystem, cost: CostSpec, ric: RiccatiSolution) -> float:
    """Grid half-width covering every no-transmission interval plus noise spread.

    Beyond the largest threshold the value function is flat, so the grid only
    needs to reach past sqrt(theta / (a^2 Gamma_{k+1})) with some margin.
    """
    N = sys.N
    sw = math.sqrt(max(float(sys.at(k).W[0, 0]) for k in range(N + 1)))
    th = cost.thetas()
    bound = 0.0
    for k in range(N):
        gain = float(sys.at(k).A[0, 0]) ** 2 * float(ric.Gamma[k + 1][0, 0])
        if th[k] <= 0:
            continue
        if gain <= 0:
            bound = math.inf
            break
        bound = max(bound, math.sqrt(th[k] / gain))
    if math.isfinite(bound):
        return 1.25 * bound + 6.0 * sw
    # fall back to the open-loop error spread
    a = abs(float(sys.at(0).A[0, 0]))
    var = sw**2 / (1 - a * a) if a < 1 else sw**2 * sum(a ** (2 * j) for j in range(N))
    return 6.0 * math.sqrt(var)


def scalar_dp_value(
    sys: TimeVaryingLinearSystem,
    cost: CostSpec,
    ric: RiccatiSolution,
    half_width: float | None = None,
    n_points: int = 2001,
    quadrature: int = 32,
) -> ScalarDpTable:
    if sys.n != 1 or sys.imperfect:
        raise ValueError("scalar_dp_value supports scalar perfect-information systems only")
    if half_width is None:
        half_width = default_half_width(sys, cost, ric)
    if n_points < 3 or n_points % 2 == 0:
        raise ValueError("n_points must be odd and >= 3 so the grid contains 0")
    # mirror the positive half so the grid is exactly symmetric
    pos = np.linspace(0.0, half_width, n_points // 2 + 1)
    grid = np.concatenate([-pos[:0:-1], pos])
    nodes, weights = np.polynomial.hermite.hermgauss(quadrature)
    weights = weights / math.sqrt(math.pi)

    N = sys.N
    V = np.zeros((N + 2, grid.size))
    rho = np.zeros((N + 1, grid.size))
    region = np.zeros((N + 1, grid.size), dtype=bool)
    th = cost.thetas()
    for k in range(N, -1, -1):
        st = sys.at(k)
        a, w_var = float(st.A[0, 0]), float(st.W[0, 0])
        g = float(ric.Gamma[k + 1][0, 0])
        spread = math.sqrt(2.0 * w_var) * nodes
        Vn = V[k + 1]
        ev0 = _interp_lin(a * grid[:, None] + spread[None, :], grid, Vn) @ weights
        ev1 = float(_interp_lin(spread, grid, Vn) @ weights)
        stay = a * a * g * grid**2 + ev0
        send = th[k] + ev1
        # ties, up to rounding in the table, go to transmission
        region[k] = send <= stay + 1e-12 * np.maximum(1.0, np.abs(stay))
        rho[k] = ev0 - ev1
        V[k] = g * w_var + np.minimum(stay, send)
    return ScalarDpTable(grid=grid, V=V, rho=rho, transmit_region=region, quadrature=quadrature)


def exact_voi_scalar(table: ScalarDpTable, ric: RiccatiSolution, sys: TimeVaryingLinearSystem, k: int, e, theta_k: float) -> VoiResult:
    e = np.asarray(e, float)
    a = float(sys.at(k).A[0, 0])
    inst = a * a * float(ric.Gamma[k + 1][0, 0]) * e**2
    rho = table.rho_at(k, e)
    outside = bool(np.any(np.abs(e) > table.grid[-1]))
    return VoiResult(value=inst - theta_k + rho, instantaneous=inst, price=theta_k, tail=rho, extrapolated=outside)


# ---------------------------------------------------------------------------
# policy objects consumed by the simulator


@dataclass(frozen=True, eq=False)
class TriggerContext:
    """What the trigger sees at time k (arrays may be batched over runs)."""

    k: int
    signals: TriggerSignals
    P: np.ndarray
    Sigma: np.ndarray | None
    theta: float


class VoiTrigger:
    """Transmit when the always-transmit rollout VoI is non-negative.

    Batched imperfect-information decisions go through the compiled tail
    loop unless ``compiled=False``.
    """

    name = "voi"

    def __init__(self, sys: TimeVaryingLinearSystem, ric: RiccatiSolution, compiled: bool = True):
        self.sys, self.ric = sys, ric
        self.compiled = compiled and sys.imperfect
        self._stacks = _time_stacks(sys) if self.compiled else None

    def decide(self, ctx: TriggerContext):
        if self.compiled and np.ndim(ctx.signals.eps) == 2:
            r = voi_imperfect_compiled(self.ric, self.sys, ctx.k, ctx.signals, ctx.Sigma, ctx.P, ctx.theta, self._stacks)
        elif self.sys.imperfect:
            r = voi_imperfect(self.ric, self.sys, ctx.k, ctx.signals, ctx.Sigma, ctx.P, ctx.theta)
        else:
            r = voi_perfect(self.ric, self.sys, ctx.k, ctx.signals.eps, ctx.theta)
        return r.transmit.astype(np.int8), np.asarray(r.value, float)


class PeriodicTrigger:
    uses_gain = False

    def __init__(self, period: int = 1, offset: int = 0):
        self.spec = PeriodicSpec(period, offset)
        self.name = "always" if period == 1 else f"periodic({period},{offset})"

    def decide(self, ctx: TriggerContext):
        shape = np.shape(ctx.signals.eps)[:-1]
        return np.full(shape, periodic_trigger(self.spec, ctx.k), dtype=np.int8), np.full(shape, np.nan)


class NeverTrigger:
    name = "never"
    uses_gain = False

    def decide(self, ctx: TriggerContext):
        shape = np.shape(ctx.signals.eps)[:-1]
        return np.zeros(shape, dtype=np.int8), np.full(shape, np.nan)


class ExactScalarTrigger:
    """Optimal trigger for scalar perfect-information plants via the DP table."""

    name = "exact_scalar_dp"

    def __init__(self, sys: TimeVaryingLinearSystem, cost: CostSpec, ric: RiccatiSolution, **table_kw):
        self.sys, self.ric = sys, ric
        self.table = scalar_dp_value(sys, cost, ric, **table_kw)

    def decide(self, ctx: TriggerContext):
        r = exact_voi_scalar(self.table, self.ric, self.sys, ctx.k, ctx.signals.eps[..., 0], ctx.theta)
        return r.transmit.astype(np.int8), np.asarray(r.value, float)


@dataclass(frozen=True, eq=False)
class CertaintyEquivalence:
    ric: RiccatiSolution
    name: str = field(default="ce", init=False)

    def __call__(self, k: int, xhat) -> np.ndarray:
        return ce_control(self.ric, k, xhat)
