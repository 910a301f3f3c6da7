"""Closed-loop simulation with one-step-delayed transmissions.

Each run owns one :class:`~etvoi.numerics.RngStream` (stream index = run
index) from which its whole noise panel (x_0, w_0..w_N, v_0..v_N) is drawn up
front.  Policies compared on the same base seed therefore see identical noise.
Runs are advanced in lockstep as a batch; every per-run quantity carries a
leading run axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .estimators import (
    controller_intermittent_step,
    controller_prior,
    perfect_controller_step,
    trigger_kf_init,
    trigger_kf_step,
    trigger_signals,
)
from .model import CostSpec, TimeVaryingLinearSystem
from .numerics import RngStream, mv, psd_factor
from .policies import CertaintyEquivalence, TriggerContext, VoiTrigger
from .riccati import RiccatiSolution

__all__ = [
    "NoisePanel",
    "draw_noise_panel",
    "TrajectoryRecord",
    "RunSummary",
    "TradeoffPoint",
    "PairedResult",
    "simulate_batch",
    "run_trajectory",
    "monte_carlo",
    "paired_comparison",
    "lambda_sweep",
]

CHUNK = 500  # runs per lockstep batch; fixed so results do not depend on n_runs


@dataclass(frozen=True, eq=False)
class NoisePanel:
    x0: np.ndarray  # (R, n)
    w: np.ndarray  # (R, N+1, n)
    v: np.ndarray | None  # (R, N+1, p)
    base_seed: int
    streams: np.ndarray  # (R,) stream indices

    @property
    def n_runs(self) -> int:
        return self.x0.shape[0]


def _noise_block(factors: Sequence[np.ndarray], N: int, rng: RngStream) -> np.ndarray:
    dim = factors[0].shape[0]
    z = rng.standard_normal((N + 1, dim))
    if len(factors) == 1:
        return z @ factors[0].T
    return np.stack([factors[k] @ z[k] for k in range(N + 1)])


def draw_noise_panel(sys: TimeVaryingLinearSystem, base_seed: int, streams: Sequence[int]) -> NoisePanel:
    """Draw x_0, then w_0..w_N, then v_0..v_N from each run's stream."""
    N = sys.N
    Lw = [psd_factor(W) for W in sys.W]
    Lv = [psd_factor(V) for V in sys.V] if sys.imperfect else None
    L0 = psd_factor(sys.M0)
    x0, w, v = [], [], []
    for r in streams:
        rng = RngStream(base_seed, int(r))
        x0.append(sys.m0 + L0 @ rng.standard_normal(sys.n))
        w.append(_noise_block(Lw, N, rng))
        if Lv is not None:
            v.append(_noise_block(Lv, N, rng))
    return NoisePanel(
        x0=np.array(x0),
        w=np.array(w),
        v=np.array(v) if Lv is not None else None,
        base_seed=int(base_seed),
        streams=np.asarray(streams, dtype=np.int64),
    )


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """Per-step log of one run (or a batch of runs along a leading axis).

    ``x`` has N+2 rows (terminal state included); everything else N+1.
    ``Sigma`` is shared by all runs because the trigger-side filter does not
    depend on the data.  Imperfect-only fields are ``None`` otherwise.
    """

    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    delta: np.ndarray
    voi: np.ndarray
    xhat: np.ndarray
    P: np.ndarray | None
    stage_cost: np.ndarray
    terminal_cost: np.ndarray
    price: np.ndarray
    ell: np.ndarray
    y: np.ndarray | None = None
    v: np.ndarray | None = None
    xcheck: np.ndarray | None = None
    Sigma: np.ndarray | None = None
    eps: np.ndarray | None = None
    nu: np.ndarray | None = None
    base_seed: int = 0
    stream_index: np.ndarray | int = 0

    @property
    def batched(self) -> bool:
        return self.delta.ndim == 2

    def select(self, i: int) -> "TrajectoryRecord":
        if not self.batched:
            raise ValueError("record is not batched")

        def pick(a):
            return None if a is None else a[i]

        return TrajectoryRecord(
            x=self.x[i], u=self.u[i], w=self.w[i], delta=self.delta[i], voi=self.voi[i],
            xhat=self.xhat[i], P=pick(self.P), stage_cost=self.stage_cost[i],
            terminal_cost=self.terminal_cost[i], price=self.price[i], ell=self.ell,
            y=pick(self.y), v=pick(self.v), xcheck=pick(self.xcheck), Sigma=self.Sigma,
            eps=pick(self.eps), nu=pick(self.nu), base_seed=self.base_seed,
            stream_index=int(self.stream_index[i]),
        )

    # per-run accounting, normalized by N+1 where the metrics are rates
    @property
    def horizon(self) -> int:
        return self.delta.shape[-1]

    @property
    def control_cost(self):
        return self.stage_cost.sum(axis=-1) + self.terminal_cost

    @property
    def J(self):
        return self.control_cost / self.horizon

    @property
    def R(self):
        return (self.delta * self.ell).sum(axis=-1) / self.horizon

    @property
    def Psi(self):
        return self.control_cost + self.price.sum(axis=-1)

    @property
    def transmissions(self):
        return self.delta.sum(axis=-1)


def simulate_batch(
    sys: TimeVaryingLinearSystem,
    cost: CostSpec,
    ric: RiccatiSolution,
    trigger,
    control: Callable | None,
    panel: NoisePanel,
    keep_beliefs: bool = True,
) -> TrajectoryRecord:
    """Run every trajectory of ``panel`` under the given policy pair.

    Per step k: form y_k, update the trigger-side filter, compute the trigger
    signals against the controller belief, decide delta_k, apply u_k from the
    belief built from transmissions before k, book the stage cost, then feed
    (delta_k, payload_k) to the controller belief for k+1 and step the plant.
    """
    control = control or CertaintyEquivalence(ric)
    N, R = sys.N, panel.n_runs
    n, m = sys.n, sys.m
    imperfect = sys.imperfect
    th = cost.thetas()
    uses_gain = getattr(trigger, "uses_gain", True)

    xs = np.empty((R, N + 2, n))
    us = np.empty((R, N + 1, m))
    deltas = np.empty((R, N + 1), dtype=np.int8)
    vois = np.empty((R, N + 1))
    xhats = np.empty((R, N + 1, n))
    stage = np.empty((R, N + 1))
    Ps = np.empty((R, N + 1, n, n)) if keep_beliefs else None
    if imperfect:
        p = sys.p
        ys = np.empty((R, N + 1, p))
        xchecks = np.empty((R, N + 1, n))
        Sigmas = np.empty((N + 1, n, n))
        epss = np.empty((R, N + 1, n))
        nus = np.empty((R, N + 1, p))

    cb = controller_prior(sys)
    cb = type(cb)(np.broadcast_to(cb.xhat, (R, n)).copy(), np.broadcast_to(cb.P, (R, n, n)).copy(), 0)
    tb = None
    x = panel.x0.copy()
    u_prev = None
    for k in range(N + 1):
        st = sys.at(k)
        xs[:, k] = x
        if imperfect:
            y = mv(st.C, x) + panel.v[:, k]
            tb = trigger_kf_init(sys, y) if k == 0 else trigger_kf_step(tb, sys, u_prev, y)
            obs = y
        else:
            obs = x
        sig = trigger_signals(tb, cb, sys, obs, with_gain=uses_gain)
        ctx = TriggerContext(k=k, signals=sig, P=cb.P, Sigma=None if tb is None else tb.Sigma, theta=th[k])
        delta, voi = trigger.decide(ctx)
        delta = np.broadcast_to(np.asarray(delta, dtype=np.int8), (R,))
        u = control(k, cb.xhat)
        Q, Rk = cost.Q_at(k), cost.R_at(k)
        stage[:, k] = np.sum(x * mv(Q, x), axis=-1) + np.sum(u * mv(Rk, u), axis=-1)
        deltas[:, k] = delta
        vois[:, k] = voi
        us[:, k] = u
        xhats[:, k] = cb.xhat
        if keep_beliefs:
            Ps[:, k] = cb.P
        if imperfect:
            ys[:, k] = y
            xchecks[:, k] = tb.xcheck
            Sigmas[k] = tb.Sigma
            epss[:, k] = sig.eps
            nus[:, k] = sig.nu
        # the payload of step k reaches the controller only after u_k is out
        assert cb.k == k
        if imperfect and not delta.any():
            # nothing sent: prediction only (also avoids forming K from a diverged P)
            cb = perfect_controller_step(cb, sys, u, 0)
        elif imperfect:
            cb, _ = controller_intermittent_step(cb, sys, u, delta, y)
        else:
            cb = perfect_controller_step(cb, sys, u, delta, x)
        x = mv(st.A, x) + mv(st.B, u) + panel.w[:, k]
        u_prev = u
    xs[:, N + 1] = x
    Qf = cost.Q_at(N + 1)
    terminal = np.sum(x * mv(Qf, x), axis=-1)
    ell = np.array([cost.ell_at(k) for k in range(N + 1)])
    return TrajectoryRecord(
        x=xs, u=us, w=panel.w, delta=deltas, voi=vois, xhat=xhats, P=Ps,
        stage_cost=stage, terminal_cost=terminal, price=deltas * th, ell=ell,
        y=ys if imperfect else None, v=panel.v,
        xcheck=xchecks if imperfect else None, Sigma=Sigmas if imperfect else None,
        eps=epss if imperfect else None, nu=nus if imperfect else None,
        base_seed=panel.base_seed, stream_index=panel.streams,
    )


def run_trajectory(sys, cost, ric, trigger, control=None, rng: RngStream | None = None, *, seed: int = 0, stream_index: int = 0) -> TrajectoryRecord:
    if rng is not None:
        seed, stream_index = rng.seed, rng.stream_index
    panel = draw_noise_panel(sys, seed, [stream_index])
    return simulate_batch(sys, cost, ric, trigger, control, panel).select(0)


@dataclass(frozen=True, eq=False)
class RunSummary:
    """Monte-Carlo means and standard errors; per-run values kept for pairing."""

    n_runs: int
    J: np.ndarray
    R: np.ndarray
    Psi: np.ndarray
    transmissions: np.ndarray
    lam: float
    base_seed: int

    @staticmethod
    def _ms(a):
        return float(np.mean(a)), float(np.std(a, ddof=1) / math.sqrt(a.size))

    def stats(self) -> dict:
        out = {"n_runs": self.n_runs, "lambda": self.lam, "base_seed": self.base_seed}
        for name in ("J", "R", "Psi", "transmissions"):
            mean, se = self._ms(getattr(self, name))
            out[f"{name}_mean"], out[f"{name}_stderr"] = mean, se
        return out

    def __getattr__(self, name):
        # J_mean, J_stderr, R_mean, ... as attributes
        base, _, kind = name.rpartition("_")
        if kind in ("mean", "stderr") and base in ("J", "R", "Psi", "transmissions"):
            mean, se = self._ms(object.__getattribute__(self, base))
            return mean if kind == "mean" else se
        raise AttributeError(name)


def _chunks(n_runs: int):
    for start in range(0, n_runs, CHUNK):
        yield np.arange(start, min(start + CHUNK, n_runs))


def monte_carlo(sys, cost, ric, trigger, control=None, n_runs: int = 1000, base_seed: int = 0) -> RunSummary:
    if n_runs < 2:
        raise ValueError("n_runs must be at least 2")
    parts = []
    for idx in _chunks(n_runs):
        panel = draw_noise_panel(sys, base_seed, idx)
        rec = simulate_batch(sys, cost, ric, trigger, control, panel, keep_beliefs=False)
        parts.append((rec.J, rec.R, rec.Psi, rec.transmissions))
    J, R, Psi, tx = (np.concatenate(c) for c in zip(*parts))
    return RunSummary(n_runs=n_runs, J=J, R=R, Psi=Psi, transmissions=tx, lam=cost.lam, base_seed=base_seed)


@dataclass(frozen=True)
class PairedResult:
    mean_diff: float
    stderr: float
    n_runs: int
    diffs: np.ndarray


def paired_comparison(sys, cost, ric, trigger_a, trigger_b, n_runs: int, base_seed: int = 0, control=None) -> PairedResult:
    """Mean of Psi_A - Psi_B over runs that share every noise draw."""
    diffs = []
    for idx in _chunks(n_runs):
        panel = draw_noise_panel(sys, base_seed, idx)
        a = simulate_batch(sys, cost, ric, trigger_a, control, panel, keep_beliefs=False)
        b = simulate_batch(sys, cost, ric, trigger_b, control, panel, keep_beliefs=False)
        diffs.append(a.Psi - b.Psi)
    d = np.concatenate(diffs)
    se = float(np.std(d, ddof=1) / math.sqrt(d.size)) if d.size > 1 else math.nan
    return PairedResult(float(np.mean(d)), se, int(d.size), d)


@dataclass(frozen=True)
class TradeoffPoint:
    lam: float
    rate_mean: float
    rate_stderr: float
    J_mean: float
    J_stderr: float
    n_runs: int


def lambda_sweep(sys, cost, ric, lambdas, n_runs: int, base_seed: int = 0, trigger_factory=None) -> list[TradeoffPoint]:
    """Rate/performance pairs for each multiplier, all on the same noise panels.

    The Riccati solution does not depend on the multiplier and is reused.
    """
    trigger_factory = trigger_factory or (lambda s, c, r: VoiTrigger(s, r))
    lambdas = [float(v) for v in lambdas]
    if not lambdas:
        raise ValueError("empty multiplier list")
    if any(v < 0 for v in lambdas):
        raise ValueError("multipliers must be non-negative")
    out = []
    for lam in lambdas:
        c = cost.with_lambda(lam)
        s = monte_carlo(sys, c, ric, trigger_factory(sys, c, ric), None, n_runs, base_seed)
        out.append(TradeoffPoint(lam, s.R_mean, s.R_stderr, s.J_mean, s.J_stderr, n_runs))
    return out
