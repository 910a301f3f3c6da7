"""Finite-horizon linear Gaussian plant, quadratic cost, and ZOH conversion."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import expm

from .numerics import DimensionError, mv

__all__ = [
    "InfoPattern",
    "Stage",
    "TimeVaryingLinearSystem",
    "CostSpec",
    "ContinuousLinearSystem",
    "Diagnostic",
    "validate_system",
    "zoh_discretize",
    "pendulum_continuous",
    "step_process",
    "measure",
    "PatternError",
]


class InfoPattern(str, enum.Enum):
    PERFECT = "perfect"
    IMPERFECT = "imperfect"


class PatternError(RuntimeError):
    """Operation not available under the system's information pattern."""


def _as_seq(value, ndim: int) -> tuple[np.ndarray, ...]:
    """Normalize a single matrix or a sequence of matrices to a tuple."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == ndim:
        return (arr,)
    if arr.ndim == ndim + 1:
        return tuple(arr)
    if isinstance(value, (list, tuple)):
        return tuple(np.asarray(v, dtype=float) for v in value)
    raise DimensionError(f"expected {ndim}-d entries, got array of shape {arr.shape}")


def _pick(seq: Sequence, k: int):
    # length-1 sequences broadcast over the horizon
    return seq[0] if len(seq) == 1 else seq[k]


class Stage(NamedTuple):
    A: np.ndarray
    B: np.ndarray
    W: np.ndarray
    C: np.ndarray | None
    V: np.ndarray | None


@dataclass(frozen=True, eq=False)
class TimeVaryingLinearSystem:
    """x_{k+1} = A_k x_k + B_k u_k + w_k, optionally y_k = C_k x_k + v_k.

    Every matrix field is a tuple holding either one entry (time-invariant,
    broadcast over k) or one entry per time step k = 0..N.
    """

    N: int
    A: tuple
    B: tuple
    W: tuple
    m0: np.ndarray
    M0: np.ndarray
    C: tuple | None = None
    V: tuple | None = None
    info_pattern: InfoPattern = InfoPattern.PERFECT

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "A", _as_seq(self.A, 2))
        set_(self, "B", _as_seq(self.B, 2))
        set_(self, "W", _as_seq(self.W, 2))
        set_(self, "m0", np.atleast_1d(np.asarray(self.m0, dtype=float)))
        set_(self, "M0", np.atleast_2d(np.asarray(self.M0, dtype=float)))
        if self.C is not None:
            set_(self, "C", _as_seq(self.C, 2))
        if self.V is not None:
            set_(self, "V", _as_seq(self.V, 2))
        set_(self, "info_pattern", InfoPattern(self.info_pattern))

    @classmethod
    def time_invariant(cls, A, B, W, m0, M0, N, C=None, V=None):
        pattern = InfoPattern.PERFECT if C is None else InfoPattern.IMPERFECT
        return cls(N=N, A=A, B=B, W=W, m0=m0, M0=M0, C=C, V=V, info_pattern=pattern)

    @property
    def n(self) -> int:
        return self.A[0].shape[0]

    @property
    def m(self) -> int:
        return self.B[0].shape[1]

    @property
    def p(self) -> int:
        return 0 if self.C is None else self.C[0].shape[0]

    @property
    def imperfect(self) -> bool:
        return self.info_pattern is InfoPattern.IMPERFECT

    def at(self, k: int) -> Stage:
        if not 0 <= k <= self.N:
            raise IndexError(f"time index {k} outside 0..{self.N}")
        C = _pick(self.C, k) if self.C is not None else None
        V = _pick(self.V, k) if self.V is not None else None
        return Stage(_pick(self.A, k), _pick(self.B, k), _pick(self.W, k), C, V)


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Stage weights Q_k (k=0..N+1), R_k (k=0..N), prices ell_k and multiplier.

    As for the system, length-1 sequences broadcast.  ``Q_final`` overrides the
    terminal weight Q_{N+1} when the running weights are broadcast.
    """

    N: int
    Q: tuple
    R: tuple
    ell: tuple = (1.0,)
    lam: float = 0.0
    Q_final: np.ndarray | None = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "Q", _as_seq(self.Q, 2))
        set_(self, "R", _as_seq(self.R, 2))
        set_(self, "ell", tuple(float(v) for v in np.atleast_1d(np.asarray(self.ell, dtype=float))))
        set_(self, "lam", float(self.lam))
        if self.Q_final is not None:
            set_(self, "Q_final", np.atleast_2d(np.asarray(self.Q_final, dtype=float)))

    def Q_at(self, k: int) -> np.ndarray:
        if not 0 <= k <= self.N + 1:
            raise IndexError(f"time index {k} outside 0..{self.N + 1}")
        if k == self.N + 1 and self.Q_final is not None:
            return self.Q_final
        return _pick(self.Q, k)

    def R_at(self, k: int) -> np.ndarray:
        if not 0 <= k <= self.N:
            raise IndexError(f"time index {k} outside 0..{self.N}")
        return _pick(self.R, k)

    def ell_at(self, k: int) -> float:
        return _pick(self.ell, k)

    def theta(self, k: int) -> float:
        return self.ell_at(k) * self.lam

    def thetas(self) -> np.ndarray:
        return np.array([self.theta(k) for k in range(self.N + 1)])

    def with_lambda(self, lam: float) -> "CostSpec":
        return CostSpec(N=self.N, Q=self.Q, R=self.R, ell=self.ell, lam=lam, Q_final=self.Q_final)


@dataclass(frozen=True)
class ContinuousLinearSystem:
    Ac: np.ndarray
    Bc: np.ndarray
    dt: float


@dataclass(frozen=True)
class Diagnostic:
    field: str
    k: int | None
    message: str
    severity: str = "error"

    def __str__(self) -> str:
        where = "" if self.k is None else f"[k={self.k}]"
        return f"{self.severity}: {self.field}{where}: {self.message}"


def _check_pd(M: np.ndarray, strict: bool, tol: float = 1e-12) -> str | None:
    if not np.all(np.isfinite(M)):
        return "non-finite entries"
    scale = max(1.0, float(np.max(np.abs(M), initial=0.0)))
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-10 * scale:
        return "not symmetric"
    low = float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())
    if strict and low <= tol * scale:
        return f"not PD (min eigenvalue {low:.3e})"
    if not strict and low < -1e-10 * scale:
        return f"not PSD (min eigenvalue {low:.3e})"
    return None


def _seq_len_ok(seq, N: int, full: int) -> bool:
    return len(seq) in (1, full)


def validate_system(sys: TimeVaryingLinearSystem, cost: CostSpec) -> list[Diagnostic]:
    """Check the standing model assumptions; never raises.

    Rank deficiency of the n-step controllability/observability matrices is
    reported with severity ``warning``; everything else is an ``error``.
    """
    out: list[Diagnostic] = []
    N = sys.N
    if N < 0:
        return [Diagnostic("N", None, "horizon must be non-negative")]
    if cost.N != N:
        out.append(Diagnostic("N", None, f"horizon mismatch: system N={N}, cost N={cost.N}"))

    n = sys.A[0].shape[0] if sys.A[0].ndim == 2 else -1
    m = sys.B[0].shape[1] if sys.B[0].ndim == 2 else -1

    def seqs():
        yield "A", sys.A, (n, n), None
        yield "B", sys.B, (n, m), None
        yield "W", sys.W, (n, n), True
        if sys.C is not None:
            yield "C", sys.C, (sys.C[0].shape[0], n), None
        if sys.V is not None:
            p = sys.C[0].shape[0] if sys.C is not None else sys.V[0].shape[0]
            yield "V", sys.V, (p, p), True

    for name, seq, shape, pd in seqs():
        if not _seq_len_ok(seq, N, N + 1):
            out.append(Diagnostic(name, None, f"sequence length {len(seq)} is neither 1 nor N+1={N + 1}"))
            continue
        for k, M in enumerate(seq):
            if M.shape != shape:
                out.append(Diagnostic(name, k, f"shape {M.shape}, expected {shape}"))
            elif not np.all(np.isfinite(M)):
                out.append(Diagnostic(name, k, "non-finite entries"))
            elif pd:
                msg = _check_pd(M, strict=True)
                if msg:
                    out.append(Diagnostic(name, k, msg))

    if sys.m0.shape != (n,):
        out.append(Diagnostic("m0", None, f"shape {sys.m0.shape}, expected {(n,)}"))
    if sys.M0.shape != (n, n):
        out.append(Diagnostic("M0", None, f"shape {sys.M0.shape}, expected {(n, n)}"))
    else:
        msg = _check_pd(sys.M0, strict=False)
        if msg:
            out.append(Diagnostic("M0", None, msg))

    has_cv = sys.C is not None and sys.V is not None
    if sys.imperfect and not has_cv:
        out.append(Diagnostic("info_pattern", None, "imperfect information requires C and V"))
    if not sys.imperfect and (sys.C is not None or sys.V is not None):
        out.append(Diagnostic("info_pattern", None, "perfect information must not define C or V"))

    if not _seq_len_ok(cost.Q, N, N + 2):
        out.append(Diagnostic("Q", None, f"sequence length {len(cost.Q)} is neither 1 nor N+2={N + 2}"))
    else:
        Qs = list(cost.Q) + ([cost.Q_final] if cost.Q_final is not None else [])
        for k, M in enumerate(Qs):
            kk = N + 1 if (cost.Q_final is not None and k == len(Qs) - 1) else k
            if M.shape != (n, n):
                out.append(Diagnostic("Q", kk, f"shape {M.shape}, expected {(n, n)}"))
                continue
            msg = _check_pd(M, strict=False)
            if msg:
                out.append(Diagnostic("Q", kk, msg))
    if not _seq_len_ok(cost.R, N, N + 1):
        out.append(Diagnostic("R", None, f"sequence length {len(cost.R)} is neither 1 nor N+1={N + 1}"))
    else:
        for k, M in enumerate(cost.R):
            if M.shape != (m, m):
                out.append(Diagnostic("R", k, f"shape {M.shape}, expected {(m, m)}"))
                continue
            msg = _check_pd(M, strict=True)
            if msg:
                out.append(Diagnostic("R", k, msg))
    if not _seq_len_ok(cost.ell, N, N + 1):
        out.append(Diagnostic("ell", None, f"sequence length {len(cost.ell)} is neither 1 nor N+1={N + 1}"))
    for k, v in enumerate(cost.ell):
        if not (np.isfinite(v) and v >= 0):
            out.append(Diagnostic("ell", k, f"price {v} must be finite and >= 0"))
    if not (np.isfinite(cost.lam) and cost.lam >= 0):
        out.append(Diagnostic("lambda", None, f"multiplier {cost.lam} must be finite and >= 0"))

    if any(d.severity == "error" for d in out):
        return out
    out.extend(_rank_warnings(sys))
    return out


def _rank_warnings(sys: TimeVaryingLinearSystem) -> list[Diagnostic]:
    n = sys.n
    steps = min(sys.N + 1, n)
    # n-step controllability matrix from k=0: [Phi(s,1)B_0, ..., B_{s-1}]
    blocks = []
    for j in range(steps):
        blk = sys.at(j).B
        for i in range(j + 1, steps):
            blk = sys.at(i).A @ blk
        blocks.append(blk)
    out = []
    if np.linalg.matrix_rank(np.hstack(blocks)) < n:
        out.append(Diagnostic("A,B", None, f"not controllable within {steps} steps", "warning"))
    if sys.C is not None:
        rows, Phi = [], np.eye(n)
        for j in range(steps):
            st = sys.at(j)
            rows.append(st.C @ Phi)
            Phi = st.A @ Phi
        if np.linalg.matrix_rank(np.vstack(rows)) < n:
            out.append(Diagnostic("A,C", None, f"not observable within {steps} steps", "warning"))
    return out


def zoh_discretize(c: ContinuousLinearSystem) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order-hold discretization via the augmented matrix exponential."""
    Ac = np.atleast_2d(np.asarray(c.Ac, dtype=float))
    Bc = np.asarray(c.Bc, dtype=float).reshape(Ac.shape[0], -1)
    dt = float(c.dt)
    if not (np.all(np.isfinite(Ac)) and np.all(np.isfinite(Bc)) and np.isfinite(dt)):
        raise ValueError("non-finite entries in continuous model")
    if dt <= 0:
        raise ValueError("dt must be positive")
    n, m = Bc.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = Ac
    M[:n, n:] = Bc
    E = expm(M * dt)
    return E[:n, :n], E[:n, n:]


def pendulum_continuous(I=0.006, m=0.2, l=0.3, g=9.81, M=0.5, b=0.1, dt=0.01) -> ContinuousLinearSystem:
    """Cart-pole linearized about the upright equilibrium.

    State ordering is [cart position, cart velocity, pitch angle, pitch rate];
    input is the force on the cart.
    """
    J = I + m * l**2
    p = I * (M + m) + M * m * l**2
    Ac = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -J * b / p, m**2 * g * l**2 / p, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, -m * l * b / p, m * g * l * (M + m) / p, 0.0],
    ])
    Bc = np.array([[0.0], [J / p], [0.0], [m * l / p]])
    return ContinuousLinearSystem(Ac, Bc, dt)


def step_process(sys: TimeVaryingLinearSystem, k: int, x, u, w) -> np.ndarray:
    st = sys.at(k)
    return mv(st.A, np.asarray(x, float)) + mv(st.B, np.asarray(u, float)) + np.asarray(w, float)


def measure(sys: TimeVaryingLinearSystem, k: int, x, v) -> np.ndarray:
    if not sys.imperfect:
        raise PatternError("measure() requires the imperfect information pattern")
    st = sys.at(k)
    return mv(st.C, np.asarray(x, float)) + np.asarray(v, float)
