"""Dense linear-algebra helpers and reproducible Gaussian sampling.

Matrices and vectors are plain ``numpy.ndarray`` objects.  Most helpers accept
stacked inputs (leading batch axes) so that the simulation engine can advance
many independent trajectories in lockstep.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DimensionError",
    "SingularityError",
    "InvalidCovarianceError",
    "RngStream",
    "is_symmetric_psd",
    "solve_spd",
    "psd_factor",
    "sample_gaussian",
    "mv",
    "tr_",
    "sym",
]

RNG_ALGORITHM = "philox4x64-10"


class DimensionError(ValueError):
    pass


class SingularityError(np.linalg.LinAlgError):
    """A matrix that must be positive definite failed to factor."""

    def __init__(self, role: str, k: int | None = None):
        self.role = role
        self.k = k
        where = f" at k={k}" if k is not None else ""
        super().__init__(f"{role} is not positive definite{where}")


class InvalidCovarianceError(ValueError):
    pass


def tr_(M: np.ndarray) -> np.ndarray:
    """Matrix transpose over the last two axes."""
    return np.swapaxes(M, -1, -2)


def sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + tr_(M))


def mv(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Batched matrix-vector product ``A @ x`` with broadcasting."""
    return (A @ x[..., None])[..., 0]


def is_symmetric_psd(M, tol: float = 1e-10) -> bool:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        return False
    if np.max(np.abs(M - M.T), initial=0.0) > tol:
        return False
    return bool(np.linalg.eigvalsh(sym(M)).min(initial=0.0) >= -tol)


def solve_spd(M, B, role: str = "matrix", k: int | None = None) -> np.ndarray:
    """Solve ``M X = B`` for symmetric positive definite ``M``.

    Works on stacks: ``M`` of shape (..., n, n) and ``B`` of shape (..., n, r).
    The solve goes through a Cholesky factor; ``role`` names the matrix in the
    raised :class:`SingularityError` when the factorization fails.
    """
    M = np.asarray(M, dtype=float)
    B = np.asarray(B, dtype=float)
    if M.shape[-1] != M.shape[-2] or M.shape[-1] != B.shape[-2]:
        raise DimensionError(f"cannot solve {M.shape} against {B.shape}")
    if M.shape[-1] == 1:
        d = M[..., :1, :1]
        if not np.all(d > 0):
            raise SingularityError(role, k)
        return B / d
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise SingularityError(role, k) from None
    if L.ndim == 2 and B.ndim == 2:
        return np.linalg.solve(L.T, np.linalg.solve(L, B))
    shape = np.broadcast_shapes(L.shape[:-2], B.shape[:-2])
    Y = np.linalg.solve(np.broadcast_to(L, shape + L.shape[-2:]), np.broadcast_to(B, shape + B.shape[-2:]))
    return np.linalg.solve(np.broadcast_to(tr_(L), shape + L.shape[-2:]), Y)


def psd_factor(cov, tol: float = 1e-9) -> np.ndarray:
    """Return ``L`` with ``L @ L.T == cov`` for a symmetric PSD ``cov``.

    Uses Cholesky when ``cov`` is positive definite and falls back to a
    clipped eigen-decomposition for semidefinite input.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    scale = max(1.0, float(np.max(np.abs(cov), initial=0.0)))
    if np.max(np.abs(cov - cov.T), initial=0.0) > tol * scale:
        raise InvalidCovarianceError("covariance is not symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(sym(cov))
    if vals.min(initial=0.0) < -tol * scale:
        raise InvalidCovarianceError(f"covariance has negative eigenvalue {vals.min():.3e}")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


class RngStream:
    """Seeded Philox stream with a Box-Muller normal sampler.

    ``(seed, stream_index)`` forms the 128-bit Philox key, so distinct stream
    indices give non-overlapping sequences.  Normals come in pairs from two
    consecutive uniforms ``(u1, u2)``: ``r*cos(2*pi*u2)`` first, then
    ``r*sin(2*pi*u2)``, with ``r = sqrt(-2 log(1 - u1))``.  An odd request
    drops the sine half of the final pair.
    """

    algorithm_id = RNG_ALGORITHM

    def __init__(self, seed: int, stream_index: int = 0):
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if stream_index < 0:
            raise ValueError("stream_index must be non-negative")
        self.seed = int(seed)
        self.stream_index = int(stream_index)
        self.reset()

    def reset(self) -> None:
        key = self.seed + (self.stream_index << 64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def uniform(self, size) -> np.ndarray:
        return self._gen.random(size)

    def standard_normal(self, size) -> np.ndarray:
        size = (size,) if np.isscalar(size) else tuple(size)
        count = int(np.prod(size, dtype=np.int64))
        pairs = (count + 1) // 2
        u = self._gen.random(2 * pairs)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        phase = 2.0 * np.pi * u[1::2]
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(phase)
        z[1::2] = r * np.sin(phase)
        return z[:count].reshape(size)

    def metadata(self) -> dict:
        return {"algorithm": self.algorithm_id, "seed": self.seed, "stream_index": self.stream_index}

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_index={self.stream_index})"


def sample_gaussian(mean, cov, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Draw from N(mean, cov) as ``mean + L z`` with Box-Muller ``z``.

    With ``size`` given, returns an array of shape (size, n) whose rows are
    consecutive draws.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = psd_factor(cov)
    n = mean.shape[0]
    if L.shape != (n, n):
        raise DimensionError(f"mean has dim {n} but covariance is {L.shape}")
    if size is None:
        return mean + L @ rng.standard_normal(n)
    z = rng.standard_normal((size, n))
    return mean + z @ L.T
