from __future__ import annotations

import numpy as np
import pytest

from etvoi.cli import bundled_config, parse_config
from etvoi.model import CostSpec, InfoPattern, TimeVaryingLinearSystem
from etvoi.riccati import backward_riccati

# acceptance lines collected by tests/test_acceptance.py, echoed in the summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def load_bundled(name: str):
    cfg = parse_config(bundled_config(name), source=f"{name}.cfg")
    sys_, cost = cfg.build_system(), cfg.build_cost()
    return cfg, sys_, cost, backward_riccati(sys_, cost)


@pytest.fixture(scope="session")
def scalar():
    return load_bundled("scalar")


@pytest.fixture(scope="session")
def pendulum():
    return load_bundled("pendulum")


def random_spd(rng, n, scale=1.0, floor=0.1):
    M = rng.normal(size=(n, n))
    return scale * (M @ M.T / n + floor * np.eye(n))


def random_system(rng, n=2, m=1, p=None, N=10, time_varying=False, radius=0.95):
    """Random stable-ish plant; imperfect information when ``p`` is given."""

    def mat_A():
        A = rng.normal(size=(n, n))
        return A * (radius / max(1e-9, np.max(np.abs(np.linalg.eigvals(A)))))

    T = N + 1 if time_varying else 1
    A = tuple(mat_A() for _ in range(T))
    B = tuple(rng.normal(size=(n, m)) for _ in range(T))
    W = tuple(random_spd(rng, n, 0.5) for _ in range(T))
    kw = {}
    if p is not None:
        kw = dict(
            C=tuple(rng.normal(size=(p, n)) for _ in range(T)),
            V=tuple(random_spd(rng, p, 0.3) for _ in range(T)),
            info_pattern=InfoPattern.IMPERFECT,
        )
    sys_ = TimeVaryingLinearSystem(N=N, A=A, B=B, W=W, m0=rng.normal(size=n), M0=random_spd(rng, n), **kw)
    cost = CostSpec(N=N, Q=(random_spd(rng, n),), R=(random_spd(rng, m),), ell=(1.0,), lam=float(rng.uniform(0.05, 2.0)))
    return sys_, cost
