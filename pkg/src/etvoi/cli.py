"""Command-line front end: ``etvoi validate | simulate | sweep``.

Experiments are described by a TOML file.  Matrices are written row-major
with explicit dimensions, ``{ dims = [rows, cols], data = [...] }``; a
time-varying sequence is an array of such tables (one per k = 0..N).
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .model import (
    ContinuousLinearSystem,
    CostSpec,
    InfoPattern,
    TimeVaryingLinearSystem,
    validate_system,
    zoh_discretize,
)
from .numerics import RNG_ALGORITHM
from .policies import ExactScalarTrigger, NeverTrigger, PeriodicTrigger, VoiTrigger
from .riccati import backward_riccati
from .simulate import lambda_sweep, monte_carlo, run_trajectory

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_config", "bundled_config", "main"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
POLICIES = ("voi", "periodic", "always", "never", "exact_scalar_dp")

_SCHEMA = {
    "experiment": {"N", "info_pattern", "n_runs", "base_seed", "output"},
    "system": {"A", "B", "W", "m0", "M0", "C", "V", "continuous"},
    "continuous": {"Ac", "Bc", "dt"},
    "cost": {"Q", "R", "Q_final", "ell", "lambda"},
    "trigger": {"policy", "period", "offset"},
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parsing


def _check_keys(table, allowed, where):
    if not isinstance(table, dict):
        raise ConfigError(f"{where}: expected a table")
    for key in table:
        if key not in allowed:
            name = f"{where}.{key}" if where else key
            raise ConfigError(f"unknown field '{name}'")


def _num(value, where, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _matrix(value, where):
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: expected {{ dims = [r, c], data = [...] }}")
    _check_keys(value, {"dims", "data"}, where)
    if "dims" not in value or "data" not in value:
        raise ConfigError(f"{where}: matrix needs both 'dims' and 'data'")
    dims = value["dims"]
    if not isinstance(dims, list) or len(dims) != 2:
        raise ConfigError(f"{where}.dims: expected [rows, cols]")
    r, c = (_num(d, f"{where}.dims", int) for d in dims)
    if r < 1 or c < 1:
        raise ConfigError(f"{where}.dims: dimensions must be positive")
    data = value["data"]
    if not isinstance(data, list):
        raise ConfigError(f"{where}.data: expected an array")
    data = [_num(v, f"{where}.data") for v in data]
    if len(data) != r * c:
        raise ConfigError(f"{where}: dims {r}x{c} need {r * c} entries, got {len(data)}")
    return {"dims": [r, c], "data": data}


def _matrix_seq(value, where):
    if isinstance(value, list):
        if not value:
            raise ConfigError(f"{where}: empty matrix sequence")
        return [_matrix(v, f"{where}[{i}]") for i, v in enumerate(value)]
    return _matrix(value, where)


def _vector(value, where):
    if not isinstance(value, list):
        raise ConfigError(f"{where}: expected an array of numbers")
    return [_num(v, f"{where}[{i}]") for i, v in enumerate(value)]


def _to_array(spec):
    if isinstance(spec, list):
        return tuple(_to_array(s) for s in spec)
    r, c = spec["dims"]
    return np.array(spec["data"], dtype=float).reshape(r, c)


@dataclass(frozen=True)
class ExperimentConfig:
    """Normalized experiment description; equality is structural."""

    N: int
    info_pattern: str
    system: dict
    cost: dict
    trigger: dict
    n_runs: int = 1
    base_seed: int = 0
    output: str | None = None
    source: str | None = field(default=None, compare=False)

    # -- serialization

    def to_dict(self) -> dict:
        exp = {"N": self.N, "info_pattern": self.info_pattern, "n_runs": self.n_runs, "base_seed": self.base_seed}
        if self.output is not None:
            exp["output"] = self.output
        return {"experiment": exp, "system": copy.deepcopy(self.system), "cost": copy.deepcopy(self.cost), "trigger": dict(self.trigger)}

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def hash(self) -> str:
        """SHA-256 of the canonical serialization, output path excluded."""
        d = self.to_dict()
        d["experiment"].pop("output", None)
        return hashlib.sha256(tomli_w.dumps(d).encode()).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        vals = {f: getattr(self, f) for f in self.__dataclass_fields__}
        vals.update(changes)
        return ExperimentConfig(**vals)

    # -- model objects

    def build_system(self) -> TimeVaryingLinearSystem:
        s = self.system
        if "continuous" in s:
            c = s["continuous"]
            A, B = zoh_discretize(ContinuousLinearSystem(_to_array(c["Ac"]), _to_array(c["Bc"]), c["dt"]))
        else:
            A, B = _to_array(s["A"]), _to_array(s["B"])
        imperfect = self.info_pattern == InfoPattern.IMPERFECT.value
        return TimeVaryingLinearSystem(
            N=self.N,
            A=A,
            B=B,
            W=_to_array(s["W"]),
            m0=np.array(s["m0"], dtype=float),
            M0=_to_array(s["M0"]),
            C=_to_array(s["C"]) if "C" in s else None,
            V=_to_array(s["V"]) if "V" in s else None,
            info_pattern=InfoPattern.IMPERFECT if imperfect else InfoPattern.PERFECT,
        )

    def build_cost(self, lam: float | None = None) -> CostSpec:
        c = self.cost
        ell = c.get("ell", 1.0)
        return CostSpec(
            N=self.N,
            Q=_to_array(c["Q"]),
            R=_to_array(c["R"]),
            ell=tuple(ell) if isinstance(ell, list) else (ell,),
            lam=c.get("lambda", 0.0) if lam is None else lam,
            Q_final=_to_array(c["Q_final"]) if "Q_final" in c else None,
        )

    def make_trigger(self, sys_, cost, ric):
        t = self.trigger
        name = t["policy"]
        if name == "voi":
            return VoiTrigger(sys_, ric)
        if name == "always":
            return PeriodicTrigger(1, 0)
        if name == "periodic":
            return PeriodicTrigger(t.get("period", 1), t.get("offset", 0))
        if name == "never":
            return NeverTrigger()
        if sys_.n != 1 or sys_.imperfect:
            raise ConfigError("trigger.policy: exact_scalar_dp needs a scalar perfect-information system")
        return ExactScalarTrigger(sys_, cost, ric)


def _parse_trigger(t):
    _check_keys(t, _SCHEMA["trigger"], "trigger")
    policy = t.get("policy", "voi")
    if policy not in POLICIES:
        raise ConfigError(f"trigger.policy: unknown policy {policy!r} (choose from {', '.join(POLICIES)})")
    out = {"policy": policy}
    if policy == "periodic":
        period = _num(t.get("period", 1), "trigger.period", int)
        offset = _num(t.get("offset", 0), "trigger.offset", int)
        if period < 1 or not 0 <= offset < period:
            raise ConfigError("trigger: need period >= 1 and 0 <= offset < period")
        out.update(period=period, offset=offset)
    elif "period" in t or "offset" in t:
        raise ConfigError(f"trigger: period/offset only apply to the periodic policy, not {policy!r}")
    return out


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    """Parse and normalize a TOML experiment description."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}") from None
    _check_keys(doc, set(_SCHEMA) - {"continuous"}, "")
    for table in ("experiment", "system", "cost"):
        if table not in doc:
            raise ConfigError(f"missing table [{table}]")

    exp = doc["experiment"]
    _check_keys(exp, _SCHEMA["experiment"], "experiment")
    if "N" not in exp:
        raise ConfigError("experiment.N: required")
    N = _num(exp["N"], "experiment.N", int)
    if N < 0:
        raise ConfigError("experiment.N: must be non-negative")
    pattern = exp.get("info_pattern", "perfect")
    if pattern not in ("perfect", "imperfect"):
        raise ConfigError(f"experiment.info_pattern: expected 'perfect' or 'imperfect', got {pattern!r}")
    n_runs = _num(exp.get("n_runs", 1), "experiment.n_runs", int)
    if n_runs < 1:
        raise ConfigError("experiment.n_runs: must be positive")
    seed = _num(exp.get("base_seed", 0), "experiment.base_seed", int)
    if not 0 <= seed < 2**64:
        raise ConfigError("experiment.base_seed: must be an unsigned 64-bit integer")
    output = exp.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError("experiment.output: expected a path string")

    s = doc["system"]
    _check_keys(s, _SCHEMA["system"], "system")
    system = {}
    if "continuous" in s:
        if "A" in s or "B" in s:
            raise ConfigError("system: give either A/B or a continuous block, not both")
        c = s["continuous"]
        _check_keys(c, _SCHEMA["continuous"], "system.continuous")
        for key in ("Ac", "Bc", "dt"):
            if key not in c:
                raise ConfigError(f"system.continuous.{key}: required")
        dt = _num(c["dt"], "system.continuous.dt")
        if not dt > 0:
            raise ConfigError("system.continuous.dt: must be positive")
        system["continuous"] = {"Ac": _matrix(c["Ac"], "system.continuous.Ac"), "Bc": _matrix(c["Bc"], "system.continuous.Bc"), "dt": dt}
        required = ("W", "m0", "M0")
    else:
        required = ("A", "B", "W", "m0", "M0")
    for key in required:
        if key not in s:
            raise ConfigError(f"system.{key}: required")
    for key in ("A", "B", "W", "C", "V"):
        if key in s:
            system[key] = _matrix_seq(s[key], f"system.{key}")
    system["m0"] = _vector(s["m0"], "system.m0")
    system["M0"] = _matrix(s["M0"], "system.M0")
    if pattern == "imperfect" and ("C" not in s or "V" not in s):
        raise ConfigError("system: the imperfect information pattern needs C and V")
    if pattern == "perfect" and ("C" in s or "V" in s):
        raise ConfigError("system: C and V are only allowed with info_pattern = 'imperfect'")

    c = doc["cost"]
    _check_keys(c, _SCHEMA["cost"], "cost")
    cost = {}
    for key in ("Q", "R"):
        if key not in c:
            raise ConfigError(f"cost.{key}: required")
        cost[key] = _matrix_seq(c[key], f"cost.{key}")
    if "Q_final" in c:
        cost["Q_final"] = _matrix(c["Q_final"], "cost.Q_final")
    if "ell" in c:
        ell = c["ell"]
        cost["ell"] = _vector(ell, "cost.ell") if isinstance(ell, list) else _num(ell, "cost.ell")
    lam = _num(c.get("lambda", 0.0), "cost.lambda")
    if lam < 0:
        raise ConfigError("cost.lambda: must be non-negative")
    cost["lambda"] = lam

    trigger = _parse_trigger(doc.get("trigger", {}))
    return ExperimentConfig(
        N=N, info_pattern=pattern, system=system, cost=cost, trigger=trigger,
        n_runs=n_runs, base_seed=seed, output=output, source=source,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))


def bundled_config(name: str) -> str:
    """Text of a bundled config (``scalar`` or ``pendulum``)."""
    return resources.files("etvoi").joinpath("configs").joinpath(f"{name}.cfg").read_text()


def parse_policy(name: str) -> dict:
    """``voi``, ``always``, ``never``, ``exact_scalar_dp`` or ``periodic:PERIOD[:OFFSET]``."""
    head, _, rest = name.partition(":")
    t = {"policy": head}
    if rest:
        if head != "periodic":
            raise ConfigError(f"--policy: only periodic takes parameters, got {name!r}")
        parts = rest.split(":")
        try:
            t["period"] = int(parts[0])
            if len(parts) > 1:
                t["offset"] = int(parts[1])
        except ValueError:
            raise ConfigError(f"--policy: cannot read {name!r}") from None
        if len(parts) > 2:
            raise ConfigError(f"--policy: cannot read {name!r}")
    return _parse_trigger(t)


# ---------------------------------------------------------------------------
# commands


def _fmt(v) -> str:
    # shortest decimal string that reads back to the same binary64
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _build(cfg: ExperimentConfig):
    try:
        return cfg.build_system(), cfg.build_cost()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _prepare(args):
    cfg = load_config(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed: must be an unsigned 64-bit integer")
        changes["base_seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        if args.runs < 1:
            raise ConfigError("--runs: must be positive")
        changes["n_runs"] = args.runs
    if getattr(args, "policy", None):
        changes["trigger"] = parse_policy(args.policy)
    if changes:
        cfg = cfg.replace(**changes)
    sys_, cost = _build(cfg)
    errors = [d for d in validate_system(sys_, cost) if d.severity == "error"]
    if errors:
        raise ConfigError("\n".join(str(d) for d in errors))
    return cfg, sys_, cost


def _out_path(args, cfg, suffix: str) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.output:
        return Path(cfg.output)
    return Path(Path(cfg.source or "etvoi").stem + suffix)


def trajectory_rows(rec, sys_):
    """Header and rows of the trajectory CSV; the last row is the terminal state."""
    n, m, N = sys_.n, sys_.m, sys_.N
    header = ["k", "delta", "voi"] + [f"u{i}" for i in range(m)] + [f"x{i}" for i in range(n)] + [f"xhat{i}" for i in range(n)]
    if sys_.imperfect:
        p = sys_.p
        header += [f"y{i}" for i in range(p)] + [f"eps{i}" for i in range(n)] + [f"nu{i}" for i in range(p)]
    rows = []
    for k in range(N + 1):
        row = [k, int(rec.delta[k]), rec.voi[k], *rec.u[k], *rec.x[k], *rec.xhat[k]]
        if sys_.imperfect:
            row += [*rec.y[k], *rec.eps[k], *rec.nu[k]]
        rows.append([_fmt(v) for v in row])
    # terminal state x_{N+1}; per-step quantities do not exist there
    tail = [str(N + 1), "", ""] + [""] * m + [_fmt(v) for v in rec.x[N + 1]] + [""] * n
    if sys_.imperfect:
        tail += [""] * (2 * sys_.p + n)
    rows.append(tail)
    return header, rows


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    sys_, cost = _build(cfg)
    diags = validate_system(sys_, cost)
    for d in diags:
        print(d)
    if any(d.severity == "error" for d in diags):
        return EXIT_CONFIG
    print(f"ok: {cfg.source} (n={sys_.n}, m={sys_.m}, N={sys_.N}, {cfg.info_pattern} information)")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg, sys_, cost = _prepare(args)
    ric = backward_riccati(sys_, cost)
    trigger = cfg.make_trigger(sys_, cost, ric)
    rec = run_trajectory(sys_, cost, ric, trigger, seed=cfg.base_seed, stream_index=0)
    out = _out_path(args, cfg, "_trajectory.csv")
    _write_csv(out, *trajectory_rows(rec, sys_))
    summary = {
        "config_hash": cfg.hash(),
        "policy": cfg.trigger,
        "lambda": cost.lam,
        "rng": {"algorithm": RNG_ALGORITHM, "base_seed": cfg.base_seed, "stream_index": 0},
        "trajectory": {
            "J": float(rec.J),
            "R": float(rec.R),
            "Psi": float(rec.Psi),
            "transmissions": int(rec.transmissions),
        },
    }
    if cfg.n_runs > 1:
        mc = monte_carlo(sys_, cost, ric, trigger, None, cfg.n_runs, cfg.base_seed)
        stats = mc.stats()
        stats.pop("lambda")
        stats.pop("base_seed")
        stats["stream_indices"] = [0, cfg.n_runs - 1]
        stats["transmissions"] = [int(t) for t in mc.transmissions]
        summary["monte_carlo"] = stats
    _write_json(out.with_suffix(".json"), summary)
    return EXIT_OK


def parse_lambdas(text: str) -> list[float]:
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise ConfigError("--lambda: empty multiplier list")
    try:
        vals = [float(s) for s in items]
    except ValueError:
        raise ConfigError(f"--lambda: cannot read {text!r}") from None
    if any(not v >= 0 or not np.isfinite(v) for v in vals):
        raise ConfigError("--lambda: multipliers must be finite and non-negative")
    return vals


def cmd_sweep(args) -> int:
    lambdas = sorted(parse_lambdas(args.lambdas))
    cfg, sys_, cost = _prepare(args)
    if cfg.n_runs < 2:
        raise ConfigError("sweep needs n_runs >= 2 for standard errors")
    ric = backward_riccati(sys_, cost)
    points = lambda_sweep(sys_, cost, ric, lambdas, cfg.n_runs, cfg.base_seed, trigger_factory=cfg.make_trigger)
    header = ["lambda", "rate_mean", "rate_stderr", "J_mean", "J_stderr", "n_runs"]
    rows = [[_fmt(p.lam), _fmt(p.rate_mean), _fmt(p.rate_stderr), _fmt(p.J_mean), _fmt(p.J_stderr), str(p.n_runs)] for p in points]
    out = _out_path(args, cfg, "_sweep.csv")
    _write_csv(out, header, rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="etvoi", description="Event-triggered LQG control with value-of-information triggering.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, runs=True):
        sp.add_argument("--config", required=True, metavar="PATH", help="experiment TOML file")
        if runs:
            sp.add_argument("--seed", type=int, metavar="U64", help="override experiment.base_seed")
            sp.add_argument("--runs", type=int, metavar="N", help="override experiment.n_runs")
            sp.add_argument("--out", metavar="PATH", help="output CSV path")
            sp.add_argument("--policy", metavar="NAME", help="voi, always, never, exact_scalar_dp or periodic:PERIOD[:OFFSET]")

    common(sub.add_parser("validate", help="check a config and print diagnostics"), runs=False)
    common(sub.add_parser("simulate", help="simulate one trajectory (plus Monte-Carlo stats when n_runs > 1)"))
    sw = sub.add_parser("sweep", help="rate/performance trade-off over multipliers")
    common(sw)
    sw.add_argument("--lambda", dest="lambdas", required=True, metavar="CSV", help="comma-separated multipliers")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"validate": cmd_validate, "simulate": cmd_simulate, "sweep": cmd_sweep}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
