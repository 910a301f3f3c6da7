"""Event-triggered LQG control with value-of-information transmission decisions."""

from .estimators import ControllerBelief, TriggerBelief, TriggerSignals
from .model import CostSpec, InfoPattern, TimeVaryingLinearSystem, validate_system, zoh_discretize
from .numerics import RngStream
from .policies import (
    CertaintyEquivalence,
    ExactScalarTrigger,
    NeverTrigger,
    PeriodicTrigger,
    VoiTrigger,
    voi_imperfect,
    voi_perfect,
)
from .riccati import RiccatiSolution, backward_riccati
from .simulate import lambda_sweep, monte_carlo, paired_comparison, run_trajectory

__version__ = "0.1.0"

__all__ = [
    "CertaintyEquivalence",
    "ControllerBelief",
    "CostSpec",
    "ExactScalarTrigger",
    "InfoPattern",
    "NeverTrigger",
    "PeriodicTrigger",
    "RiccatiSolution",
    "RngStream",
    "TimeVaryingLinearSystem",
    "TriggerBelief",
    "TriggerSignals",
    "VoiTrigger",
    "backward_riccati",
    "lambda_sweep",
    "monte_carlo",
    "paired_comparison",
    "run_trajectory",
    "validate_system",
    "voi_imperfect",
    "voi_perfect",
    "zoh_discretize",
]
