"""Stochastic Petri net performance models, with a Hyperledger Fabric pipeline model."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    GuardSyntaxError,
    NetValidationError,
    NonConvergenceError,
    SpecError,
    SpnError,
    StateSpaceExceededError,
    TransitionNotEnabledError,
    UnknownPlaceError,
    UnknownTransitionError,
    VanishingLoopError,
)
from .guards import compile_guard, eval_guard, parse_guard  # noqa: E402
from .net import Arc, PetriNet, Place, Transition, enabled, fire  # noqa: E402
from .results import EvaluationResult, firing_rate  # noqa: E402
from .sim import SimConfig, simulate  # noqa: E402
from .solver import erlang_expand, evaluate_exact, steady_state  # noqa: E402
from .hlf import HlfMetrics, HlfParams, build_hlf_net, compute_metrics  # noqa: E402

__all__ = [
    "Arc", "EvaluationResult", "GuardSyntaxError", "HlfMetrics", "HlfParams", "NetValidationError",
    "NonConvergenceError", "PetriNet", "Place", "SimConfig", "SpecError", "SpnError",
    "StateSpaceExceededError", "Transition", "TransitionNotEnabledError", "UnknownPlaceError", "UnknownTransitionError",
    "VanishingLoopError", "build_hlf_net", "compile_guard", "compute_metrics", "enabled",
    "erlang_expand", "eval_guard", "evaluate_exact", "fire", "firing_rate", "parse_guard",
    "simulate", "steady_state",
]
