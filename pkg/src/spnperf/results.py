"""Evaluation results shared by the simulator and the exact solver."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import SpnError, UnknownTransitionError

SIMULATION = "simulation"
SOLVER = "solver"


@dataclass
class EvaluationResult:
    """Steady-state measures of a net.

    Place means are expected token counts; firing rates are firings per
    ms.  ``condition_probabilities`` holds time-fractions of named marking
    predicates (e.g. the joint "both endorsement queues full" event).
    Half-widths are confidence-interval half-widths for simulation and
    zero for the solver.
    """

    backend: str
    place_means: dict[str, float]
    place_half_widths: dict[str, float]
    histograms: dict[str, np.ndarray]
    firing_rates: dict[str, float]
    firing_half_widths: dict[str, float]
    condition_probabilities: dict[str, float] = field(default_factory=dict)
    condition_half_widths: dict[str, float] = field(default_factory=dict)
    total_time: float = 0.0
    warnings: list[str] = field(default_factory=list)
    nonconvergent: bool = False
    n_states: Optional[int] = None

    def mean(self, place: str) -> float:
        try:
            return self.place_means[place]
        except KeyError:
            raise MissingPlaceError(place) from None

    def probability(self, place: str, i: int) -> float:
        """P(m(place) = i) from the tracked histogram."""
        try:
            h = self.histograms[place]
        except KeyError:
            raise MissingPlaceError(place) from None
        return float(h[i]) if 0 <= i < len(h) else 0.0

    def to_dict(self) -> dict:
        return {
            "backend": self.backend,
            "total_time_ms": self.total_time,
            "n_states": self.n_states,
            "nonconvergent": self.nonconvergent,
            "warnings": list(self.warnings),
            "places": {
                p: {"mean": self.place_means[p], "half_width": self.place_half_widths.get(p, 0.0)}
                for p in self.place_means
            },
            "transitions": {
                t: {"rate_per_ms": self.firing_rates[t], "half_width": self.firing_half_widths.get(t, 0.0)}
                for t in self.firing_rates
            },
            "conditions": {
                c: {"probability": self.condition_probabilities[c],
                    "half_width": self.condition_half_widths.get(c, 0.0)}
                for c in self.condition_probabilities
            },
            "histograms": {p: [float(x) for x in np.trim_zeros(h, "b")] for p, h in self.histograms.items()},
        }


class MissingPlaceError(SpnError, KeyError):
    def __init__(self, name: str):
        super().__init__(f"result has no entry for {name!r}")

    def __str__(self):
        return self.args[0]


def firing_rate(result: EvaluationResult, t: str) -> float:
    """Firings of ``t`` per ms of post-warmup time."""
    try:
        return result.firing_rates[t]
    except KeyError:
        raise UnknownTransitionError(t) from None
