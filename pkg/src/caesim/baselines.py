"""Source-agnostic randomized baseline.

Samples source m with a fixed probability calibrated so the expected slot
cost is ``cost_budget - slack``, independent of system state and queue
backlog.  Exposed through the same state-in/action-out interface as the
other policies so one harness runs them all; the state argument is ignored.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def source_agnostic_probs(
    num_sources: int, cost_budget: float, slack: float, costs: Sequence[float]
) -> np.ndarray:
    """Per-source sampling probabilities (cost_budget - slack) / (M * c_m).

    Validated up front so an infeasible parameterisation fails before any
    run starts.
    """
    if num_sources < 1 or len(costs) != num_sources:
        raise ValueError(f"need one cost per source, got {len(costs)} for M={num_sources}")
    if not 0.0 <= slack <= cost_budget:
        raise ValueError(f"slack must be in [0, cost_budget], got {slack}")
    probs = np.array([(cost_budget - slack) / (num_sources * c) for c in costs])
    if np.any(probs < 0.0) or probs.sum() > 1.0 + 1e-12:
        raise ValueError(
            f"sampling probabilities {probs.tolist()} do not form a distribution "
            "(check cost_budget, slack and per-source costs)"
        )
    return probs


def source_agnostic_decide(
    num_sources: int,
    cost_budget: float,
    slack: float,
    costs: Sequence[float],
    rng: np.random.Generator,
) -> int:
    """One randomized action: m w.p. (cost_budget - slack)/(M c_m), else idle."""
    probs = source_agnostic_probs(num_sources, cost_budget, slack, costs)
    u = rng.random()
    acc = 0.0
    for m, p in enumerate(probs):
        acc += p
        if u < acc:
            return m + 1
    return 0


class SourceAgnosticPolicy:
    """Harness-facing wrapper; ignores state and backlog by construction."""

    uses_queue = False

    def __init__(self, num_sources: int, cost_budget: float, slack: float, costs: Sequence[float]):
        self._probs = source_agnostic_probs(num_sources, cost_budget, slack, costs)
        self._cum = np.cumsum(self._probs).tolist()
        self._rng: np.random.Generator | None = None

    def reset(self, rng: np.random.Generator) -> None:
        self._rng = rng

    def act(self, state, backlog) -> int:
        u = self._rng.random()
        for m, edge in enumerate(self._cum):
            if u < edge:
                return m + 1
        return 0
