"""Drift-plus-penalty sampling policy.

A scalar virtual queue turns the average resource constraint into a
stability problem; each slot the policy greedily minimises
``backlog * (cost - budget) + V * expected_cae`` over the idle action and
the M sampling actions.  The expected one-slot actuation-error cost has a
closed form per source: a success-probability-weighted mix of the
"estimate becomes the current true state" column and the "estimate stays"
column of the cost matrix, each averaged over the transition row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dynamics import Channel, SystemState, check_state
from .sources import MarkovSource


@dataclass(frozen=True)
class VirtualQueue:
    """Backlog of resource cost spent above budget; never negative."""

    backlog: float = 0.0

    def __post_init__(self):
        if self.backlog < 0.0:
            raise ValueError(f"backlog must be >= 0, got {self.backlog}")


@dataclass(frozen=True)
class DppConfig:
    penalty_weight: float  # emphasis on error-cost minimisation (V)
    cost_budget: float

    def __post_init__(self):
        if self.penalty_weight < 0.0:
            raise ValueError(f"penalty_weight must be >= 0, got {self.penalty_weight}")
        if self.cost_budget <= 0.0:
            raise ValueError(f"cost_budget must be > 0, got {self.cost_budget}")


def queue_update(q: VirtualQueue, slot_cost: float, cost_budget: float) -> VirtualQueue:
    """backlog' = max(backlog - cost_budget, 0) + slot_cost."""
    return VirtualQueue(max(q.backlog - cost_budget, 0.0) + slot_cost)


def expected_sub_cae(source: MarkovSource, i: int, j: int, sampled: bool, success_prob: float) -> float:
    """Closed-form one-slot expected error cost of a single source at pair (i, j)."""
    row = source.transition[i]
    cae = source.cae
    # sum over next states k != j of cae[k, j] weighted by the row
    stay = float(row @ cae[:, j]) - float(row[j] * cae[j, j])
    if not sampled:
        return stay
    becomes = float(row @ cae[:, i]) - float(row[i] * cae[i, i])
    return success_prob * becomes + (1.0 - success_prob) * stay


def expected_cae(
    state: SystemState,
    action: int,
    sources: Sequence[MarkovSource],
    channel: Channel,
) -> float:
    """Weighted one-slot expected actuation-error cost of taking ``action``."""
    check_state(state, sources)
    if not 0 <= action <= len(sources):
        raise ValueError(f"action {action} out of range 0..{len(sources)}")
    total = 0.0
    for m, (src, (i, j)) in enumerate(zip(sources, state)):
        total += src.weight * expected_sub_cae(src, i, j, action == m + 1, channel.success_prob)
    return total


def action_scores(
    state: SystemState,
    q: VirtualQueue,
    cfg: DppConfig,
    sources: Sequence[MarkovSource],
    channel: Channel,
) -> list[float]:
    """Per-action objective backlog*(cost - budget) + V*expected_cae.

    The -backlog*budget term is constant across actions and never moves the
    argmin; it is kept so reported scores match the per-slot objective.
    """
    z, v = q.backlog, cfg.penalty_weight
    scores = [z * (0.0 - cfg.cost_budget) + v * expected_cae(state, 0, sources, channel)]
    for m, src in enumerate(sources):
        scores.append(
            z * (src.sampling_cost - cfg.cost_budget)
            + v * expected_cae(state, m + 1, sources, channel)
        )
    return scores


def dpp_decide(
    state: SystemState,
    q: VirtualQueue,
    cfg: DppConfig,
    sources: Sequence[MarkovSource],
    channel: Channel,
) -> int:
    """Pick the score-minimising action; ties go to the smallest index."""
    scores = action_scores(state, q, cfg, sources, channel)
    best, best_score = 0, scores[0]
    for a in range(1, len(scores)):
        if scores[a] < best_score:
            best, best_score = a, scores[a]
    return best


class DppPolicy:
    """Table-backed policy equivalent to `dpp_decide`, for long simulations.

    Per source m the two expected-cost columns are precomputed:
    ``stay[i][j]`` (estimate unchanged) and the success term ``succ[i]``
    (estimate becomes i); a slot decision is then M+1 table lookups.
    """

    uses_queue = True

    def __init__(self, cfg: DppConfig, sources: Sequence[MarkovSource], channel: Channel):
        self.cfg = cfg
        self.sources = sources
        ps = channel.success_prob
        self._costs = [src.sampling_cost for src in sources]
        self._w = [src.weight for src in sources]
        stay_tabs = []
        succ_tabs = []
        for src in sources:
            p, d = src.transition, src.cae
            stay = p @ d - p * np.diagonal(d)[None, :]
            succ = np.diagonal(p @ d) - np.diagonal(p) * np.diagonal(d)
            stay_tabs.append(stay.tolist())
            succ_tabs.append(succ.tolist())
        self._stay = stay_tabs
        self._succ = succ_tabs
        self._ps = ps

    def reset(self, rng: np.random.Generator) -> None:
        pass

    def act(self, state: SystemState, backlog: float) -> int:
        v = self.cfg.penalty_weight
        ps = self._ps
        base = 0.0
        stays = []
        for m, (i, j) in enumerate(state):
            s = self._stay[m][i][j]
            stays.append(s)
            base += self._w[m] * s
        best, best_score = 0, v * base
        for m, (i, j) in enumerate(state):
            gain = self._w[m] * (ps * self._succ[m][i] + (1.0 - ps) * stays[m] - stays[m])
            score = backlog * self._costs[m] + v * (base + gain)
            if score < best_score:
                best, best_score = m + 1, score
        return best
