"""Joint system dynamics: source evolution, lossy channel, delayed estimates.

The system state is a tuple of ``(true_state, estimate)`` pairs, one per
source.  A sampled update that survives the channel becomes the
destination's estimate one slot later, i.e. the estimate is set to the
pre-transition true state.  Per-slot actuation-error cost is evaluated at
the post-transition pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .sources import MarkovSource, sample_next

# type alias: ((x_1, xhat_1), ..., (x_M, xhat_M)), all indices 0-based
SystemState = tuple[tuple[int, int], ...]

KERNEL_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Channel:
    """Memoryless erasure channel; a sent packet is decoded w.p. success_prob."""

    success_prob: float

    def __post_init__(self):
        if not 0.0 <= self.success_prob <= 1.0:
            raise ValueError(f"success_prob must be in [0, 1], got {self.success_prob}")


@dataclass(frozen=True)
class StepOutcome:
    next_state: SystemState
    cae: float
    cost: float
    channel_ok: bool  # meaningful only when an update was sent


def initial_state(sources: Sequence[MarkovSource]) -> SystemState:
    """Every source in state 1 with a correct estimate (0-based: (0, 0))."""
    return tuple((0, 0) for _ in sources)


def check_state(state: SystemState, sources: Sequence[MarkovSource]) -> None:
    if len(state) != len(sources):
        raise ValueError(f"state has {len(state)} pairs but there are {len(sources)} sources")
    for m, ((x, est), src) in enumerate(zip(state, sources)):
        if not (0 <= x < src.num_states and 0 <= est < src.num_states):
            raise IndexError(f"source {m + 1} pair ({x + 1}, {est + 1}) out of range 1..{src.num_states}")


def step(
    state: SystemState,
    action: int,
    sources: Sequence[MarkovSource],
    channel: Channel,
    rng: np.random.Generator,
) -> StepOutcome:
    """Advance the whole system by one slot.

    Draw order is fixed for reproducibility: one channel draw iff
    ``action != 0``, then one transition draw per source in ascending
    source order.
    """
    check_state(state, sources)
    if not 0 <= action <= len(sources):
        raise ValueError(f"action {action} out of range 0..{len(sources)}")

    ok = False
    if action != 0:
        ok = rng.random() < channel.success_prob

    cae = 0.0
    pairs = []
    for m, (src, (x, est)) in enumerate(zip(sources, state)):
        nxt = sample_next(src, x, rng)
        # delivered update carries the pre-transition true state
        nxt_est = x if (ok and action == m + 1) else est
        pairs.append((nxt, nxt_est))
        cae += src.weight * src.cae[nxt, nxt_est]

    cost = sources[action - 1].sampling_cost if action != 0 else 0.0
    return StepOutcome(tuple(pairs), cae, cost, ok)


def sub_kernel(
    source: MarkovSource,
    sub_state: tuple[int, int],
    sampled: bool,
    channel: Channel,
) -> list[tuple[tuple[int, int], float]]:
    """One-slot distribution over a single source's (true, estimate) pair.

    If the source is sampled, the estimate becomes the current true state
    w.p. success_prob and stays put otherwise; duplicate outcomes (the
    i == j case) are merged so the result is a proper distribution.
    Entries are sorted by sub-state and sum to 1 within 1e-12.
    """
    i, j = sub_state
    n = source.num_states
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"sub-state ({i + 1}, {j + 1}) out of range 1..{n}")
    ps = channel.success_prob
    row = source.transition[i]
    probs: dict[tuple[int, int], float] = {}
    for k in np.nonzero(row)[0]:
        p = float(row[k])
        k = int(k)
        if sampled:
            if ps > 0.0:
                probs[(k, i)] = probs.get((k, i), 0.0) + p * ps
            if ps < 1.0:
                probs[(k, j)] = probs.get((k, j), 0.0) + p * (1.0 - ps)
        else:
            probs[(k, j)] = p
    out = sorted(probs.items())
    total = sum(p for _, p in out)
    if abs(total - 1.0) > KERNEL_SUM_TOL:
        raise ArithmeticError(f"sub-kernel probabilities sum to {total!r}, not 1")
    return out
