"""Discrete-time Markov sources with actuation-error cost structure.

A source is a finite Markov chain plus a cost matrix pricing the act of
using a wrong remote estimate.  State indices are 0-based in code; config
files and diagnostics use 1-based states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROW_SUM_TOL = 1e-9
STATIONARY_RESIDUAL_TOL = 1e-10


class SourceSpecError(ValueError):
    """A source definition violates one of its invariants."""


class ReducibleChainError(ValueError):
    """Raised when an operation requires an irreducible chain."""


@dataclass(frozen=True, eq=False)
class MarkovSource:
    """One source: transition matrix, actuation-error costs, weight, sampling cost.

    ``transition[i][k]`` is P(next=k | current=i).  ``cae[k][j]`` is the cost
    of acting on estimate j while the source is in state k; it need not be
    symmetric and its diagonal must be zero.  Instances are validated on
    construction and immutable afterwards, so they are safe to share across
    threads.
    """

    transition: np.ndarray
    cae: np.ndarray
    weight: float = 1.0
    sampling_cost: float = 1.0

    def __post_init__(self):
        trans = np.array(self.transition, dtype=float)
        cae = np.array(self.cae, dtype=float)
        object.__setattr__(self, "transition", trans)
        object.__setattr__(self, "cae", cae)
        validate(self)
        # remove sub-tolerance drift so cumulative rows end exactly at 1
        trans /= trans.sum(axis=1, keepdims=True)
        cum = np.cumsum(trans, axis=1)
        cum[:, -1] = 1.0
        object.__setattr__(self, "_cum_rows", cum)
        object.__setattr__(self, "_cum_lists", cum.tolist())
        for arr in (trans, cae, cum):
            arr.flags.writeable = False

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]


def validate(source: MarkovSource) -> None:
    """Check every MarkovSource invariant, raising on the first violation.

    Error messages name offending rows/entries with 1-based indices.
    """
    trans, cae = source.transition, source.cae
    if trans.ndim != 2 or trans.shape[0] != trans.shape[1] or trans.shape[0] < 1:
        raise SourceSpecError(f"transition matrix must be square, got shape {trans.shape}")
    n = trans.shape[0]
    if cae.shape != (n, n):
        raise SourceSpecError(f"cae matrix shape {cae.shape} does not match transition shape {trans.shape}")
    if not np.all(np.isfinite(trans)):
        raise SourceSpecError("transition matrix has non-finite entries")
    if np.any(trans < 0.0) or np.any(trans > 1.0):
        i, k = np.argwhere((trans < 0.0) | (trans > 1.0))[0]
        raise SourceSpecError(f"transition[{i + 1}][{k + 1}] = {trans[i, k]} outside [0, 1]")
    row_sums = trans.sum(axis=1)
    bad = np.abs(row_sums - 1.0) > ROW_SUM_TOL
    if np.any(bad):
        i = int(np.argmax(bad))
        raise SourceSpecError(f"row {i + 1} sums to {row_sums[i]:.10g}, not 1 (row sum != 1)")
    if not np.all(np.isfinite(cae)):
        raise SourceSpecError("cae matrix has non-finite entries")
    if np.any(cae < 0.0):
        k, j = np.argwhere(cae < 0.0)[0]
        raise SourceSpecError(f"cae[{k + 1}][{j + 1}] = {cae[k, j]} is negative")
    diag = np.diagonal(cae)
    if np.any(diag != 0.0):
        k = int(np.argmax(diag != 0.0))
        raise SourceSpecError(f"cae diagonal entry [{k + 1}][{k + 1}] = {diag[k]} must be 0")
    if not (np.isfinite(source.weight) and source.weight > 0.0):
        raise SourceSpecError(f"weight must be a positive real, got {source.weight}")
    if not (np.isfinite(source.sampling_cost) and source.sampling_cost > 0.0):
        raise SourceSpecError(f"sampling_cost must be a positive real, got {source.sampling_cost}")


def sample_next(source: MarkovSource, current: int, rng: np.random.Generator) -> int:
    """Draw the next state from the transition row of ``current``.

    Consumes exactly one uniform draw from ``rng``.
    """
    if not 0 <= current < source.num_states:
        raise IndexError(f"state {current} out of range for {source.num_states}-state source")
    u = rng.random()
    # linear scan of the cached cumulative row; sources are small
    for k, edge in enumerate(source._cum_lists[current]):
        if u < edge:
            return k
    return source.num_states - 1


def _reachable(support: np.ndarray, start: int) -> set[int]:
    seen = {start}
    frontier = [start]
    while frontier:
        i = frontier.pop()
        for k in np.nonzero(support[i])[0]:
            if k not in seen:
                seen.add(int(k))
                frontier.append(int(k))
    return seen


def stationary_distribution(source: MarkovSource) -> np.ndarray:
    """Stationary law pi with pi P = pi, computed by direct linear solve.

    Requires an irreducible chain (checked by reachability over the support
    graph); the returned vector satisfies the balance equations with
    residual <= 1e-10.
    """
    trans = source.transition
    n = source.num_states
    support = trans > 0.0
    fwd = _reachable(support, 0)
    if len(fwd) < n:
        missing = sorted(set(range(n)) - fwd)
        raise ReducibleChainError(
            "chain is reducible: states "
            f"{[s + 1 for s in missing]} are unreachable from state 1"
        )
    bwd = _reachable(support.T, 0)
    if len(bwd) < n:
        missing = sorted(set(range(n)) - bwd)
        raise ReducibleChainError(
            "chain is reducible: states "
            f"{[s + 1 for s in missing]} cannot reach state 1"
        )
    # (P^T - I) pi = 0 with the last balance row swapped for normalisation
    a = trans.T - np.eye(n)
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(a, b)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    residual = float(np.max(np.abs(pi @ trans - pi)))
    if residual > STATIONARY_RESIDUAL_TOL:
        raise ArithmeticError(f"stationary solve residual {residual:.3e} exceeds {STATIONARY_RESIDUAL_TOL}")
    return pi
