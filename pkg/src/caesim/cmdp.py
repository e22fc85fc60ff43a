"""Exact constrained-MDP solution by Lagrangian relaxation.

The joint (true state, estimate) process is a finite MDP whose kernel
factorises over sources; only the sampled source uses the channel branch.
For a fixed multiplier the average-cost MDP with stage cost
``cae + multiplier * resource_cost`` is solved by relative value
iteration; bisection on the multiplier finds the smallest value whose
optimal policy meets the budget, and a randomized mixture of the two
policies bracketing that threshold meets the budget with equality.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .dpp import expected_sub_cae
from .dynamics import Channel, SystemState, sub_kernel
from .sources import MarkovSource

KERNEL_ROW_TOL = 1e-10
EVAL_RESIDUAL_TOL = 1e-10
DEFAULT_STATE_CAP = 1_000_000
RVI_DAMPING = 0.01  # self-loop mixing inside RVI only; guards periodic chains


class StateSpaceCapError(ValueError):
    """Joint state space too large for the exact solver."""


class RviConvergenceError(ArithmeticError):
    """Relative value iteration failed to reach the span tolerance."""


@dataclass(frozen=True)
class ProductMdp:
    """Explicit finite MDP over the joint (true, estimate) space.

    Joint states are indexed mixed-radix: source 1 is the most significant
    digit and each source contributes the sub-index ``i * N_m + j``.  The
    reference state 0 is "every source in state 1, estimate correct".
    """

    sources: tuple[MarkovSource, ...]
    channel: Channel
    cost_budget: float
    kernels: tuple[sparse.csr_matrix, ...]  # one (S x S) matrix per action
    stage_cae: np.ndarray  # (S, A) expected one-slot CAE
    stage_cost: np.ndarray  # (A,) resource cost per action

    @property
    def num_states(self) -> int:
        return self.kernels[0].shape[0]

    @property
    def num_actions(self) -> int:
        return len(self.kernels)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(src.num_states for src in self.sources)

    def state_index(self, state: SystemState) -> int:
        return pairs_to_index(state, self.dims)

    def state_pairs(self, index: int) -> SystemState:
        return index_to_pairs(index, self.dims)


def pairs_to_index(state: SystemState, dims: Sequence[int]) -> int:
    idx = 0
    for (x, est), n in zip(state, dims):
        idx = idx * n * n + x * n + est
    return idx


def index_to_pairs(index: int, dims: Sequence[int]) -> SystemState:
    pairs = []
    for n in reversed(dims):
        sub = index % (n * n)
        index //= n * n
        pairs.append((sub // n, sub % n))
    return tuple(reversed(pairs))


def build_product_mdp(
    sources: Sequence[MarkovSource],
    channel: Channel,
    cost_budget: float,
    state_cap: int = DEFAULT_STATE_CAP,
) -> ProductMdp:
    """Enumerate the joint MDP; kernel rows are products of sub-kernels.

    Raises StateSpaceCapError when the joint space exceeds ``state_cap``
    (the drift-plus-penalty policy handles such scenarios instead).
    """
    sources = tuple(sources)
    dims = [src.num_states for src in sources]
    size = 1
    for n in dims:
        size *= n * n
        if size > state_cap:
            raise StateSpaceCapError(
                f"joint state space exceeds {state_cap} states; "
                "use the drift-plus-penalty policy for scenarios this large"
            )
    num_actions = len(sources) + 1

    # per-source factors: sub-state -> list of (next sub-state, prob)
    factors_idle = []
    factors_sampled = []
    for src in sources:
        n = src.num_states
        idle = {}
        samp = {}
        for i in range(n):
            for j in range(n):
                idle[i * n + j] = [(k * n + jj, p) for (k, jj), p in sub_kernel(src, (i, j), False, channel)]
                samp[i * n + j] = [(k * n + jj, p) for (k, jj), p in sub_kernel(src, (i, j), True, channel)]
        factors_idle.append(idle)
        factors_sampled.append(samp)

    strides = []
    acc = 1
    for n in reversed(dims):
        strides.append(acc)
        acc *= n * n
    strides = strides[::-1]

    kernels = []
    for action in range(num_actions):
        rows, cols, vals = [], [], []
        for s in range(size):
            rem = s
            branches = [(0, 1.0)]
            for m, n in enumerate(dims):
                sub = (rem // strides[m]) % (n * n)
                rem_factors = factors_sampled[m] if action == m + 1 else factors_idle[m]
                branches = [
                    (off + nxt * strides[m], p * q)
                    for off, p in branches
                    for nxt, q in rem_factors[sub]
                ]
            total = 0.0
            for col, p in branches:
                rows.append(s)
                cols.append(col)
                vals.append(p)
                total += p
            if abs(total - 1.0) > KERNEL_ROW_TOL:
                raise ArithmeticError(f"kernel row {s} for action {action} sums to {total!r}")
        kernels.append(sparse.csr_matrix((vals, (rows, cols)), shape=(size, size)))

    ps = channel.success_prob
    stage_cae = np.zeros((size, num_actions))
    for s in range(size):
        pairs = index_to_pairs(s, dims)
        idle_terms = [
            src.weight * expected_sub_cae(src, i, j, False, ps)
            for src, (i, j) in zip(sources, pairs)
        ]
        base = sum(idle_terms)
        stage_cae[s, 0] = base
        for m, (src, (i, j)) in enumerate(zip(sources, pairs)):
            sampled = src.weight * expected_sub_cae(src, i, j, True, ps)
            stage_cae[s, m + 1] = base - idle_terms[m] + sampled
    stage_cost = np.array([0.0] + [src.sampling_cost for src in sources])

    return ProductMdp(sources, channel, cost_budget, tuple(kernels), stage_cae, stage_cost)


def _rvi(
    mdp: ProductMdp,
    multiplier: float,
    tol: float,
    max_iter: int,
    h0: np.ndarray | None = None,
) -> tuple[np.ndarray, float, np.ndarray]:
    """Relative value iteration; returns (policy, gain, bias).

    The kernel is mixed with self-loops at a fixed rate inside the sweep
    (stationary laws, hence gains, are unchanged); convergence is span of
    successive value differences, with the reference state 0 pinned.
    """
    cost = mdp.stage_cae + multiplier * mdp.stage_cost[None, :]
    size, num_actions = cost.shape
    h = np.zeros(size) if h0 is None else h0.copy()
    q = np.empty((size, num_actions))
    span = np.inf
    for _ in range(max_iter):
        for a in range(num_actions):
            q[:, a] = cost[:, a] + (1.0 - RVI_DAMPING) * (mdp.kernels[a] @ h) + RVI_DAMPING * h
        w = q.min(axis=1)
        diff = w - h
        span = float(diff.max() - diff.min())
        if span <= tol:
            gain = float(diff.max() + diff.min()) / 2.0
            policy = q.argmin(axis=1)
            return policy, gain, w - w[0]
        h = w - w[0]
    raise RviConvergenceError(
        f"no convergence after {max_iter} iterations (final span {span:.3e} > tol {tol:.3e})"
    )


def relative_value_iteration(
    mdp: ProductMdp,
    multiplier: float,
    tol: float = 1e-9,
    max_iter: int = 100_000,
) -> tuple[np.ndarray, float]:
    """Optimal deterministic policy and average stage cost at this multiplier.

    The gain is the long-run average of ``cae + multiplier * cost`` (the
    constant -multiplier * budget term is not included).
    """
    if tol <= 0.0:
        raise ValueError("tol must be > 0")
    policy, gain, _ = _rvi(mdp, multiplier, tol, max_iter)
    return policy, gain


@dataclass(frozen=True)
class SolvedPolicy:
    """Output of the exact solver: one action table, or a budget-tight mixture.

    A mixture draws table ``tables[0]`` with probability ``beta`` once per
    episode and follows it for the whole run; its long-run averages are the
    beta-interpolation of the two tables' exact averages.
    """

    kind: str  # "deterministic" | "mixture"
    tables: tuple[np.ndarray, ...]
    multiplier: float  # lambda for deterministic, bisection threshold gamma for mixture
    avg_cae: float
    avg_cost: float
    beta: float | None = None
    multipliers: tuple[float, float] | None = None  # (gamma - xi, gamma + xi)
    degenerate: bool = False

    def __post_init__(self):
        if self.kind not in ("deterministic", "mixture"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "mixture":
            if self.beta is None or not 0.0 <= self.beta <= 1.0:
                raise ValueError(f"mixture beta must be in [0, 1], got {self.beta}")
            if len(self.tables) != 2:
                raise ValueError("mixture needs exactly two tables")
        elif len(self.tables) != 1:
            raise ValueError("deterministic policy needs exactly one table")


def evaluate_policy(mdp: ProductMdp, policy) -> tuple[float, float]:
    """Exact long-run (avg_cae, avg_cost) of a policy on this MDP.

    Accepts an action table (array of length S) or a SolvedPolicy; a
    mixture evaluates to the beta-interpolation of its two tables.  For a
    multichain induced chain the averages are taken from the recurrent
    class(es) reachable from the reference state 0, weighted by absorption
    probability when there is more than one.
    """
    if isinstance(policy, SolvedPolicy):
        if policy.kind == "mixture":
            cae1, cost1 = evaluate_policy(mdp, policy.tables[0])
            cae2, cost2 = evaluate_policy(mdp, policy.tables[1])
            b = policy.beta
            return b * cae1 + (1 - b) * cae2, b * cost1 + (1 - b) * cost2
        table = policy.tables[0]
    else:
        table = np.asarray(policy, dtype=int)
    size = mdp.num_states
    if table.shape != (size,):
        raise ValueError(f"policy table has shape {table.shape}, expected ({size},)")

    chain = sparse.vstack([mdp.kernels[int(table[s])].getrow(s) for s in range(size)]).tocsr()
    n_comp, labels = csgraph.connected_components(chain, directed=True, connection="strong")

    # recurrent class = strongly connected component with no outgoing edge
    closed = np.ones(n_comp, dtype=bool)
    coo = chain.tocoo()
    for s, t in zip(coo.row, coo.col):
        if labels[s] != labels[t]:
            closed[labels[s]] = False

    order = csgraph.breadth_first_order(chain, 0, directed=True, return_predecessors=False)
    reachable = np.zeros(size, dtype=bool)
    reachable[order] = True
    classes = sorted({int(labels[s]) for s in np.nonzero(reachable)[0] if closed[labels[s]]})
    if not classes:
        raise ArithmeticError("no recurrent class reachable from the initial state")

    stage_cae_pi = mdp.stage_cae[np.arange(size), table]
    stage_cost_pi = mdp.stage_cost[table]

    def class_average(c: int) -> tuple[float, float]:
        members = np.nonzero(labels == c)[0]
        sub = chain[np.ix_(members, members)].toarray()
        k = len(members)
        a = sub.T - np.eye(k)
        a[-1, :] = 1.0
        b = np.zeros(k)
        b[-1] = 1.0
        pi = np.linalg.solve(a, b)
        pi = np.clip(pi, 0.0, None)
        pi /= pi.sum()
        residual = float(np.max(np.abs(pi @ sub - pi)))
        if residual > EVAL_RESIDUAL_TOL:
            raise ArithmeticError(f"stationary residual {residual:.3e} exceeds {EVAL_RESIDUAL_TOL}")
        return float(pi @ stage_cae_pi[members]), float(pi @ stage_cost_pi[members])

    if len(classes) == 1:
        return class_average(classes[0])

    # several reachable recurrent classes: weight by absorption probability.
    # State 0 must be transient here, else only its own class would be reachable.
    in_closed = closed[labels]
    transient = np.nonzero(reachable & ~in_closed)[0]
    averages = [class_average(c) for c in classes]
    t_index = {int(s): i for i, s in enumerate(transient)}
    q = chain[np.ix_(transient, transient)].toarray()
    r = np.zeros((len(transient), len(classes)))
    sub = chain[transient, :].toarray()
    for ci, c in enumerate(classes):
        r[:, ci] = sub[:, labels == c].sum(axis=1)
    absorb = np.linalg.solve(np.eye(len(transient)) - q, r)
    weights = absorb[t_index[0]]
    avg_cae = float(sum(w * a[0] for w, a in zip(weights, averages)))
    avg_cost = float(sum(w * a[1] for w, a in zip(weights, averages)))
    return avg_cae, avg_cost


def bisection_solve(
    mdp: ProductMdp,
    cost_budget: float | None = None,
    perturbation: float = 1e-3,
    bisect_tol: float = 1e-6,
    rvi_tol: float = 1e-9,
    max_iter: int = 100_000,
) -> SolvedPolicy:
    """Smallest multiplier whose optimal policy meets the budget, then mix.

    Returns the multiplier-0 policy outright when the budget is slack.
    Otherwise bisects on the multiplier and returns either a deterministic
    policy that meets the budget, or the randomized mixture of the two
    policies bracketing the threshold, whose interpolated cost equals the
    budget exactly.
    """
    budget = mdp.cost_budget if cost_budget is None else cost_budget
    if budget <= 0.0:
        raise ValueError(f"cost budget must be > 0, got {budget}")

    warm: dict[str, np.ndarray | None] = {"h": None}

    def solve(lam: float) -> tuple[np.ndarray, float, float]:
        policy, _, bias = _rvi(mdp, lam, rvi_tol, max_iter, h0=warm["h"])
        warm["h"] = bias
        cae, cost = evaluate_policy(mdp, policy)
        return policy, cae, cost

    table0, cae0, cost0 = solve(0.0)
    if cost0 <= budget + 1e-12:
        return SolvedPolicy("deterministic", (table0,), 0.0, cae0, cost0)

    lam_hi = 1.0
    for _ in range(80):
        _, _, cost_hi = solve(lam_hi)
        if cost_hi <= budget:
            break
        lam_hi *= 2.0
    else:
        raise ArithmeticError("no feasible multiplier found while doubling the upper bracket")

    lam_lo = 0.0
    while lam_hi - lam_lo > bisect_tol:
        mid = 0.5 * (lam_lo + lam_hi)
        _, _, cost_mid = solve(mid)
        if cost_mid <= budget:
            lam_hi = mid
        else:
            lam_lo = mid
    gamma = lam_hi

    lam_minus = max(gamma - perturbation, 0.0)
    lam_plus = gamma + perturbation
    table_m, cae_m, cost_m = solve(lam_minus)
    if cost_m <= budget + 1e-12:
        return SolvedPolicy("deterministic", (table_m,), lam_minus, cae_m, cost_m)
    table_p, cae_p, cost_p = solve(lam_plus)
    if cost_p > budget:
        # tie noise in the value iteration; fall back to the verified threshold
        lam_plus = gamma
        table_p, cae_p, cost_p = solve(lam_plus)

    denom = cost_m - cost_p
    if abs(denom) < 1e-12:
        return SolvedPolicy(
            "deterministic", (table_p,), lam_plus, cae_p, cost_p, degenerate=True
        )
    beta = (budget - cost_p) / denom
    beta = min(max(beta, 0.0), 1.0)
    avg_cae = beta * cae_m + (1.0 - beta) * cae_p
    avg_cost = beta * cost_m + (1.0 - beta) * cost_p
    return SolvedPolicy(
        "mixture",
        (table_m, table_p),
        gamma,
        avg_cae,
        avg_cost,
        beta=beta,
        multipliers=(lam_minus, lam_plus),
    )


def mixture_act(policy: SolvedPolicy, rng: np.random.Generator) -> Callable[[int], int]:
    """Episode-start selector: commit to one table w.p. beta, follow it throughout."""
    if policy.kind != "mixture":
        raise ValueError("mixture_act requires a mixture policy")
    table = policy.tables[0] if rng.random() < policy.beta else policy.tables[1]
    return lambda state_index: int(table[state_index])


def policy_to_dict(policy: SolvedPolicy, mdp: ProductMdp) -> dict:
    """JSON-ready form; joint-state ordering is the ProductMdp mixed-radix order."""
    return {
        "kind": policy.kind,
        "state_order": (
            "tables[...] maps joint state index -> action; index is mixed-radix "
            "over sources (source 1 most significant) with per-source sub-index "
            "(true_state-1)*N + (estimate-1)"
        ),
        "state_dims": list(mdp.dims),
        "success_prob": mdp.channel.success_prob,
        "cost_budget": mdp.cost_budget,
        "multiplier": policy.multiplier,
        "multipliers": list(policy.multipliers) if policy.multipliers else None,
        "beta": policy.beta,
        "avg_cae": policy.avg_cae,
        "avg_cost": policy.avg_cost,
        "degenerate": policy.degenerate,
        "tables": [np.asarray(t, dtype=int).tolist() for t in policy.tables],
    }


def policy_from_dict(data: dict) -> tuple[SolvedPolicy, list[int]]:
    """Inverse of policy_to_dict; also returns the per-source state counts."""
    tables = tuple(np.asarray(t, dtype=int) for t in data["tables"])
    policy = SolvedPolicy(
        kind=data["kind"],
        tables=tables,
        multiplier=float(data["multiplier"]),
        avg_cae=float(data["avg_cae"]),
        avg_cost=float(data["avg_cost"]),
        beta=None if data.get("beta") is None else float(data["beta"]),
        multipliers=None if data.get("multipliers") is None else tuple(data["multipliers"]),
        degenerate=bool(data.get("degenerate", False)),
    )
    return policy, [int(n) for n in data["state_dims"]]


def save_policy(policy: SolvedPolicy, mdp: ProductMdp, path: str | Path) -> None:
    Path(path).write_text(json.dumps(policy_to_dict(policy, mdp), indent=2) + "\n")


def load_policy(path: str | Path) -> tuple[SolvedPolicy, list[int]]:
    return policy_from_dict(json.loads(Path(path).read_text()))
