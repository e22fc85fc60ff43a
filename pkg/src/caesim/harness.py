"""Seeded simulation runner, metrics, sweeps and scenario presets.

A scenario bundles sources, channel, budget, policy and horizon; `run`
simulates it slot by slot and reports time-averaged error cost and
resource cost plus a decimated virtual-queue trace.  `sweep` repeats runs
along one axis (channel quality, penalty weight, or number of sources)
with per-replication seeds, and `presets` holds the reference scenarios.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import cmdp
from .baselines import SourceAgnosticPolicy
from .dpp import DppConfig, DppPolicy
from .dynamics import Channel, initial_state, step
from .sources import MarkovSource

POLICY_KINDS = ("dpp", "source-agnostic", "cost-free", "solved-cmdp", "external")
QUEUE_TRACE_POINTS = 10_000
SE_BATCHES = 1_000


class ScenarioError(ValueError):
    """A scenario file or configuration is invalid."""


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    slack: float = 0.0  # source-agnostic only
    policy_file: str | None = None  # solved-cmdp only

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ScenarioError(f"unknown policy kind {self.kind!r}; choose one of {POLICY_KINDS}")
        if self.kind == "solved-cmdp" and not self.policy_file:
            raise ScenarioError("solved-cmdp policy needs a policy file")


@dataclass(frozen=True)
class ScenarioConfig:
    sources: tuple[MarkovSource, ...]
    channel: Channel
    cost_budget: float
    penalty_weight: float
    horizon: int
    seed: int
    policy: PolicySpec
    burn_in: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if not self.sources:
            raise ScenarioError("scenario needs at least one source")
        if self.cost_budget <= 0.0:
            raise ScenarioError(f"cost_budget must be > 0, got {self.cost_budget}")
        if self.penalty_weight < 0.0:
            raise ScenarioError(f"V must be >= 0, got {self.penalty_weight}")
        if self.horizon < 1:
            raise ScenarioError(f"horizon must be >= 1, got {self.horizon}")
        if not 0 <= self.burn_in < self.horizon:
            raise ScenarioError(f"burn_in must be in [0, horizon), got {self.burn_in}")


@dataclass(frozen=True)
class SimulationResult:
    avg_cae: float
    avg_cost: float
    queue_trace: np.ndarray  # backlog sampled every ~horizon/10^4 slots
    queue_trace_slots: np.ndarray  # 1-based slot numbers of the samples
    per_source_tx_counts: tuple[int, ...]
    seed: int
    horizon: int
    se_cae: float  # batch-means standard errors
    se_cost: float
    final_backlog: float


# --- scenario (de)serialisation; the 1-based/0-based boundary lives here ---

def scenario_to_dict(config: ScenarioConfig) -> dict:
    policy: dict = {"kind": config.policy.kind}
    if config.policy.kind == "source-agnostic":
        policy["slack"] = config.policy.slack
    if config.policy.policy_file is not None:
        policy["file"] = config.policy.policy_file
    return {
        "sources": [
            {
                "transition": src.transition.tolist(),
                "cae": src.cae.tolist(),
                "weight": src.weight,
                "sampling_cost": src.sampling_cost,
            }
            for src in config.sources
        ],
        "channel": {"success_prob": config.channel.success_prob},
        "cost_budget": config.cost_budget,
        "penalty_weight": config.penalty_weight,
        "horizon": config.horizon,
        "seed": config.seed,
        "burn_in": config.burn_in,
        "policy": policy,
    }


def scenario_from_dict(data: dict) -> ScenarioConfig:
    try:
        sources = []
        for idx, raw in enumerate(data["sources"]):
            try:
                sources.append(
                    MarkovSource(
                        transition=raw["transition"],
                        cae=raw["cae"],
                        weight=float(raw.get("weight", 1.0)),
                        sampling_cost=float(raw.get("sampling_cost", 1.0)),
                    )
                )
            except ValueError as exc:
                raise ScenarioError(f"sources[{idx + 1}]: {exc}") from exc
        raw_policy = data.get("policy", {"kind": "dpp"})
        policy = PolicySpec(
            kind=raw_policy.get("kind", "dpp"),
            slack=float(raw_policy.get("slack", 0.0)),
            policy_file=raw_policy.get("file"),
        )
        return ScenarioConfig(
            sources=tuple(sources),
            channel=Channel(float(data["channel"]["success_prob"])),
            cost_budget=float(data["cost_budget"]),
            penalty_weight=float(data["penalty_weight"]),
            horizon=int(data["horizon"]),
            seed=int(data["seed"]),
            policy=policy,
            burn_in=int(data.get("burn_in", 0)),
        )
    except KeyError as exc:
        raise ScenarioError(f"scenario is missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc)) from exc


def load_scenario(path: str | Path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return scenario_from_dict(data)


def save_scenario(config: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(config), indent=2) + "\n")


# --- reference scenarios ---

_P1 = [
    [0.8, 0.2, 0.0, 0.0],
    [0.1, 0.8, 0.1, 0.0],
    [0.0, 0.1, 0.8, 0.1],
    [0.0, 0.0, 0.2, 0.8],
]
_D1 = [
    [0, 10, 50, 30],
    [10, 0, 40, 20],
    [20, 10, 0, 10],
    [30, 20, 40, 0],
]
_D2 = [[0, 5], [1, 0]]


def source_s1() -> MarkovSource:
    """Four-state banded source with strongly asymmetric error costs."""
    return MarkovSource(transition=_P1, cae=_D1)


def source_s2() -> MarkovSource:
    """Slow-varying two-state source (switch probabilities 0.1 / 0.15)."""
    return MarkovSource(transition=[[0.9, 0.1], [0.15, 0.85]], cae=_D2)


def source_s3() -> MarkovSource:
    """Fast-varying two-state source (switch probabilities 0.2 / 0.7)."""
    return MarkovSource(transition=[[0.8, 0.2], [0.7, 0.3]], cae=_D2)


def presets() -> dict[str, ScenarioConfig]:
    """Named scenarios: the three sources and the figure configurations."""
    dpp = PolicySpec("dpp")

    def single(src: MarkovSource, ps: float = 0.6) -> ScenarioConfig:
        return ScenarioConfig(
            sources=(src,),
            channel=Channel(ps),
            cost_budget=0.4,
            penalty_weight=100.0,
            horizon=1_000_000,
            seed=1,
            policy=dpp,
        )

    fig5 = ScenarioConfig(
        sources=(source_s1(), source_s2(), source_s3()),
        channel=Channel(0.6),
        cost_budget=0.8,
        penalty_weight=100.0,
        horizon=1_000_000,
        seed=1,
        policy=dpp,
    )
    out = {
        "s1": single(source_s1()),
        "s2": single(source_s2()),
        "s3": single(source_s3()),
        "fig2": single(source_s1()),
        "fig3": single(source_s1()),
        "fig4": single(source_s1(), ps=0.4),
        "fig5": fig5,
    }
    return out


# --- policy construction ---

class TablePolicy:
    """Replays a deterministic action table over the joint state index."""

    uses_queue = False

    def __init__(self, table: np.ndarray, dims: Sequence[int]):
        self._table = np.asarray(table, dtype=int)
        self._dims = list(dims)

    def reset(self, rng: np.random.Generator) -> None:
        pass

    def act(self, state, backlog) -> int:
        idx = 0
        for (x, est), n in zip(state, self._dims):
            idx = idx * n * n + x * n + est
        return int(self._table[idx])


class MixturePolicy(TablePolicy):
    """Commits to one of two tables at episode start with probability beta."""

    def __init__(self, policy: cmdp.SolvedPolicy, dims: Sequence[int]):
        super().__init__(policy.tables[0], dims)
        self._policy = policy

    def reset(self, rng: np.random.Generator) -> None:
        b = self._policy.beta
        self._table = self._policy.tables[0] if rng.random() < b else self._policy.tables[1]


def make_policy(config: ScenarioConfig):
    spec = config.policy
    sources, channel = config.sources, config.channel
    dims = [src.num_states for src in sources]
    if spec.kind == "dpp":
        return DppPolicy(DppConfig(config.penalty_weight, config.cost_budget), sources, channel)
    if spec.kind == "source-agnostic":
        costs = [src.sampling_cost for src in sources]
        return SourceAgnosticPolicy(len(sources), config.cost_budget, spec.slack, costs)
    if spec.kind == "cost-free":
        mdp = cmdp.build_product_mdp(sources, channel, config.cost_budget)
        table, _ = cmdp.relative_value_iteration(mdp, 0.0)
        return TablePolicy(table, dims)
    if spec.kind == "solved-cmdp":
        try:
            policy, file_dims = cmdp.load_policy(spec.policy_file)
        except FileNotFoundError as exc:
            raise ScenarioError(f"policy file not found: {spec.policy_file}") from exc
        if file_dims != dims:
            raise ScenarioError(
                f"policy file solved for sources with {file_dims} states, scenario has {dims}"
            )
        if policy.kind == "mixture":
            return MixturePolicy(policy, dims)
        return TablePolicy(policy.tables[0], dims)
    raise ScenarioError("external policies run through the env-server; see `caesim env-server`")


# --- simulation ---

def run(config: ScenarioConfig) -> SimulationResult:
    """Simulate the scenario for its horizon; pure function of the config.

    Per slot: the policy picks an action from the current state and queue
    backlog, the system steps, then the backlog absorbs the realised cost.
    Averages are arithmetic means over slots after the burn-in.
    """
    sources, channel = config.sources, config.channel
    policy = make_policy(config)
    rng = np.random.default_rng(config.seed)
    policy.reset(rng)

    state = initial_state(sources)
    budget = config.cost_budget
    horizon, burn = config.horizon, config.burn_in
    counted = horizon - burn
    stride = max(1, -(-horizon // QUEUE_TRACE_POINTS))
    batch = max(1, counted // SE_BATCHES)

    backlog = 0.0
    cae_sum = 0.0
    cost_sum = 0.0
    tx = [0] * (len(sources) + 1)
    trace_slots: list[int] = []
    trace: list[float] = []
    cae_batches: list[float] = []
    cost_batches: list[float] = []
    b_cae = b_cost = 0.0
    b_n = 0

    for t in range(horizon):
        action = policy.act(state, backlog)
        out = step(state, action, sources, channel, rng)
        state = out.next_state
        backlog = max(backlog - budget, 0.0) + out.cost
        if t >= burn:
            cae_sum += out.cae
            cost_sum += out.cost
            tx[action] += 1
            b_cae += out.cae
            b_cost += out.cost
            b_n += 1
            if b_n == batch:
                cae_batches.append(b_cae / batch)
                cost_batches.append(b_cost / batch)
                b_cae = b_cost = 0.0
                b_n = 0
        if (t + 1) % stride == 0:
            trace_slots.append(t + 1)
            trace.append(backlog)
    if not trace_slots or trace_slots[-1] != horizon:
        trace_slots.append(horizon)
        trace.append(backlog)

    if len(cae_batches) > 1:
        se_cae = float(np.std(cae_batches, ddof=1) / np.sqrt(len(cae_batches)))
        se_cost = float(np.std(cost_batches, ddof=1) / np.sqrt(len(cost_batches)))
    else:
        se_cae = se_cost = float("nan")

    return SimulationResult(
        avg_cae=cae_sum / counted,
        avg_cost=cost_sum / counted,
        queue_trace=np.array(trace),
        queue_trace_slots=np.array(trace_slots, dtype=int),
        per_source_tx_counts=tuple(tx[1:]),
        seed=config.seed,
        horizon=horizon,
        se_cae=se_cae,
        se_cost=se_cost,
        final_backlog=backlog,
    )


# --- parameter sweeps ---

SWEEP_AXES = ("ps", "V", "sources")


@dataclass(frozen=True)
class SweepRow:
    value: float
    replication: int
    seed: int
    result: SimulationResult


def apply_axis(base: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    if axis == "ps":
        return replace(base, channel=Channel(float(value)))
    if axis == "V":
        return replace(base, penalty_weight=float(value))
    if axis == "sources":
        k = int(value)
        if not 1 <= k <= len(base.sources):
            raise ScenarioError(f"cannot take {k} sources from a {len(base.sources)}-source scenario")
        return replace(base, sources=base.sources[:k])
    raise ScenarioError(f"unknown sweep axis {axis!r}; choose one of {SWEEP_AXES}")


def sweep(
    base: ScenarioConfig,
    axis: str,
    values: Sequence,
    replications: int = 1,
    n_jobs: int = 1,
) -> list[SweepRow]:
    """Run every (value, replication) cell; replication r uses seed base.seed + r.

    Rows are ordered by (value, replication) regardless of scheduling.
    """
    if replications < 1:
        raise ScenarioError(f"replications must be >= 1, got {replications}")
    cells = []
    for value in values:
        for r in range(replications):
            cfg = replace(apply_axis(base, axis, value), seed=base.seed + r)
            cells.append((value, r, cfg))
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, [cfg for _, _, cfg in cells]))
    else:
        results = [run(cfg) for _, _, cfg in cells]
    return [
        SweepRow(float(value), r, cfg.seed, res)
        for (value, r, cfg), res in zip(cells, results)
    ]


def sweep_summary(rows: Sequence[SweepRow]) -> dict[float, dict[str, float]]:
    """Per axis value: mean and standard error of avg_cae / avg_cost."""
    by_value: dict[float, list[SimulationResult]] = {}
    for row in rows:
        by_value.setdefault(row.value, []).append(row.result)
    out = {}
    for value, results in by_value.items():
        caes = np.array([r.avg_cae for r in results])
        costs = np.array([r.avg_cost for r in results])
        if len(results) > 1:
            se_cae = float(np.std(caes, ddof=1) / np.sqrt(len(caes)))
            se_cost = float(np.std(costs, ddof=1) / np.sqrt(len(costs)))
        else:
            se_cae, se_cost = results[0].se_cae, results[0].se_cost
        out[value] = {
            "mean_cae": float(caes.mean()),
            "se_cae": se_cae,
            "mean_cost": float(costs.mean()),
            "se_cost": se_cost,
        }
    return out


def write_sweep_csv(rows: Sequence[SweepRow], path: str | Path) -> None:
    """One row per (value, replication) with the per-value mean/se columns."""
    summary = sweep_summary(rows)
    max_m = max(len(row.result.per_source_tx_counts) for row in rows)
    header = ["value", "replication", "seed", "avg_cae", "avg_cost",
              "mean_cae", "se_cae", "mean_cost", "se_cost"]
    header += [f"tx_{m + 1}" for m in range(max_m)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            agg = summary[row.value]
            record = [
                row.value, row.replication, row.seed,
                f"{row.result.avg_cae:.10g}", f"{row.result.avg_cost:.10g}",
                f"{agg['mean_cae']:.10g}", f"{agg['se_cae']:.6g}",
                f"{agg['mean_cost']:.10g}", f"{agg['se_cost']:.6g}",
            ]
            counts = list(row.result.per_source_tx_counts)
            record += counts + [""] * (max_m - len(counts))
            writer.writerow(record)
