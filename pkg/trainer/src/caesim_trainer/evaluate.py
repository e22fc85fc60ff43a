"""Frozen-policy evaluation through the env-server protocol.

Actions are greedy (argmax of the action distribution) by default; the
output CSV uses the simulator's sweep columns so result files can be laid
side by side:

    value,replication,seed,avg_cae,avg_cost,mean_cae,se_cae,mean_cost,se_cost,tx_1..tx_M
"""

from __future__ import annotations

import csv
import shlex
from pathlib import Path

import numpy as np
import torch

from .env_client import EnvClient
from .observations import read_scenario
from .train import load_policy

EVAL_SEED_BASE = 777_000


def evaluate(
    policy_file: str | Path,
    scenario_file: str | Path,
    episodes: int,
    horizon: int,
    env_command: str = "python3 -m caesim.cli env-server",
    greedy: bool = True,
    seed_base: int = EVAL_SEED_BASE,
    out_csv: str | Path | None = None,
) -> dict:
    """Per-episode averages plus the aggregate mean and standard error."""
    net, spec, meta = load_policy(policy_file)
    scenario = read_scenario(scenario_file)
    if tuple(scenario["state_counts"]) != spec.state_counts:
        raise ValueError(
            f"policy was trained for sources with {list(spec.state_counts)} states, "
            f"scenario has {list(scenario['state_counts'])}"
        )

    args = shlex.split(env_command) + ["--scenario", str(scenario_file)]
    if spec.include_queue_obs:
        args.append("--include-queue-obs")

    # frozen policy: precompute the action table over the discrete space
    combos = spec.enumerate_discrete()
    table: dict | None = None
    if combos:
        with torch.no_grad():
            probs = net.action_probs(
                torch.as_tensor(np.stack([spec.normalise(list(c)) for c in combos]))
            ).numpy()
        table = {combo: probs[i] for i, combo in enumerate(combos)}

    def action_probs(raw_obs: list) -> np.ndarray:
        if table is not None:
            return table[tuple(raw_obs)]
        with torch.no_grad():
            return net.action_probs(torch.as_tensor(spec.normalise(raw_obs)).unsqueeze(0)).numpy()[0]

    rows = []
    with EnvClient(args) as env:
        for e in range(episodes):
            seed = seed_base + e
            rng = np.random.default_rng(seed)
            obs = env.reset(seed)
            cae_sum = cost_sum = 0.0
            tx = np.zeros(spec.num_actions, dtype=int)
            for _ in range(horizon):
                probs = action_probs(obs)
                if greedy:
                    action = int(np.argmax(probs))
                else:
                    action = int(np.searchsorted(np.cumsum(probs), rng.random()).clip(0, len(probs) - 1))
                obs, _, info = env.step(action)
                cae_sum += info["cae"]
                cost_sum += info["cost"]
                tx[action] += 1
            rows.append(
                {
                    "replication": e,
                    "seed": seed,
                    "avg_cae": cae_sum / horizon,
                    "avg_cost": cost_sum / horizon,
                    "tx": tuple(int(c) for c in tx[1:]),
                }
            )

    caes = np.array([r["avg_cae"] for r in rows])
    costs = np.array([r["avg_cost"] for r in rows])
    if episodes > 1:
        se_cae = float(caes.std(ddof=1) / np.sqrt(episodes))
        se_cost = float(costs.std(ddof=1) / np.sqrt(episodes))
    else:
        se_cae = se_cost = float("nan")
    summary = {
        "value": scenario["success_prob"],
        "mean_cae": float(caes.mean()),
        "se_cae": se_cae,
        "mean_cost": float(costs.mean()),
        "se_cost": se_cost,
        "rows": rows,
        "policy_meta": {"train_seed": meta["train_seed"], "episodes": meta["episodes"]},
    }
    if out_csv is not None:
        write_csv(summary, spec.num_sources, out_csv)
    return summary


def write_csv(summary: dict, num_sources: int, path: str | Path) -> None:
    header = ["value", "replication", "seed", "avg_cae", "avg_cost",
              "mean_cae", "se_cae", "mean_cost", "se_cost"]
    header += [f"tx_{m + 1}" for m in range(num_sources)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in summary["rows"]:
            record = [
                summary["value"], row["replication"], row["seed"],
                f"{row['avg_cae']:.10g}", f"{row['avg_cost']:.10g}",
                f"{summary['mean_cae']:.10g}", f"{summary['se_cae']:.6g}",
                f"{summary['mean_cost']:.10g}", f"{summary['se_cost']:.6g}",
            ]
            record += list(row["tx"])
            writer.writerow(record)
