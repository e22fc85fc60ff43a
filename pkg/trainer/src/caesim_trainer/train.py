"""Training loop: PPO against a spawned env-server.

One training run is a sequence of fixed-length episodes; the environment
(and its virtual queue) is reset with a fresh recorded seed at every
episode boundary.  Because the observation space of a queue-less scenario
is a small finite set, the frozen policy is evaluated once per rollout
for every possible observation and rollout collection only indexes into
that cache.
"""

from __future__ import annotations

import csv
import shlex
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .env_client import EnvClient
from .observations import ObservationSpec, read_scenario
from .ppo import ActorCritic, TrainConfig, compute_gae, ppo_update

CACHE_LIMIT = 4_096


def build_env_command(config: TrainConfig, scenario_file: str | Path) -> list[str]:
    args = shlex.split(config.env_command) + ["--scenario", str(scenario_file)]
    if config.include_queue_obs:
        args.append("--include-queue-obs")
    return args


class _FrozenPolicy:
    """Per-rollout snapshot of action probabilities and values."""

    def __init__(self, net: ActorCritic, spec: ObservationSpec):
        self.net = net
        self.spec = spec
        combos = spec.enumerate_discrete()
        self.cached = 0 < len(combos) <= CACHE_LIMIT
        if self.cached:
            self.index = {combo: i for i, combo in enumerate(combos)}
            self.matrix = np.stack([spec.normalise(list(c)) for c in combos])
            with torch.no_grad():
                t = torch.as_tensor(self.matrix)
                self.probs = net.action_probs(t).numpy()
                self.values = net.value(t).numpy()
            self.cumprobs = np.cumsum(self.probs, axis=1)
            self.cumprobs[:, -1] = 1.0

    def lookup(self, raw_obs: list) -> tuple[np.ndarray, np.ndarray, float]:
        """(normalised obs, action probabilities, value) for one observation."""
        if self.cached:
            i = self.index[tuple(raw_obs)]
            return self.matrix[i], self.probs[i], float(self.values[i])
        norm = self.spec.normalise(raw_obs)
        with torch.no_grad():
            t = torch.as_tensor(norm).unsqueeze(0)
            probs = self.net.action_probs(t).numpy()[0]
            value = float(self.net.value(t).numpy()[0])
        return norm, probs, value

    def sample(self, probs: np.ndarray, u: float) -> int:
        return int(np.searchsorted(np.cumsum(probs), u, side="right").clip(0, len(probs) - 1))


def episode_seed(train_seed: int, episode: int) -> int:
    return train_seed * 1_000_000 + episode


def train(
    config: TrainConfig,
    scenario_file: str | Path,
    out_dir: str | Path,
) -> dict:
    """Run PPO for config.total_steps env steps; returns artifact paths.

    Writes ``policy.pt`` (checkpoint) and ``training_curve.csv`` (one row
    per episode: episode, env_seed, steps, mean_reward, avg_cae, avg_cost)
    into ``out_dir``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenario = read_scenario(scenario_file)
    spec = ObservationSpec(scenario["state_counts"], config.include_queue_obs)

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    net = ActorCritic(spec.obs_dim, spec.num_actions, tuple(config.hidden_sizes))
    actor_opt = torch.optim.Adam(net.actor.parameters(), lr=config.actor_lr)
    critic_opt = torch.optim.Adam(net.critic.parameters(), lr=config.critic_lr)

    curve_rows: list[dict] = []
    episode = 0
    ep_steps = 0
    ep_reward = ep_cae = ep_cost = 0.0

    with EnvClient(build_env_command(config, scenario_file)) as env:
        obs_raw = env.reset(episode_seed(config.seed, episode))
        steps_done = 0
        while steps_done < config.total_steps:
            horizon = min(config.rollout_steps, config.total_steps - steps_done)
            frozen = _FrozenPolicy(net, spec)
            obs_buf = np.empty((horizon, spec.obs_dim), dtype=np.float32)
            act_buf = np.empty(horizon, dtype=np.int64)
            logp_buf = np.empty(horizon, dtype=np.float64)
            rew_buf = np.empty(horizon, dtype=np.float64)
            val_buf = np.empty(horizon, dtype=np.float64)
            done_buf = np.zeros(horizon, dtype=bool)

            for t in range(horizon):
                norm, probs, value = frozen.lookup(obs_raw)
                action = frozen.sample(probs, rng.random())
                next_obs, reward, info = env.step(action)

                obs_buf[t] = norm
                act_buf[t] = action
                logp_buf[t] = np.log(max(probs[action], 1e-12))
                rew_buf[t] = reward * config.reward_scale
                val_buf[t] = value

                ep_steps += 1
                ep_reward += reward
                ep_cae += info["cae"]
                ep_cost += info["cost"]

                if ep_steps >= config.steps_per_episode:
                    done_buf[t] = True
                    curve_rows.append(
                        {
                            "episode": episode,
                            "train_seed": config.seed,
                            "env_seed": episode_seed(config.seed, episode),
                            "steps": ep_steps,
                            "mean_reward": ep_reward / ep_steps,
                            "avg_cae": ep_cae / ep_steps,
                            "avg_cost": ep_cost / ep_steps,
                        }
                    )
                    episode += 1
                    ep_steps = 0
                    ep_reward = ep_cae = ep_cost = 0.0
                    obs_raw = env.reset(episode_seed(config.seed, episode))
                else:
                    obs_raw = next_obs

            last_value = 0.0 if done_buf[-1] else frozen.lookup(obs_raw)[2]
            advantages, returns = compute_gae(
                rew_buf, val_buf, done_buf, last_value, config.discount, config.gae_lambda
            )
            ppo_update(
                net, actor_opt, critic_opt, config,
                obs_buf, act_buf, logp_buf, advantages, returns, rng,
            )
            steps_done += horizon

    checkpoint = out / "policy.pt"
    save_checkpoint(net, spec, config, checkpoint, episodes=episode, scenario_params=scenario)
    curve = out / "training_curve.csv"
    with open(curve, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["episode", "train_seed", "env_seed", "steps",
                        "mean_reward", "avg_cae", "avg_cost"],
        )
        writer.writeheader()
        writer.writerows(curve_rows)
    return {"checkpoint": checkpoint, "curve": curve, "episodes": episode}


def save_checkpoint(
    net: ActorCritic,
    spec: ObservationSpec,
    config: TrainConfig,
    path: str | Path,
    episodes: int = 0,
    scenario_params: dict | None = None,
) -> None:
    torch.save(
        {
            "state_dict": net.state_dict(),
            "obs_dim": spec.obs_dim,
            "num_actions": spec.num_actions,
            "hidden_sizes": list(config.hidden_sizes),
            "state_counts": list(spec.state_counts),
            "include_queue_obs": spec.include_queue_obs,
            "train_seed": config.seed,
            "episodes": episodes,
            "total_steps": config.total_steps,
            "scenario_params": scenario_params or {},
            "train_config": {k: list(v) if isinstance(v, tuple) else v
                             for k, v in asdict(config).items()},
        },
        path,
    )


def load_policy(path: str | Path) -> tuple[ActorCritic, ObservationSpec, dict]:
    data = torch.load(path, map_location="cpu", weights_only=True)
    spec = ObservationSpec(tuple(data["state_counts"]), bool(data["include_queue_obs"]))
    net = ActorCritic(data["obs_dim"], data["num_actions"], tuple(data["hidden_sizes"]))
    net.load_state_dict(data["state_dict"])
    net.eval()
    return net, spec, data
