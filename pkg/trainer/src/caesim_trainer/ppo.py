"""Actor-critic networks and the clipped-surrogate update.

Both heads are plain ReLU MLPs (input, two hidden layers, output): the
actor emits one logit per action, the critic one value.  The actor's
output layer starts at zero so the initial policy is exactly uniform.
Actor and critic keep separate optimisers with their own learning rates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


@dataclass
class TrainConfig:
    steps_per_episode: int = 10_000
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    discount: float = 0.99
    hidden_sizes: tuple[int, int] = (128, 128)
    total_steps: int = 2_000_000
    env_command: str = "python3 -m caesim.cli env-server"
    eval_episodes: int = 5
    include_queue_obs: bool = False
    seed: int = 0
    # PPO internals (standard defaults; the reference setup fixes only the values above)
    rollout_steps: int = 4_096
    minibatch_size: int = 256
    update_epochs: int = 10
    clip_ratio: float = 0.2
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    reward_scale: float = 1e-3  # tames V * cae magnitudes in the critic

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must be in (0, 1), got {self.discount}")
        if self.actor_lr <= 0.0 or self.critic_lr <= 0.0:
            raise ValueError("learning rates must be > 0")
        if self.steps_per_episode < 1 or self.total_steps < 1:
            raise ValueError("step counts must be >= 1")


def _mlp(sizes: list[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for a, b in zip(sizes, sizes[1:-1]):
        layers += [nn.Linear(a, b), nn.ReLU()]
    layers.append(nn.Linear(sizes[-2], sizes[-1]))
    return nn.Sequential(*layers)


class ActorCritic(nn.Module):
    def __init__(self, obs_dim: int, num_actions: int, hidden: tuple[int, int] = (128, 128)):
        super().__init__()
        self.actor = _mlp([obs_dim, *hidden, num_actions])
        self.critic = _mlp([obs_dim, *hidden, 1])
        head: nn.Linear = self.actor[-1]
        nn.init.zeros_(head.weight)
        nn.init.zeros_(head.bias)

    def action_probs(self, obs: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.actor(obs), dim=-1)

    def value(self, obs: torch.Tensor) -> torch.Tensor:
        return self.critic(obs).squeeze(-1)


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    last_value: float,
    discount: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalised advantage estimates and value targets.

    ``dones[t]`` marks the end of an episode at step t; the bootstrap
    value is cut there.
    """
    n = len(rewards)
    advantages = np.zeros(n, dtype=np.float64)
    gae = 0.0
    next_value = last_value
    for t in range(n - 1, -1, -1):
        mask = 0.0 if dones[t] else 1.0
        delta = rewards[t] + discount * next_value * mask - values[t]
        gae = delta + discount * lam * mask * gae
        advantages[t] = gae
        next_value = values[t]
    return advantages, advantages + values


def ppo_update(
    net: ActorCritic,
    actor_opt: torch.optim.Optimizer,
    critic_opt: torch.optim.Optimizer,
    cfg: TrainConfig,
    obs: np.ndarray,
    actions: np.ndarray,
    logp_old: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    rng: np.random.Generator,
) -> dict:
    """Several epochs of clipped-surrogate minibatch steps over one rollout."""
    device = next(net.parameters()).device
    obs_t = torch.as_tensor(obs, dtype=torch.float32, device=device)
    act_t = torch.as_tensor(actions, dtype=torch.int64, device=device)
    logp_old_t = torch.as_tensor(logp_old, dtype=torch.float32, device=device)
    adv = (advantages - advantages.mean()) / (advantages.std() + 1e-8)
    adv_t = torch.as_tensor(adv, dtype=torch.float32, device=device)
    ret_t = torch.as_tensor(returns, dtype=torch.float32, device=device)

    n = len(obs)
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_frac": 0.0}
    batches = 0
    for _ in range(cfg.update_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = torch.as_tensor(order[start:start + cfg.minibatch_size], device=device)
            logits = net.actor(obs_t[idx])
            dist = torch.distributions.Categorical(logits=logits)
            logp = dist.log_prob(act_t[idx])
            ratio = torch.exp(logp - logp_old_t[idx])
            clipped = torch.clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
            policy_loss = -torch.min(ratio * adv_t[idx], clipped * adv_t[idx]).mean()
            entropy = dist.entropy().mean()

            actor_opt.zero_grad()
            (policy_loss - cfg.entropy_coef * entropy).backward()
            nn.utils.clip_grad_norm_(net.actor.parameters(), cfg.max_grad_norm)
            actor_opt.step()

            value = net.value(obs_t[idx])
            value_loss = torch.mean((value - ret_t[idx]) ** 2)
            critic_opt.zero_grad()
            value_loss.backward()
            nn.utils.clip_grad_norm_(net.critic.parameters(), cfg.max_grad_norm)
            critic_opt.step()

            with torch.no_grad():
                stats["policy_loss"] += float(policy_loss)
                stats["value_loss"] += float(value_loss)
                stats["entropy"] += float(entropy)
                stats["clip_frac"] += float((torch.abs(ratio - 1.0) > cfg.clip_ratio).float().mean())
            batches += 1
    return {k: v / batches for k, v in stats.items()}
