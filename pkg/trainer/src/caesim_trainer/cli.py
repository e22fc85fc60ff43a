"""Trainer command line: train a policy, evaluate a checkpoint."""

from __future__ import annotations

import argparse
import sys

from .evaluate import evaluate
from .ppo import TrainConfig
from .train import train


def cmd_train(args) -> int:
    config = TrainConfig(
        total_steps=args.total_steps,
        steps_per_episode=args.steps_per_episode,
        actor_lr=args.actor_lr,
        critic_lr=args.critic_lr,
        discount=args.discount,
        env_command=args.env_command,
        eval_episodes=args.eval_episodes,
        include_queue_obs=args.include_queue_obs,
        seed=args.seed,
    )
    artifacts = train(config, args.scenario, args.out_dir)
    print(f"checkpoint: {artifacts['checkpoint']}")
    print(f"training curve: {artifacts['curve']} ({artifacts['episodes']} episodes)")
    return 0


def cmd_evaluate(args) -> int:
    summary = evaluate(
        args.policy,
        args.scenario,
        episodes=args.episodes,
        horizon=args.horizon,
        env_command=args.env_command,
        greedy=not args.stochastic,
        out_csv=args.out,
    )
    print(
        f"avg_cae={summary['mean_cae']:.6f} (se {summary['se_cae']:.3g}) "
        f"avg_cost={summary['mean_cost']:.6f} (se {summary['se_cost']:.3g})"
    )
    if args.out:
        print(f"results written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="caesim-trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy against the env-server")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--total-steps", type=int, default=2_000_000)
    p.add_argument("--steps-per-episode", type=int, default=10_000)
    p.add_argument("--actor-lr", type=float, default=3e-4)
    p.add_argument("--critic-lr", type=float, default=1e-3)
    p.add_argument("--discount", type=float, default=0.99)
    p.add_argument("--eval-episodes", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--include-queue-obs", action="store_true")
    p.add_argument("--env-command", default="python3 -m caesim.cli env-server")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a trained checkpoint")
    p.add_argument("--policy", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--horizon", type=int, default=100_000)
    p.add_argument("--stochastic", action="store_true",
                   help="sample actions instead of taking the argmax")
    p.add_argument("--out", help="write per-episode CSV here")
    p.add_argument("--env-command", default="python3 -m caesim.cli env-server")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
