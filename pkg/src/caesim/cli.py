"""Command-line entry point: simulate, solve, sweep, env-server.

Scenario files are JSON documents mirroring ScenarioConfig (matrices as
nested arrays, states 1-based).  Exit codes: 2 for configuration errors,
3 when the exact solver's state-space cap is exceeded, 1 for runtime
failures.

The env-server speaks newline-delimited JSON over stdin/stdout, one
request per line, one reply per request:

    {"cmd": "reset", "seed": 7}   -> {"obs": [1, 1]}
    {"cmd": "step", "action": 0}  -> {"obs": [...], "reward": r,
                                      "info": {"cae": d, "cost": c, "z": z}}
    {"cmd": "close"}              -> {"ok": true}

The observation lists the (true state, estimate) pair of every source,
1-based, length 2M; with --include-queue-obs the normalised backlog
z/(1+z) is appended.  The step reward is the negative realised
drift-plus-penalty -(z'^2/2 - z^2/2 + V * cae).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import cmdp
from .dynamics import initial_state, step
from .harness import (
    PolicySpec,
    ScenarioConfig,
    ScenarioError,
    load_scenario,
    presets,
    run,
    save_scenario,
    sweep,
    sweep_summary,
    write_sweep_csv,
)
from .sources import SourceSpecError

EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_CAP = 3


def _resolve_scenario(args) -> ScenarioConfig:
    from dataclasses import replace

    if getattr(args, "scenario", None):
        config = load_scenario(args.scenario)
    elif getattr(args, "preset", None):
        table = presets()
        if args.preset not in table:
            raise ScenarioError(f"unknown preset {args.preset!r}; choose one of {sorted(table)}")
        config = table[args.preset]
    else:
        raise ScenarioError("provide --scenario FILE or --preset NAME")

    from .dynamics import Channel

    if getattr(args, "ps", None) is not None:
        config = replace(config, channel=Channel(args.ps))
    if getattr(args, "V", None) is not None:
        config = replace(config, penalty_weight=args.V)
    if getattr(args, "cmax", None) is not None:
        config = replace(config, cost_budget=args.cmax)
    if getattr(args, "T", None) is not None:
        config = replace(config, horizon=args.T)
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "burn_in", None) is not None:
        config = replace(config, burn_in=args.burn_in)
    if getattr(args, "policy", None) is not None:
        config = replace(
            config,
            policy=PolicySpec(
                kind=args.policy,
                slack=getattr(args, "slack", 0.0) or 0.0,
                policy_file=getattr(args, "policy_file", None),
            ),
        )
    elif getattr(args, "policy_file", None) is not None:
        config = replace(
            config, policy=PolicySpec(kind="solved-cmdp", policy_file=args.policy_file)
        )
    return config


def parse_values(text: str) -> list[float]:
    """Comma list ("1,10,100") or inclusive range ("0.2:1.0:0.1")."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ScenarioError(f"range must be start:stop:step, got {text!r}")
        start, stop, stride = (float(p) for p in parts)
        if stride <= 0:
            raise ScenarioError("range step must be > 0")
        count = int(round((stop - start) / stride))
        values = [start + k * stride for k in range(count + 1)]
        return [round(v, 12) for v in values if v <= stop + 1e-9]
    return [float(p) for p in text.split(",") if p.strip()]


def cmd_simulate(args) -> int:
    config = _resolve_scenario(args)
    result = run(config)
    tx = ",".join(str(c) for c in result.per_source_tx_counts)
    print(f"policy={config.policy.kind} seed={result.seed} horizon={result.horizon}")
    print(f"avg_cae={result.avg_cae:.6f} avg_cost={result.avg_cost:.6f}")
    print(f"se_cae={result.se_cae:.3g} se_cost={result.se_cost:.3g} "
          f"tx=[{tx}] final_backlog={result.final_backlog:.6g}")
    if args.out:
        with open(args.out, "w") as fh:
            header = ["seed", "horizon", "avg_cae", "avg_cost", "se_cae", "se_cost"]
            header += [f"tx_{m + 1}" for m in range(len(result.per_source_tx_counts))]
            fh.write(",".join(header) + "\n")
            row = [str(result.seed), str(result.horizon), f"{result.avg_cae:.10g}",
                   f"{result.avg_cost:.10g}", f"{result.se_cae:.6g}", f"{result.se_cost:.6g}"]
            row += [str(c) for c in result.per_source_tx_counts]
            fh.write(",".join(row) + "\n")
    return 0


def cmd_solve(args) -> int:
    config = _resolve_scenario(args)
    mdp = cmdp.build_product_mdp(config.sources, config.channel, config.cost_budget)
    policy = cmdp.bisection_solve(
        mdp, perturbation=args.xi, bisect_tol=args.tol
    )
    print(f"kind={policy.kind} multiplier={policy.multiplier:.8g} "
          f"beta={'-' if policy.beta is None else f'{policy.beta:.8g}'}")
    print(f"avg_cae={policy.avg_cae:.10g} avg_cost={policy.avg_cost:.10g}")
    if policy.degenerate:
        print("note: bracketing policies had equal cost; returned the cheaper one")
    if args.out:
        cmdp.save_policy(policy, mdp, args.out)
        print(f"policy written to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    config = _resolve_scenario(args)
    values = args.values if isinstance(args.values, list) else parse_values(args.values)
    rows = sweep(config, args.axis, values, replications=args.replications, n_jobs=args.jobs)
    for value, agg in sorted(sweep_summary(rows).items()):
        print(f"{args.axis}={value:g} mean_cae={agg['mean_cae']:.6f} (se {agg['se_cae']:.3g}) "
              f"mean_cost={agg['mean_cost']:.6f} (se {agg['se_cost']:.3g})")
    if args.out:
        out = Path(args.out)
        if out.suffix != ".csv":
            out.mkdir(parents=True, exist_ok=True)
            out = out / f"sweep_{args.axis}.csv"
        write_sweep_csv(rows, out)
        print(f"results written to {out}")
    return 0


def cmd_export_preset(args) -> int:
    table = presets()
    if args.preset not in table:
        raise ScenarioError(f"unknown preset {args.preset!r}; choose one of {sorted(table)}")
    save_scenario(table[args.preset], args.out)
    print(f"scenario written to {args.out}")
    return 0


class EnvServer:
    """One client session over line-delimited JSON; state lives server-side."""

    def __init__(self, config: ScenarioConfig, include_queue_obs: bool = False):
        self.config = config
        self.include_queue_obs = include_queue_obs
        self.rng: np.random.Generator | None = None
        self.state = None
        self.backlog = 0.0

    def _obs(self) -> list:
        obs: list = []
        for x, est in self.state:
            obs.extend((x + 1, est + 1))
        if self.include_queue_obs:
            obs.append(self.backlog / (1.0 + self.backlog))
        return obs

    def handle(self, message: dict) -> dict:
        cmd = message.get("cmd")
        if cmd == "reset":
            seed = message.get("seed")
            if not isinstance(seed, int) or isinstance(seed, bool):
                return {"error": "reset needs an integer seed"}
            self.rng = np.random.default_rng(seed)
            self.state = initial_state(self.config.sources)
            self.backlog = 0.0
            return {"obs": self._obs()}
        if cmd == "step":
            if self.rng is None:
                return {"error": "reset required before step"}
            action = message.get("action")
            if (
                not isinstance(action, int)
                or isinstance(action, bool)
                or not 0 <= action <= len(self.config.sources)
            ):
                return {"error": f"action must be an integer in 0..{len(self.config.sources)}"}
            out = step(self.state, action, self.config.sources, self.config.channel, self.rng)
            self.state = out.next_state
            z0 = self.backlog
            z1 = max(z0 - self.config.cost_budget, 0.0) + out.cost
            self.backlog = z1
            reward = -(0.5 * z1 * z1 - 0.5 * z0 * z0 + self.config.penalty_weight * out.cae)
            return {
                "obs": self._obs(),
                "reward": reward,
                "info": {"cae": out.cae, "cost": out.cost, "z": z1},
            }
        if cmd == "close":
            return {"ok": True}
        return {"error": f"unknown cmd {cmd!r}"}


def cmd_env_server(args) -> int:
    config = _resolve_scenario(args)
    server = EnvServer(config, include_queue_obs=args.include_queue_obs)
    out = sys.stdout
    for line in sys.stdin:
        if not line.strip():
            reply = {"error": "empty message"}
        else:
            try:
                message = json.loads(line)
                if not isinstance(message, dict):
                    raise ValueError("message must be a JSON object")
            except ValueError as exc:
                reply = {"error": f"malformed message: {exc}"}
            else:
                try:
                    reply = server.handle(message)
                except Exception as exc:  # noqa: BLE001 - any bad input keeps the session up
                    reply = {"error": f"bad request: {exc}"}
        out.write(json.dumps(reply) + "\n")
        out.flush()
        if reply.get("ok"):
            break
    return 0


def _add_scenario_args(p: argparse.ArgumentParser, with_policy: bool = True) -> None:
    p.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--preset", help="named preset scenario (s1, s2, s3, fig2..fig5)")
    p.add_argument("--ps", type=float, help="channel success probability override")
    p.add_argument("--V", type=float, help="penalty weight override")
    p.add_argument("--cmax", type=float, help="cost budget override")
    p.add_argument("--T", type=int, help="horizon override (slots)")
    p.add_argument("--seed", type=int, help="seed override")
    if with_policy:
        p.add_argument("--policy", choices=["dpp", "source-agnostic", "cost-free", "solved-cmdp"],
                       help="policy override")
        p.add_argument("--slack", type=float, default=0.0,
                       help="source-agnostic slack below the budget (default 0)")
        p.add_argument("--policy-file", help="solved policy file to replay")
        p.add_argument("--burn-in", dest="burn_in", type=int, help="slots excluded from averages")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="caesim",
                                     description="Goal-oriented remote estimation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one seeded simulation")
    _add_scenario_args(p)
    p.add_argument("--out", help="write a one-row CSV summary here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve", help="solve the constrained MDP exactly")
    _add_scenario_args(p, with_policy=False)
    p.add_argument("--xi", type=float, default=1e-3, help="multiplier perturbation (default 1e-3)")
    p.add_argument("--tol", type=float, default=1e-6, help="bisection tolerance (default 1e-6)")
    p.add_argument("--out", help="write the solved policy here (JSON)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="sweep one axis with replications")
    _add_scenario_args(p)
    p.add_argument("--axis", required=True, choices=["ps", "V", "sources"])
    p.add_argument("--values", required=True,
                   help='comma list "1,10,100" or range "0.2:1.0:0.1"')
    p.add_argument("--replications", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out", help="CSV file or directory for the results")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-preset", help="write a preset scenario to JSON")
    p.add_argument("--preset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_preset)

    p = sub.add_parser("env-server", help="serve the simulator over stdin/stdout")
    _add_scenario_args(p, with_policy=False)
    p.add_argument("--include-queue-obs", action="store_true",
                   help="append z/(1+z) to the observation")
    p.set_defaults(func=cmd_env_server)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, SourceSpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except cmdp.StateSpaceCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - surface anything else as runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
