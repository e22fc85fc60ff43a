"""Scenario-file reading and observation normalisation.

The trainer depends on the simulator only through its external surfaces:
the scenario JSON schema (to size the network and normalise inputs) and
the env-server wire protocol.  Raw observations carry 1-based state
indices; each is divided by its source's state count so inputs lie in
(0, 1].  A queue coordinate, when present, is already in [0, 1).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ObservationSpec:
    state_counts: tuple[int, ...]  # per-source N_m
    include_queue_obs: bool = False

    @property
    def num_sources(self) -> int:
        return len(self.state_counts)

    @property
    def obs_dim(self) -> int:
        return 2 * self.num_sources + (1 if self.include_queue_obs else 0)

    @property
    def num_actions(self) -> int:
        return self.num_sources + 1

    def normalise(self, raw: list) -> np.ndarray:
        if len(raw) != self.obs_dim:
            raise ValueError(f"observation has length {len(raw)}, expected {self.obs_dim}")
        out = np.empty(self.obs_dim, dtype=np.float32)
        for m, n in enumerate(self.state_counts):
            out[2 * m] = raw[2 * m] / n
            out[2 * m + 1] = raw[2 * m + 1] / n
        if self.include_queue_obs:
            out[-1] = raw[-1]
        return out

    def enumerate_discrete(self) -> list[tuple]:
        """All possible raw observations, or [] when a queue coordinate
        makes the space continuous."""
        if self.include_queue_obs:
            return []
        combos: list[tuple] = [()]
        for n in self.state_counts:
            combos = [
                prev + (x, est)
                for prev in combos
                for x in range(1, n + 1)
                for est in range(1, n + 1)
            ]
        return combos


def read_scenario(scenario_file: str | Path) -> dict:
    data = json.loads(Path(scenario_file).read_text())
    counts = tuple(len(src["transition"]) for src in data["sources"])
    return {
        "state_counts": counts,
        "success_prob": float(data["channel"]["success_prob"]),
        "cost_budget": float(data["cost_budget"]),
        "penalty_weight": float(data["penalty_weight"]),
    }
