"""Goal-oriented remote estimation of Markov sources over a lossy channel.

Simulator, drift-plus-penalty sampling policy, exact constrained-MDP
solver, baselines, and an environment server for external learners.
"""

from .baselines import SourceAgnosticPolicy, source_agnostic_decide, source_agnostic_probs
from .cmdp import (
    ProductMdp,
    SolvedPolicy,
    StateSpaceCapError,
    bisection_solve,
    build_product_mdp,
    evaluate_policy,
    load_policy,
    mixture_act,
    relative_value_iteration,
    save_policy,
)
from .dpp import DppConfig, DppPolicy, VirtualQueue, dpp_decide, expected_cae, queue_update
from .dynamics import Channel, StepOutcome, SystemState, initial_state, step, sub_kernel
from .harness import (
    PolicySpec,
    ScenarioConfig,
    SimulationResult,
    load_scenario,
    presets,
    run,
    save_scenario,
    sweep,
)
from .sources import MarkovSource, sample_next, stationary_distribution, validate

__all__ = [
    "Channel",
    "DppConfig",
    "DppPolicy",
    "MarkovSource",
    "PolicySpec",
    "ProductMdp",
    "ScenarioConfig",
    "SimulationResult",
    "SolvedPolicy",
    "SourceAgnosticPolicy",
    "StateSpaceCapError",
    "StepOutcome",
    "SystemState",
    "VirtualQueue",
    "bisection_solve",
    "build_product_mdp",
    "dpp_decide",
    "evaluate_policy",
    "expected_cae",
    "initial_state",
    "load_policy",
    "load_scenario",
    "mixture_act",
    "presets",
    "queue_update",
    "relative_value_iteration",
    "run",
    "sample_next",
    "save_policy",
    "save_scenario",
    "source_agnostic_decide",
    "source_agnostic_probs",
    "stationary_distribution",
    "step",
    "sub_kernel",
    "sweep",
    "validate",
]
