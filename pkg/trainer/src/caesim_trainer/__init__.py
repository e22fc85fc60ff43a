"""PPO trainer and evaluator for the caesim env-server protocol."""

from .env_client import EnvClient, ProtocolError
from .evaluate import evaluate
from .observations import ObservationSpec, read_scenario
from .ppo import ActorCritic, TrainConfig, compute_gae
from .train import load_policy, save_checkpoint, train

__all__ = [
    "ActorCritic",
    "EnvClient",
    "ObservationSpec",
    "ProtocolError",
    "TrainConfig",
    "compute_gae",
    "evaluate",
    "load_policy",
    "read_scenario",
    "save_checkpoint",
    "train",
]
