"""Meta-RL benchmark for simulated industrial peg-in-hole insertion."""

__version__ = "0.1.0"

from .env import (EnvConfig, EnvState, FAMILIES, GEAR, InsertionEnv, PLUG,
                  TaskFamily, TaskParams, Transition, sample_task)
from .nn import MlpSpec, ParamStore, load_checkpoint, save_checkpoint
from .pearl import ContextBatch, LatentPosterior, PearlConfig, adapt, meta_train
from .sac import ReplayBuffer, SacConfig, sac_train

__all__ = [
    "EnvConfig", "EnvState", "FAMILIES", "GEAR", "InsertionEnv", "PLUG",
    "TaskFamily", "TaskParams", "Transition", "sample_task",
    "MlpSpec", "ParamStore", "load_checkpoint", "save_checkpoint",
    "ContextBatch", "LatentPosterior", "PearlConfig", "adapt", "meta_train",
    "ReplayBuffer", "SacConfig", "sac_train",
]
