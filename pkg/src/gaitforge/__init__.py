"""Planar-biped gait imitation: physics, muscles, reference data, RL trainers."""

from .model import (
    GRAVITY,
    JOINT_COORD,
    JOINT_NAMES,
    MUSCLE_NAMES,
    NQ,
    ConfigError,
    ModelSpec,
    SimState,
    build_default_model,
    default_config,
    load_config,
    model_from_config,
    validate,
)
from .env import EnvConfig, GaitEnv, RewardBreakdown, StepResult
from .refdata import GaitClip, load_clip, make_synthetic_clip
from .checkpoint import load_checkpoint, save_checkpoint
from .ppo import PpoConfig, train_ppo
from .ddpg import DdpgConfig, train_ddpg

__version__ = "0.1.0"

__all__ = [
    "GRAVITY", "JOINT_COORD", "JOINT_NAMES", "MUSCLE_NAMES", "NQ",
    "ConfigError", "ModelSpec", "SimState", "build_default_model",
    "default_config", "load_config", "model_from_config", "validate",
    "EnvConfig", "GaitEnv", "RewardBreakdown", "StepResult",
    "GaitClip", "load_clip", "make_synthetic_clip",
    "load_checkpoint", "save_checkpoint",
    "PpoConfig", "train_ppo", "DdpgConfig", "train_ddpg",
    "__version__",
]
