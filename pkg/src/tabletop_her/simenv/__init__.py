"""Deterministic tabletop physics: a kinematic two-finger gripper, an elastic box and a wall or ditch."""
from .config import (
    ConfigError, EnvConfig, Variant, apply_variant_rule, load_env_config, make_config, physics_params,
    static_boxes,
)
from .env import (
    BatchEnv, EpisodeFinishedError, Observation, SimState, energy, initial_states, integrate_physics,
    observe, observe_batch, reset, step,
)
from .physics import BACKEND

__all__ = [
    "BACKEND", "BatchEnv", "ConfigError", "EnvConfig", "EpisodeFinishedError", "Observation", "SimState",
    "Variant", "apply_variant_rule", "energy", "initial_states", "integrate_physics", "load_env_config",
    "make_config", "observe", "observe_batch", "physics_params", "reset", "static_boxes", "step",
]
