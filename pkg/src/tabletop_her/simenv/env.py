"""Table/gripper/box environment: reset, step and observation on top of the physics kernel.

Two interfaces share one implementation: :class:`BatchEnv` steps ``N``
environments as one packed array (used by the trainer), and the functional
``reset``/``step``/``observe`` operate on a single :class:`SimState`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..her_replay import recompute_reward
from . import layout as L
from . import physics
from .config import EnvConfig, Variant, physics_params, static_boxes


class EpisodeFinishedError(RuntimeError):
    pass


@dataclass
class Observation:
    state: np.ndarray
    achieved_goal: np.ndarray
    desired_goal: np.ndarray


@dataclass
class SimState:
    """Packed state of one environment; the fields are views into ``vector``."""
    vector: np.ndarray

    def copy(self) -> SimState:
        return SimState(self.vector.copy())

    gripper_pos = property(lambda self: self.vector[L.S_GRIP:L.S_GRIP + 3])
    gripper_vel = property(lambda self: self.vector[L.S_GRIP_VEL:L.S_GRIP_VEL + 3])
    finger_positions = property(lambda self: self.vector[L.S_FINGER:L.S_FINGER + 2])
    finger_velocities = property(lambda self: self.vector[L.S_FINGER_VEL:L.S_FINGER_VEL + 2])
    box_pos = property(lambda self: self.vector[L.S_BOX:L.S_BOX + 3])
    box_vel = property(lambda self: self.vector[L.S_BOX_VEL:L.S_BOX_VEL + 3])
    box_rot = property(lambda self: self.vector[L.S_BOX_ROT:L.S_BOX_ROT + 3])
    box_rotvel = property(lambda self: self.vector[L.S_BOX_ROTVEL:L.S_BOX_ROTVEL + 3])
    target = property(lambda self: self.vector[L.S_TARGET:L.S_TARGET + 3])

    @property
    def box_compression(self) -> float:
        return float(self.vector[L.S_COMPRESSION])

    @property
    def step_index(self) -> int:
        return int(self.vector[L.S_STEP])

    @property
    def finger_gap(self) -> float:
        return float(self.vector[L.S_FINGER] + self.vector[L.S_FINGER + 1])


def _obs_columns(cfg: EnvConfig) -> np.ndarray:
    g, b = L.S_GRIP, L.S_BOX
    cols = list(range(g, g + 3)) + list(range(b, b + 3))
    if cfg.variant is not Variant.RSTATESP:
        cols += list(range(L.S_BOX_ROT, L.S_BOX_ROT + 3))
    cols += list(range(L.S_BOX_VEL, L.S_BOX_VEL + 3))
    if cfg.variant is not Variant.RSTATESP:
        cols += list(range(L.S_BOX_ROTVEL, L.S_BOX_ROTVEL + 3))
    return np.array(cols)


def observe_batch(states: np.ndarray, cfg: EnvConfig):
    """Observation vectors in the published order, plus achieved and desired goals."""
    s = np.atleast_2d(states)
    rel = s[:, L.S_BOX:L.S_BOX + 3] - s[:, L.S_GRIP:L.S_GRIP + 3]
    obs = np.concatenate([
        s[:, _obs_columns(cfg)], rel,
        s[:, L.S_FINGER:L.S_FINGER + 2], s[:, L.S_GRIP_VEL:L.S_GRIP_VEL + 3],
        s[:, L.S_FINGER_VEL:L.S_FINGER_VEL + 2],
    ], axis=1)
    return obs, s[:, L.S_BOX:L.S_BOX + 3].copy(), s[:, L.S_TARGET:L.S_TARGET + 3].copy()


def observe(state: SimState, cfg: EnvConfig) -> Observation:
    obs, ag, g = observe_batch(state.vector[None], cfg)
    return Observation(obs[0], ag[0], g[0])


def initial_states(cfg: EnvConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` freshly reset packed states; consumes ``rng`` deterministically."""
    s = np.zeros((n, L.STATE_DIM))
    j = cfg.box_jitter
    jitter = rng.uniform(-j, j, size=(n, 2))
    tx = rng.uniform(cfg.target_x_range[0], cfg.target_x_range[1], size=n)
    ty = rng.uniform(cfg.target_y_range[0], cfg.target_y_range[1], size=n)
    z = cfg.resting_height
    s[:, L.S_GRIP:L.S_GRIP + 3] = cfg.gripper_start
    s[:, L.S_FINGER:L.S_FINGER + 2] = 0.5 * cfg.finger_max_offset
    s[:, L.S_BOX] = cfg.box_start[0] + jitter[:, 0]
    s[:, L.S_BOX + 1] = cfg.box_start[1] + jitter[:, 1]
    s[:, L.S_BOX + 2] = z
    s[:, L.S_TARGET] = tx
    s[:, L.S_TARGET + 1] = ty
    s[:, L.S_TARGET + 2] = z
    s[:, L.S_ENERGY0] = physics.box_energy(s, physics_params(cfg), static_boxes(cfg))
    return s


class BatchEnv:
    """``n`` environments sharing one config, stepped together."""

    def __init__(self, cfg: EnvConfig, n: int):
        self.cfg = cfg
        self.n = int(n)
        self.params = physics_params(cfg)
        self.statics = static_boxes(cfg)
        self.states = np.zeros((self.n, L.STATE_DIM))
        self.diag = np.zeros((self.n, L.N_DIAG))

    def set_config(self, cfg: EnvConfig) -> None:
        """Swap in a drifted config (moving/expanding targets) between episodes."""
        self.cfg = cfg
        self.params = physics_params(cfg)
        self.statics = static_boxes(cfg)

    def reset(self, rng: np.random.Generator):
        self.states = initial_states(self.cfg, self.n, rng)
        return observe_batch(self.states, self.cfg)

    def step(self, actions: np.ndarray):
        """Returns ``(obs, achieved, desired, reward, info)``; info values are arrays of length n."""
        if np.any(self.states[:, L.S_STEP] >= self.cfg.episode_len):
            raise EpisodeFinishedError("episode already has episode_len steps; call reset()")
        a = np.array(np.broadcast_to(actions, (self.n, 4)), dtype=np.float64, order="C")
        physics.step_batch(self.states, a, self.params, self.statics, self.diag)
        obs, ag, g = observe_batch(self.states, self.cfg)
        reward = recompute_reward(ag, g, self.cfg.success_tolerance)
        reward = np.atleast_1d(reward)
        info = {
            "is_success": reward == 0.0,
            "gripper_box_contact": self.diag[:, L.D_CONTACT] > 0,
            "grasped": self.diag[:, L.D_GRASPED] > 0,
            "box_airborne": self.diag[:, L.D_AIRBORNE] > 0,
            "pressed": self.diag[:, L.D_PRESSED] > 0,
            "released": self.diag[:, L.D_RELEASED] > 0,
            "energy_excess": self.diag[:, L.D_ENERGY_EXCESS].copy(),
            "penetration": self.diag[:, L.D_PENETRATION].copy(),
        }
        return obs, ag, g, reward, info


# -- single-environment functional interface ----------------------------------

def reset(cfg: EnvConfig, rng: np.random.Generator):
    state = SimState(initial_states(cfg, 1, rng)[0])
    return state, observe(state, cfg)


def step(state: SimState, action, cfg: EnvConfig):
    """Returns ``(new_state, observation, reward, info)``; ``state`` is not modified."""
    if state.step_index >= cfg.episode_len:
        raise EpisodeFinishedError("episode already has episode_len steps; call reset()")
    s = state.vector[None].copy()
    diag = np.zeros((1, L.N_DIAG))
    a = np.asarray(action, dtype=np.float64).reshape(1, 4)
    physics.step_batch(s, a, physics_params(cfg), static_boxes(cfg), diag)
    new = SimState(s[0])
    ob = observe(new, cfg)
    reward = recompute_reward(ob.achieved_goal, ob.desired_goal, cfg.success_tolerance)
    info = {
        "is_success": reward == 0.0,
        "gripper_box_contact": bool(diag[0, L.D_CONTACT]),
        "grasped": bool(diag[0, L.D_GRASPED]),
        "box_airborne": bool(diag[0, L.D_AIRBORNE]),
        "pressed": bool(diag[0, L.D_PRESSED]),
        "released": bool(diag[0, L.D_RELEASED]),
        "energy_excess": float(diag[0, L.D_ENERGY_EXCESS]),
        "penetration": float(diag[0, L.D_PENETRATION]),
    }
    return new, ob, reward, info


def integrate_physics(state: SimState, cfg: EnvConfig, dt: float | None = None) -> SimState:
    """One physics substep of length ``dt`` (default ``dt_physics``) with the gripper held still."""
    dt = cfg.dt_physics if dt is None else dt
    p = physics_params(cfg)
    p[L.P_DT_CONTROL] = dt
    p[L.P_NSUB] = 1
    s = state.vector[None].copy()
    hold = float(np.mean(s[0, L.S_FINGER:L.S_FINGER + 2])) / (0.5 * cfg.finger_max_offset) - 1.0
    a = np.array([[0.0, 0.0, 0.0, hold]])
    step_index = s[0, L.S_STEP]
    physics.step_batch(s, a, p, static_boxes(cfg), np.zeros((1, L.N_DIAG)))
    s[0, L.S_STEP] = step_index
    return SimState(s[0])


def energy(state: SimState, cfg: EnvConfig) -> float:
    return float(physics.box_energy(state.vector[None], physics_params(cfg), static_boxes(cfg))[0])
