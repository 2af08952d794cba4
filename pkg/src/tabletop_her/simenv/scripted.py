"""Scripted press-and-release ("catapult") macro and its frozen fixture.

The macro lifts the closed gripper, moves it over the rear part of the box
top, presses down until the box compression saturates, then drags the
gripper backwards off the rear edge.  Losing the press contact releases the
stored compression energy as a launch tilted away from the gripper, which
sends the box over the wall.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import EnvConfig, make_config
from .env import SimState, reset, step

FIXTURE_PATH = Path(__file__).parent / "fixtures" / "catapult_wall.json"

HOVER_Z = 0.12
PRESS_OFFSET = 0.02  # press point behind the box centre, m


def _toward(target, grip, scale, close=-1.0):
    d = (np.asarray(target, dtype=np.float64) - grip) / scale
    return np.append(np.clip(d, -1.0, 1.0), close)


def press_release_actions(cfg: EnvConfig, state: SimState) -> np.ndarray:
    """Open-loop action sequence for the macro, planned from the initial box position."""
    bx, by, _ = state.box_pos
    px = bx - PRESS_OFFSET
    plan = ([(0.0, 0.0, HOVER_Z)] * 3 + [(px, by, HOVER_Z)] * 5 + [(px, by, cfg.workspace_lo[2])] * 4
            + [(px - 0.2, by, None)] * 3)
    plan += [(-0.1, 0.0, 0.2)] * (cfg.episode_len - len(plan))
    s = state.copy()
    actions = []
    for target in plan:
        target = list(target)
        if target[2] is None:
            target[2] = s.gripper_pos[2]
        a = _toward(target, s.gripper_pos, cfg.action_scale)
        actions.append(a)
        s, _, _, _ = step(s, a, cfg)
    return np.array(actions)


def rollout(cfg: EnvConfig, seed: int, actions) -> dict:
    """Replay ``actions`` from the reset drawn with ``seed``; returns the per-step trajectory."""
    state, _ = reset(cfg, np.random.default_rng(seed))
    box = [state.box_pos.copy()]
    grip = [state.gripper_pos.copy()]
    rewards, released = [], []
    for a in actions:
        state, _, r, info = step(state, a, cfg)
        box.append(state.box_pos.copy())
        grip.append(state.gripper_pos.copy())
        rewards.append(r)
        released.append(info["released"])
    return {"box": np.array(box), "gripper": np.array(grip), "rewards": np.array(rewards),
            "released": np.array(released), "final_state": state}


def build_fixture(seed: int = 0) -> dict:
    cfg = make_config("wall")
    state, _ = reset(cfg, np.random.default_rng(seed))
    actions = press_release_actions(cfg, state)
    traj = rollout(cfg, seed, actions)
    return {
        "variant": "wall",
        "seed": seed,
        "actions": actions.tolist(),
        "box_trajectory": traj["box"].tolist(),
    }


def load_fixture(path=FIXTURE_PATH) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_fixture(path=FIXTURE_PATH, seed: int = 0) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(build_fixture(seed), fh, indent=1)
        fh.write("\n")


if __name__ == "__main__":  # regenerate the frozen fixture
    write_fixture()
