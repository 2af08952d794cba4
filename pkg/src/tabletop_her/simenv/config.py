"""Environment configuration: variant geometry, target sampling and physics constants."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import layout as L


class ConfigError(ValueError):
    pass


class Variant(str, Enum):
    FLAT = "flat"
    WALL = "wall"
    DITCH = "ditch"
    TARGET_NEAR = "target-near"
    TARGET_MOVING = "target-moving"
    TARGET_EXPANDING = "target-expanding"
    RSTATESP = "rstatesp"

    @classmethod
    def parse(cls, name) -> Variant:
        if isinstance(name, Variant):
            return name
        key = str(name).strip().lower().replace("_", "-")
        aliases = {"targetnear": "target-near", "targetmoving": "target-moving",
                   "targetexpanding": "target-expanding", "rstate-sp": "rstatesp"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown environment variant {name!r}; "
                              f"expected one of {[v.value for v in cls]}") from None


# constraint kind and default target x-range per variant
_VARIANT_DEFAULTS = {
    Variant.FLAT: ("none", (0.15, 0.25)),
    Variant.WALL: ("wall", (0.25, 0.55)),
    Variant.DITCH: ("ditch", (0.25, 0.55)),
    Variant.TARGET_NEAR: ("wall", (0.10, 0.70)),
    Variant.TARGET_MOVING: ("wall", (0.25, 0.55)),
    Variant.TARGET_EXPANDING: ("wall", (0.25, 0.55)),
    Variant.RSTATESP: ("wall", (0.25, 0.55)),
}

TARGET_MOVING_RATE = 2.0e-8  # m per environment step
TARGET_EXPANDING_RATE = 6.67e-9


@dataclass(frozen=True)
class EnvConfig:
    variant: Variant = Variant.WALL
    # geometry (m); the table top is the plane z = 0
    table_x: tuple = (-0.275, 0.55)
    table_y: tuple = (-0.325, 0.325)
    table_thickness: float = 0.05
    floor_z: float = -0.4
    constraint: str = "wall"  # "wall" | "ditch" | "none"
    constraint_x: float = 0.28  # centre line of the wall or ditch
    constraint_width: float = 0.01
    constraint_height: float = 0.03  # wall height, or ditch depth
    # targets
    target_x_range: tuple = (0.25, 0.55)
    target_y_range: tuple = (-0.15, 0.15)
    success_tolerance: float = 0.05
    variant_rate: float = 0.0
    # timing
    episode_len: int = 60
    dt_control: float = 0.046
    dt_physics: float = 0.002
    # gripper
    gripper_start: tuple = (0.0, 0.0, 0.05)
    workspace_lo: tuple = (-0.2, -0.3, 0.01)
    workspace_hi: tuple = (0.27, 0.3, 0.3)
    action_scale: float = 0.033
    finger_max_offset: float = 0.05
    finger_half_width: float = 0.005
    finger_thickness: float = 0.01
    finger_length: float = 0.055
    palm_thickness: float = 0.02
    # box
    box_half_extent: float = 0.025
    box_mass: float = 2.0
    box_start: tuple = (0.10, 0.0)
    box_jitter: float = 0.02
    gravity: float = 9.81
    # static contacts
    k_contact: float = 5.0e4
    c_contact: float = 150.0
    c_separate: float = 200.0
    contact_margin: float = 0.008
    mu_table: float = 0.4
    twist_radius: float = 0.0125
    # gripper contacts
    k_grip: float = 5.0e4
    c_grip: float = 100.0
    grip_penetration_limit: float = 0.001
    finger_penetration_limit: float = 0.0005
    mu_finger: float = 1.0
    mu_top: float = 0.1
    # elastic box
    k_box: float = 8.0e3
    compression_max: float = 0.025
    release_efficiency: float = 0.9
    launch_angle_max_deg: float = 45.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        for name in ("table_x", "table_y", "target_x_range", "target_y_range", "gripper_start",
                     "workspace_lo", "workspace_hi", "box_start"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        self.validate()

    # -- derived ------------------------------------------------------------

    @property
    def n_substeps(self) -> int:
        return int(round(self.dt_control / self.dt_physics))

    @property
    def resting_height(self) -> float:
        """Box centre height at static equilibrium on a single table slab."""
        return self.box_half_extent + self.contact_margin - self.box_mass * self.gravity / self.k_contact

    @property
    def obs_dim(self) -> int:
        return 19 if self.variant is Variant.RSTATESP else 25

    def validate(self) -> None:
        if self.episode_len <= 0:
            raise ConfigError("episode_len must be positive")
        if not (0 < self.dt_physics <= self.dt_control):
            raise ConfigError("need 0 < dt_physics <= dt_control")
        ratio = self.dt_control / self.dt_physics
        if abs(ratio - round(ratio)) > 1e-6:
            raise ConfigError(f"dt_control/dt_physics = {ratio} is not an integer number of substeps")
        if self.constraint not in ("wall", "ditch", "none"):
            raise ConfigError(f"unknown constraint kind {self.constraint!r}")
        for name in ("box_half_extent", "box_mass", "gravity", "k_contact", "k_grip", "k_box",
                     "contact_margin", "finger_max_offset", "success_tolerance"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("c_contact", "c_separate", "c_grip", "mu_table", "mu_finger", "mu_top",
                     "compression_max", "variant_rate"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0 <= self.release_efficiency <= 1:
            raise ConfigError("release_efficiency must lie in [0, 1]")
        if not 0 <= self.launch_angle_max_deg < 90:
            raise ConfigError("launch_angle_max_deg must lie in [0, 90)")
        # explicit-integration stability: keep omega*dt and damping*dt/m well inside the stable region
        dt, m = self.dt_physics, self.box_mass
        for name in ("k_contact", "k_grip", "k_box"):
            wdt = dt * math.sqrt(getattr(self, name) / m)
            if wdt >= 0.5:
                raise ConfigError(f"{name} too stiff for dt_physics: omega*dt = {wdt:.3f} >= 0.5")
        for name in ("c_contact", "c_separate", "c_grip"):
            if getattr(self, name) * dt / m >= 0.5:
                raise ConfigError(f"{name} too large for dt_physics")
        if self.box_mass * self.gravity / self.k_contact >= self.contact_margin:
            raise ConfigError("contact margin must exceed the static spring deflection m*g/k")
        lo, hi = np.array(self.workspace_lo), np.array(self.workspace_hi)
        if np.any(lo > hi):
            raise ConfigError("gripper workspace lower corner exceeds the upper corner")
        for name in ("target_x_range", "target_y_range", "table_x", "table_y"):
            a, b = getattr(self, name)
            if a > b:
                raise ConfigError(f"{name} is empty")

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["variant"] = self.variant.value
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> EnvConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown environment config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def make_config(variant="wall", **overrides) -> EnvConfig:
    """Default config for ``variant`` with its constraint and target range filled in."""
    v = Variant.parse(variant)
    constraint, xr = _VARIANT_DEFAULTS[v]
    base = dict(variant=v, constraint=constraint, target_x_range=xr)
    if constraint == "ditch":
        base.update(constraint_x=0.2625, constraint_width=0.025, constraint_height=0.02)
    if v is Variant.TARGET_MOVING:
        base["variant_rate"] = TARGET_MOVING_RATE
    elif v is Variant.TARGET_EXPANDING:
        base["variant_rate"] = TARGET_EXPANDING_RATE
    base.update(overrides)
    return EnvConfig.from_dict(base)


def load_env_config(path, variant=None) -> EnvConfig:
    """Read a JSON env config; ``variant`` (e.g. from the command line) wins over the file."""
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    d = dict(d)
    v = variant if variant is not None else d.pop("variant", "wall")
    d.pop("variant", None)
    return make_config(v, **d)


def apply_variant_rule(cfg: EnvConfig, global_step: int) -> EnvConfig:
    """Target-range drift for the moving/expanding variants; identity otherwise."""
    if cfg.variant is Variant.TARGET_MOVING:
        shift = cfg.variant_rate * global_step
        lo, hi = cfg.target_x_range
        return dataclasses.replace(cfg, target_x_range=(lo + shift, hi + shift))
    if cfg.variant is Variant.TARGET_EXPANDING:
        grow = cfg.variant_rate * global_step
        (xlo, xhi), (ylo, yhi) = cfg.target_x_range, cfg.target_y_range
        return dataclasses.replace(cfg, target_x_range=(xlo, xhi + grow), target_y_range=(ylo - grow, yhi + grow))
    return cfg


def static_boxes(cfg: EnvConfig) -> np.ndarray:
    """Static obstacles as ``(n, 6)`` AABBs: table slab(s), wall or ditch floor, and a catch floor."""
    (x0, x1), (y0, y1) = cfg.table_x, cfg.table_y
    t = cfg.table_thickness
    boxes = []
    if cfg.constraint == "ditch":
        a = cfg.constraint_x - cfg.constraint_width / 2
        b = cfg.constraint_x + cfg.constraint_width / 2
        boxes.append((x0, y0, -t, a, y1, 0.0))
        boxes.append((b, y0, -t, x1, y1, 0.0))
        boxes.append((a, y0, -t, b, y1, -cfg.constraint_height))
    else:
        boxes.append((x0, y0, -t, x1, y1, 0.0))
        if cfg.constraint == "wall":
            a = cfg.constraint_x - cfg.constraint_width / 2
            b = cfg.constraint_x + cfg.constraint_width / 2
            boxes.append((a, y0, 0.0, b, y1, cfg.constraint_height))
    boxes.append((-10.0, -10.0, cfg.floor_z - 1.0, 10.0, 10.0, cfg.floor_z))
    return np.ascontiguousarray(boxes, dtype=np.float64)


def physics_params(cfg: EnvConfig) -> np.ndarray:
    p = np.zeros(L.N_PARAMS)
    p[L.P_DT_CONTROL] = cfg.dt_control
    p[L.P_NSUB] = cfg.n_substeps
    p[L.P_ACTION_SCALE] = cfg.action_scale
    p[L.P_WS_LO:L.P_WS_LO + 3] = cfg.workspace_lo
    p[L.P_WS_HI:L.P_WS_HI + 3] = cfg.workspace_hi
    p[L.P_FINGER_MAX] = cfg.finger_max_offset
    p[L.P_FINGER_HW] = cfg.finger_half_width
    p[L.P_FINGER_T] = cfg.finger_thickness
    p[L.P_FINGER_L] = cfg.finger_length
    p[L.P_PALM_T] = cfg.palm_thickness
    p[L.P_BOX_H] = cfg.box_half_extent
    p[L.P_BOX_M] = cfg.box_mass
    p[L.P_GRAV] = cfg.gravity
    p[L.P_K] = cfg.k_contact
    p[L.P_C] = cfg.c_contact
    p[L.P_C_SEP] = cfg.c_separate
    p[L.P_MARGIN] = cfg.contact_margin
    p[L.P_MU] = cfg.mu_table
    p[L.P_K_GRIP] = cfg.k_grip
    p[L.P_C_GRIP] = cfg.c_grip
    p[L.P_PEN_LIM] = cfg.grip_penetration_limit
    p[L.P_PEN_LIM_F] = cfg.finger_penetration_limit
    p[L.P_MU_F] = cfg.mu_finger
    p[L.P_MU_TOP] = cfg.mu_top
    p[L.P_K_BOX] = cfg.k_box
    p[L.P_DELTA_MAX] = cfg.compression_max
    p[L.P_RELEASE_EFF] = cfg.release_efficiency
    p[L.P_TAN_LAUNCH] = math.tan(math.radians(cfg.launch_angle_max_deg))
    p[L.P_TWIST_R] = cfg.twist_radius
    # solid cube about a vertical axis: m (2h)^2 / 6
    p[L.P_INERTIA] = cfg.box_mass * (2 * cfg.box_half_extent) ** 2 / 6.0
    return p
