"""Episode-structured replay storage with hindsight ("future") goal relabeling.

Episodes are stored whole in a ring of fixed-length slots, so eviction is
always oldest-episode-first and every stored transition keeps access to the
rest of its episode for relabeling.

Binary dump layout (all integers little-endian)::

    magic        4 bytes   b"HERB"
    version      u32       1
    capacity     u64       transitions
    horizon      u32       steps per episode (T)
    obs_dim      u32
    goal_dim     u32
    act_dim      u32
    n_stored     u64       episodes currently held
    cursor       u64       next slot to overwrite
    then, for each array in (obs, ag, g, actions, meta):
        nbytes   u64
        payload  nbytes of float64 (obs/ag/g/actions) or int64 (meta), C order

``obs`` and ``ag`` hold ``T + 1`` rows per episode, ``g`` and ``actions``
hold ``T``; ``meta`` is ``(env_seed, episode_index)`` per slot.  Only the
``n_stored`` filled slots are written.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

SUCCESS_TOLERANCE = 0.05  # m, planar


class EmptyBufferError(RuntimeError):
    pass


class MalformedEpisodeError(ValueError):
    pass


def recompute_reward(achieved, goal, tolerance: float = SUCCESS_TOLERANCE):
    """Sparse reward: 0 when the planar (x, y) distance is below ``tolerance``, else -1.

    Works on single 3-vectors and on ``(..., 3)`` batches.
    """
    achieved = np.asarray(achieved, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    d = np.hypot(achieved[..., 0] - goal[..., 0], achieved[..., 1] - goal[..., 1])
    r = np.where(d < tolerance, 0.0, -1.0)
    return float(r) if r.ndim == 0 else r


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    desired_goal: np.ndarray
    achieved_goal: np.ndarray
    reward: float
    next_state: np.ndarray
    next_achieved_goal: np.ndarray


@dataclass
class EpisodeRecord:
    """One rollout in array form.

    ``obs``/``achieved`` carry ``T + 1`` rows (including the final
    observation); ``desired``/``actions``/``rewards`` carry ``T``.
    """
    obs: np.ndarray
    achieved: np.ndarray
    desired: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    env_id: str = ""
    seed: int = 0
    episode_index: int = 0

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    @classmethod
    def from_transitions(cls, transitions: list[Transition], env_id="", seed=0, episode_index=0):
        for t in range(len(transitions) - 1):
            a, b = transitions[t], transitions[t + 1]
            if not (np.array_equal(a.next_state, b.state)
                    and np.array_equal(a.next_achieved_goal, b.achieved_goal)):
                raise MalformedEpisodeError(f"state chaining broken between steps {t} and {t + 1}")
        obs = np.stack([tr.state for tr in transitions] + [transitions[-1].next_state])
        ag = np.stack([tr.achieved_goal for tr in transitions] + [transitions[-1].next_achieved_goal])
        return cls(
            obs=obs, achieved=ag,
            desired=np.stack([tr.desired_goal for tr in transitions]),
            actions=np.stack([tr.action for tr in transitions]),
            rewards=np.array([tr.reward for tr in transitions], dtype=np.float64),
            env_id=env_id, seed=seed, episode_index=episode_index,
        )

    def transitions(self) -> list[Transition]:
        return [
            Transition(self.obs[t], self.actions[t], self.desired[t], self.achieved[t],
                       float(self.rewards[t]), self.obs[t + 1], self.achieved[t + 1])
            for t in range(self.horizon)
        ]

    def validate(self, horizon: int | None = None) -> None:
        T = self.horizon
        if horizon is not None and T != horizon:
            raise MalformedEpisodeError(f"episode has {T} transitions, buffer expects {horizon}")
        if self.obs.shape[0] != T + 1 or self.achieved.shape[0] != T + 1:
            raise MalformedEpisodeError("obs/achieved must have one more row than actions")
        if self.desired.shape[0] != T or self.rewards.shape[0] != T:
            raise MalformedEpisodeError("desired goals and rewards must have one row per step")
        for name in ("obs", "achieved", "desired", "actions", "rewards"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise MalformedEpisodeError(f"non-finite values in {name}")
        expected = recompute_reward(self.achieved[1:], self.desired)
        if not np.array_equal(expected, self.rewards):
            raise MalformedEpisodeError("stored rewards disagree with the sparse reward rule")


@dataclass
class TransitionBatch:
    state: np.ndarray
    action: np.ndarray
    desired_goal: np.ndarray
    achieved_goal: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    next_achieved_goal: np.ndarray
    relabeled: np.ndarray  # bool mask, diagnostics only
    episode: np.ndarray
    step: np.ndarray
    future_step: np.ndarray  # index into the episode's achieved goals, -1 if not relabeled

    def __len__(self) -> int:
        return self.reward.shape[0]


class ReplayBuffer:
    """Ring of whole episodes holding at most ``capacity`` transitions."""

    def __init__(self, capacity: int, horizon: int, obs_dim: int, goal_dim: int = 3, act_dim: int = 4):
        if capacity < horizon:
            raise ValueError(f"capacity {capacity} cannot hold a single {horizon}-step episode")
        self.capacity = int(capacity)
        self.horizon = int(horizon)
        self.obs_dim, self.goal_dim, self.act_dim = int(obs_dim), int(goal_dim), int(act_dim)
        self.n_slots = self.capacity // self.horizon
        T = self.horizon
        self.obs = np.zeros((self.n_slots, T + 1, obs_dim))
        self.ag = np.zeros((self.n_slots, T + 1, goal_dim))
        self.g = np.zeros((self.n_slots, T, goal_dim))
        self.actions = np.zeros((self.n_slots, T, act_dim))
        self.meta = np.zeros((self.n_slots, 2), dtype=np.int64)
        self.n_stored = 0
        self.cursor = 0

    @property
    def n_transitions(self) -> int:
        return self.n_stored * self.horizon

    def __len__(self) -> int:
        return self.n_transitions

    def store_episode(self, ep: EpisodeRecord) -> ReplayBuffer:
        ep.validate(self.horizon)
        if ep.obs.shape[1] != self.obs_dim or ep.desired.shape[1] != self.goal_dim:
            raise MalformedEpisodeError("episode dimensions do not match the buffer")
        i = self.cursor
        self.obs[i] = ep.obs
        self.ag[i] = ep.achieved
        self.g[i] = ep.desired
        self.actions[i] = ep.actions
        self.meta[i] = (ep.seed, ep.episode_index)
        self.cursor = (i + 1) % self.n_slots
        self.n_stored = min(self.n_stored + 1, self.n_slots)
        return self

    def store_arrays(self, obs, ag, g, actions) -> None:
        """Bulk store of ``B`` episodes already produced by a vectorised rollout.

        Skips the per-episode reward check; the rollout computed rewards
        with the same rule.
        """
        for b in range(obs.shape[0]):
            i = self.cursor
            self.obs[i] = obs[b]
            self.ag[i] = ag[b]
            self.g[i] = g[b]
            self.actions[i] = actions[b]
            self.cursor = (i + 1) % self.n_slots
            self.n_stored = min(self.n_stored + 1, self.n_slots)

    def episode(self, slot: int) -> EpisodeRecord:
        return EpisodeRecord(
            self.obs[slot].copy(), self.ag[slot].copy(), self.g[slot].copy(), self.actions[slot].copy(),
            recompute_reward(self.ag[slot, 1:], self.g[slot]),
            seed=int(self.meta[slot, 0]), episode_index=int(self.meta[slot, 1]),
        )

    def oldest_first_slots(self) -> list[int]:
        if self.n_stored < self.n_slots:
            return list(range(self.n_stored))
        return [(self.cursor + k) % self.n_slots for k in range(self.n_slots)]

    def sample_batch(self, batch_size: int, k_future: int, rng: np.random.Generator,
                     strategy: str = "future") -> TransitionBatch:
        if strategy != "future":
            raise NotImplementedError(f"goal strategy {strategy!r} is not supported; use 'future'")
        if self.n_stored == 0:
            raise EmptyBufferError("cannot sample from an empty replay buffer")
        T = self.horizon
        ep = rng.integers(0, self.n_stored, size=batch_size)
        t = rng.integers(0, T, size=batch_size)
        p_relabel = 1.0 - 1.0 / (1.0 + k_future)
        relabel = rng.random(batch_size) < p_relabel
        # offset in [0, T - t); achieved-goal index t + 1 + offset is in [t + 1, T]
        offset = (rng.random(batch_size) * (T - t)).astype(np.int64)
        future = t + 1 + offset

        g = self.g[ep, t].copy()
        g[relabel] = self.ag[ep[relabel], future[relabel]]
        next_ag = self.ag[ep, t + 1]
        return TransitionBatch(
            state=self.obs[ep, t],
            action=self.actions[ep, t],
            desired_goal=g,
            achieved_goal=self.ag[ep, t],
            reward=recompute_reward(next_ag, g),
            next_state=self.obs[ep, t + 1],
            next_achieved_goal=next_ag,
            relabeled=relabel,
            episode=ep,
            step=t,
            future_step=np.where(relabel, future, -1),
        )

    # -- persistence ---------------------------------------------------------

    _MAGIC = b"HERB"
    _HEADER = struct.Struct("<4sIQIIIIQQ")

    def dump(self, path) -> None:
        n = self.n_stored
        with open(path, "wb") as fh:
            fh.write(self._HEADER.pack(self._MAGIC, 1, self.capacity, self.horizon, self.obs_dim,
                                       self.goal_dim, self.act_dim, n, self.cursor))
            for arr in (self.obs[:n], self.ag[:n], self.g[:n], self.actions[:n], self.meta[:n]):
                payload = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
                fh.write(struct.pack("<Q", len(payload)))
                fh.write(payload)

    @classmethod
    def restore(cls, path) -> ReplayBuffer:
        with open(path, "rb") as fh:
            raw = fh.read()
        hs = cls._HEADER.size
        if len(raw) < hs:
            raise ValueError("replay dump truncated in header")
        magic, version, cap, T, od, gd, ad, n, cursor = cls._HEADER.unpack_from(raw, 0)
        if magic != cls._MAGIC or version != 1:
            raise ValueError("not a version-1 replay dump")
        buf = cls(cap, T, od, gd, ad)
        pos = hs
        shapes = [(n, T + 1, od), (n, T + 1, gd), (n, T, gd), (n, T, ad), (n, 2)]
        dtypes = ["<f8", "<f8", "<f8", "<f8", "<i8"]
        targets = [buf.obs, buf.ag, buf.g, buf.actions, buf.meta]
        for shape, dt, target in zip(shapes, dtypes, targets):
            if pos + 8 > len(raw):
                raise ValueError("replay dump truncated")
            (nbytes,) = struct.unpack_from("<Q", raw, pos)
            pos += 8
            if nbytes != int(np.prod(shape)) * 8 or pos + nbytes > len(raw):
                raise ValueError("replay dump array section has the wrong length")
            target[:n] = np.frombuffer(raw, dtype=dt, count=int(np.prod(shape)), offset=pos).reshape(shape)
            pos += nbytes
        buf.n_stored = n
        buf.cursor = cursor
        return buf
