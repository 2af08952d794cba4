"""Goal-conditioned DDPG: actor/critic pairs, target networks and input normalisation."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import neuralcore as nc
from .neuralcore import NetworkParams, NumericInstabilityError, ShapeError

ACTION_DIM = 4


@dataclass(frozen=True)
class Hyperparams:
    gamma: float = 0.98
    polyak: float = 0.95
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    action_l2: float = 1.0
    max_action: float = 1.0
    batch_size: int = 256
    buffer_capacity: int = 1_000_000
    rollout_batch: int = 2
    noise_std: float = 0.2
    random_action_prob: float = 0.3
    obs_clip: float = 200.0
    norm_clip: float = 5.0
    norm_eps: float = 0.01
    hidden_units: int = 64
    hidden_layers: int = 3
    k_future: int = 4
    use_her: bool = True
    critic_uses_achieved_goal: bool = False

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise nc.ConfigurationError("gamma must lie in (0, 1)")
        if not 0.0 <= self.polyak <= 1.0:
            raise nc.ConfigurationError("polyak must lie in [0, 1]")
        if not 0.0 <= self.random_action_prob <= 1.0:
            raise nc.ConfigurationError("random_action_prob must lie in [0, 1]")
        for name in ("lr_actor", "lr_critic", "max_action", "obs_clip", "norm_clip", "norm_eps"):
            if not getattr(self, name) > 0:
                raise nc.ConfigurationError(f"{name} must be positive")
        for name in ("batch_size", "buffer_capacity", "rollout_batch", "hidden_units", "hidden_layers"):
            if int(getattr(self, name)) < 1:
                raise nc.ConfigurationError(f"{name} must be >= 1")
        if self.action_l2 < 0 or self.noise_std < 0 or self.k_future < 0:
            raise nc.ConfigurationError("action_l2, noise_std and k_future must be non-negative")

    @property
    def q_floor(self) -> float:
        return -1.0 / (1.0 - self.gamma)

    @classmethod
    def from_dict(cls, doc: dict) -> Hyperparams:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise nc.ConfigurationError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


# -- normalisation -----------------------------------------------------------

@dataclass(frozen=True)
class Normalizer:
    running_sum: np.ndarray
    running_sumsq: np.ndarray
    count: float = 0.0
    eps: float = 0.01
    clip: float = 5.0

    @classmethod
    def empty(cls, dim: int, eps: float = 0.01, clip: float = 5.0) -> Normalizer:
        return cls(np.zeros(dim), np.zeros(dim), 0.0, eps, clip)

    @property
    def dim(self) -> int:
        return self.running_sum.shape[0]

    @property
    def mean(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros(self.dim)
        return self.running_sum / self.count

    @property
    def std(self) -> np.ndarray:
        if self.count == 0:
            return np.ones(self.dim)
        mean = self.running_sum / self.count
        var = self.running_sumsq / self.count - mean * mean
        return np.sqrt(np.maximum(var, self.eps**2))

    def to_dict(self) -> dict:
        return {"sum": self.running_sum.tolist(), "sumsq": self.running_sumsq.tolist(),
                "count": self.count, "eps": self.eps, "clip": self.clip}

    @classmethod
    def from_dict(cls, doc: dict) -> Normalizer:
        s = np.array(doc["sum"], dtype=np.float64)
        sq = np.array(doc["sumsq"], dtype=np.float64)
        if s.shape != sq.shape or s.ndim != 1:
            raise ShapeError("normalizer sum/sumsq shapes differ")
        return cls(s, sq, float(doc["count"]), float(doc["eps"]), float(doc["clip"]))


def normalizer_update(norm: Normalizer, batch: np.ndarray) -> Normalizer:
    """Fold a batch of raw vectors into the running statistics.

    Rows are added strictly one after another (cumsum, not pairwise), so
    feeding a dataset in any partition gives bit-identical sums.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[1] != norm.dim:
        raise ShapeError(f"normalizer has dimension {norm.dim}, batch rows have {batch.shape[1]}")
    s = np.cumsum(np.vstack([norm.running_sum, batch]), axis=0)[-1]
    sq = np.cumsum(np.vstack([norm.running_sumsq, batch * batch]), axis=0)[-1]
    return replace(norm, running_sum=s, running_sumsq=sq, count=norm.count + batch.shape[0])


def normalize(norm: Normalizer, raw: np.ndarray) -> np.ndarray:
    return np.clip((np.asarray(raw, dtype=np.float64) - norm.mean) / norm.std, -norm.clip, norm.clip)


# -- agent -------------------------------------------------------------------

@dataclass(frozen=True)
class AgentParams:
    actor: NetworkParams
    critic: NetworkParams
    actor_target: NetworkParams
    critic_target: NetworkParams

    def __post_init__(self):
        if self.actor.layer_sizes != self.actor_target.layer_sizes:
            raise ShapeError("actor and actor_target shapes differ")
        if self.critic.layer_sizes != self.critic_target.layer_sizes:
            raise ShapeError("critic and critic_target shapes differ")
        if self.actor.output_size != ACTION_DIM or self.critic.output_size != 1:
            raise ShapeError("actor must emit 4 actions and critic a single value")


def critic_input_size(state_dim: int, goal_dim: int, hp: Hyperparams) -> int:
    extra = goal_dim if hp.critic_uses_achieved_goal else 0
    return state_dim + goal_dim + extra + ACTION_DIM


def make_agent(state_dim: int, goal_dim: int, hp: Hyperparams, seed: int) -> AgentParams:
    hidden = [hp.hidden_units] * hp.hidden_layers
    acts = ["relu"] * hp.hidden_layers
    actor = nc.init_network([state_dim + goal_dim, *hidden, ACTION_DIM], acts + ["tanh"], seed)
    critic = nc.init_network(
        [critic_input_size(state_dim, goal_dim, hp), *hidden, 1], acts + ["identity"], seed + 1
    )
    return AgentParams(actor, critic, actor, critic)


def actor_forward(agent: AgentParams, norm_state, norm_goal, hp: Hyperparams) -> np.ndarray:
    x = np.concatenate([np.asarray(norm_state), np.asarray(norm_goal)], axis=-1)
    return hp.max_action * nc.forward(agent.actor, x)


def select_action(agent: AgentParams, norm_state, norm_goal, hp: Hyperparams,
                  rng: np.random.Generator, explore: bool) -> np.ndarray:
    """Greedy action, or epsilon-uniform / Gaussian-perturbed action when exploring."""
    a = actor_forward(agent, norm_state, norm_goal, hp)
    if not explore:
        return a
    m = hp.max_action
    a = np.clip(a + hp.noise_std * m * rng.standard_normal(a.shape), -m, m)
    uniform = rng.uniform(-m, m, a.shape)
    pick = np.asarray(rng.random(a.shape[:-1])) < hp.random_action_prob
    return np.where(pick[..., None], uniform, a)


@dataclass(frozen=True)
class PreparedBatch:
    """Normalised network inputs for one optimisation batch."""
    state: np.ndarray
    goal: np.ndarray
    achieved: np.ndarray
    action: np.ndarray  # raw actions in [-max_action, max_action]
    reward: np.ndarray
    next_state: np.ndarray
    next_achieved: np.ndarray

    def __len__(self) -> int:
        return self.reward.shape[0]


def prepare_batch(batch, obs_norm: Normalizer, goal_norm: Normalizer, hp: Hyperparams) -> PreparedBatch:
    def ob(x):
        return normalize(obs_norm, np.clip(x, -hp.obs_clip, hp.obs_clip))

    def gl(x):
        return normalize(goal_norm, np.clip(x, -hp.obs_clip, hp.obs_clip))

    return PreparedBatch(
        ob(batch.state), gl(batch.desired_goal), gl(batch.achieved_goal),
        np.asarray(batch.action, dtype=np.float64), np.asarray(batch.reward, dtype=np.float64),
        ob(batch.next_state), gl(batch.next_achieved_goal),
    )


def _critic_x(state, achieved, goal, scaled_action, hp: Hyperparams) -> np.ndarray:
    parts = [state, achieved, goal, scaled_action] if hp.critic_uses_achieved_goal else [state, goal, scaled_action]
    return np.concatenate(parts, axis=-1)


def compute_target_q(agent: AgentParams, hp: Hyperparams, batch: PreparedBatch) -> np.ndarray:
    """Bootstrapped targets ``r + gamma * Q'(s', g, pi'(s', g))`` clipped to ``[-1/(1-gamma), 0]``."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    u_next = nc.forward(agent.actor_target, np.concatenate([batch.next_state, batch.goal], axis=-1))
    q_next = nc.forward(
        agent.critic_target, _critic_x(batch.next_state, batch.next_achieved, batch.goal, u_next, hp)
    )[:, 0]
    y = batch.reward + hp.gamma * q_next
    return np.clip(y, hp.q_floor, 0.0)


def critic_loss_and_grad(critic: NetworkParams, hp: Hyperparams, batch: PreparedBatch, targets: np.ndarray):
    x = _critic_x(batch.state, batch.achieved, batch.goal, batch.action / hp.max_action, hp)
    q, cache = nc.forward_trace(critic, x)
    err = q[:, 0] - targets
    loss = float(np.mean(err * err))
    grads = nc.backward_trace(critic, cache, (2.0 / len(err)) * err[:, None])
    return loss, grads


def critic_update(agent: AgentParams, opt: nc.AdamState, hp: Hyperparams, batch: PreparedBatch,
                  targets: np.ndarray | None = None):
    """One Adam step on the mean squared Bellman error; returns the pre-update loss."""
    if targets is None:
        targets = compute_target_q(agent, hp, batch)
    loss, grads = critic_loss_and_grad(agent.critic, hp, batch, targets)
    if not np.isfinite(loss):
        raise NumericInstabilityError(f"critic loss is {loss}")
    critic, opt = nc.adam_step(agent.critic, grads, opt)
    return replace(agent, critic=critic), opt, loss


def actor_loss_and_grad(actor: NetworkParams, critic: NetworkParams, hp: Hyperparams, batch: PreparedBatch):
    u, a_cache = nc.forward_trace(actor, np.concatenate([batch.state, batch.goal], axis=-1))
    q, c_cache = nc.forward_trace(critic, _critic_x(batch.state, batch.achieved, batch.goal, u, hp))
    B = u.shape[0]
    # penalty on pi/max_action, which is exactly the tanh output u
    loss = float(-np.mean(q) + hp.action_l2 * np.mean(u * u))
    dq = nc.backward_trace(critic, c_cache, np.full((B, 1), -1.0 / B)).input_grad
    du = dq[:, -ACTION_DIM:] + hp.action_l2 * 2.0 * u / u.size
    return loss, nc.backward_trace(actor, a_cache, du)


def actor_update(agent: AgentParams, opt: nc.AdamState, hp: Hyperparams, batch: PreparedBatch):
    """One Adam step on ``-mean Q(s, g, pi(s, g)) + action_l2 * mean((pi/max)^2)``; critic held fixed."""
    loss, grads = actor_loss_and_grad(agent.actor, agent.critic, hp, batch)
    if not np.isfinite(loss):
        raise NumericInstabilityError(f"actor loss is {loss}")
    actor, opt = nc.adam_step(agent.actor, grads, opt)
    return replace(agent, actor=actor), opt, loss


def polyak_update(main: NetworkParams, target: NetworkParams, polyak: float) -> NetworkParams:
    """``polyak * target + (1 - polyak) * main``; ``polyak`` weights the old target."""
    if main.layer_sizes != target.layer_sizes:
        raise ShapeError("polyak update needs identically shaped networks")
    mixed = [polyak * t + (1.0 - polyak) * m for m, t in zip(main.parameters(), target.parameters())]
    return target.with_parameters(mixed)


def update_targets(agent: AgentParams, hp: Hyperparams) -> AgentParams:
    return replace(
        agent,
        actor_target=polyak_update(agent.actor, agent.actor_target, hp.polyak),
        critic_target=polyak_update(agent.critic, agent.critic_target, hp.polyak),
    )


def agent_to_dict(agent: AgentParams) -> dict:
    return {k: nc.network_to_dict(getattr(agent, k)) for k in ("actor", "critic", "actor_target", "critic_target")}


def agent_from_dict(doc: dict) -> AgentParams:
    return AgentParams(**{k: nc.network_from_dict(doc[k])
                          for k in ("actor", "critic", "actor_target", "critic_target")})
