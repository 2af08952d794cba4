"""Training orchestration: rollouts, replay, optimisation, evaluation, checkpoints, metrics.

The loop is epochs x cycles: every cycle collects ``episodes_per_cycle``
exploratory episodes with one frozen policy snapshot, folds them into the
replay buffer and the normalisers, runs ``optimizer_steps_per_cycle``
critic+actor updates on HER-relabelled batches and then moves the target
networks.  Each epoch ends with greedy evaluation and one metrics row.

Rollouts run in ``workers`` threads, each owning private environments and
its own random stream; chunks of episodes are assigned to workers
round-robin and results are reassembled in chunk order, so a run is
reproducible for a fixed worker count.  Only the learner touches the buffer
and the normalisers.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
import queue
import threading
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import ddpg
from . import neuralcore as nc
from .analysis.episode_log import EpisodeLog, write_episode
from .ddpg import AgentParams, Hyperparams, Normalizer
from .her_replay import ReplayBuffer
from .neuralcore import NumericInstabilityError
from .simenv import BatchEnv, ConfigError, EnvConfig, Variant, apply_variant_rule, make_config
from .simenv import layout as L

CHECKPOINT_FORMAT = "tabletop-her-checkpoint"
CHECKPOINT_VERSION = 1
METRIC_FIELDS = ("epoch", "env_steps", "train_success_rate", "eval_success_rate",
                 "mean_episode_reward", "actor_loss", "critic_loss")
TIMING_FIELDS = ("epoch", "wall_clock_s")
EVAL_CHUNK = 250


class TrainingAborted(RuntimeError):
    """Training stopped on a non-finite loss; ``checkpoint`` holds the last good state."""

    def __init__(self, message: str, checkpoint: Path | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint


class CheckpointError(ValueError):
    """A checkpoint could not be parsed; ``section`` names the part that failed."""

    def __init__(self, section: str, message: str):
        super().__init__(f"checkpoint section {section!r}: {message}")
        self.section = section


class ConfigHashWarning(UserWarning):
    pass


class EmptyEvaluationError(ValueError):
    pass


# -- configuration -------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    env: str = "flat"
    hyperparams: Hyperparams = field(default_factory=lambda: Hyperparams(rollout_batch=16))
    epochs: int = 100
    cycles_per_epoch: int = 25
    episodes_per_cycle: int = 16
    optimizer_steps_per_cycle: int = 40
    eval_episodes: int = 50
    seed: int = 0
    output_dir: str = "runs/default"
    checkpoint_every: int = 5
    total_step_budget: int = 2_000_000
    workers: int = 1
    env_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        Variant.parse(self.env)
        for name in ("cycles_per_epoch", "episodes_per_cycle", "optimizer_steps_per_cycle",
                     "eval_episodes", "checkpoint_every", "total_step_budget", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.episodes_per_cycle < self.hyperparams.rollout_batch:
            raise ConfigError("episodes_per_cycle must be at least hyperparams.rollout_batch")

    def env_config(self) -> EnvConfig:
        return make_config(self.env, **self.env_overrides)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["hyperparams"] = self.hyperparams.to_dict()
        d["env_overrides"] = dict(self.env_overrides)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> TrainConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        doc = dict(doc)
        if "hyperparams" in doc:
            base = Hyperparams(rollout_batch=16).to_dict()
            base.update(doc["hyperparams"])
            try:
                doc["hyperparams"] = Hyperparams.from_dict(base)
            except nc.ConfigurationError as exc:
                raise ConfigError(str(exc)) from exc
        return cls(**doc)

    def config_hash(self) -> str:
        """Digest of everything that shapes the learning run (not paths or worker count)."""
        d = self.to_dict()
        for k in ("output_dir", "workers", "epochs", "total_step_budget", "checkpoint_every"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def load_train_config(path, **overrides) -> TrainConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(doc)


@dataclass
class EpochMetrics:
    epoch: int
    env_steps: int
    train_success_rate: float
    eval_success_rate: float
    mean_episode_reward: float
    actor_loss: float
    critic_loss: float
    wall_clock_s: float = 0.0


# -- learner state and checkpoints ---------------------------------------------------

@dataclass
class TrainState:
    agent: AgentParams
    obs_norm: Normalizer
    goal_norm: Normalizer
    actor_opt: nc.AdamState
    critic_opt: nc.AdamState
    rngs: dict  # name -> np.random.Generator
    epoch: int = 0
    env_steps: int = 0


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *key])))


def init_state(cfg: TrainConfig) -> TrainState:
    env_cfg = cfg.env_config()
    hp = cfg.hyperparams
    agent = ddpg.make_agent(env_cfg.obs_dim, 3, hp, seed=int(cfg.seed) * 7919 + 17)
    rngs = {"sample": _stream(cfg.seed, 1), "eval": _stream(cfg.seed, 2)}
    for w in range(cfg.workers):
        rngs[f"rollout_{w}"] = _stream(cfg.seed, 100 + w)
    return TrainState(
        agent=agent,
        obs_norm=Normalizer.empty(env_cfg.obs_dim, hp.norm_eps, hp.norm_clip),
        goal_norm=Normalizer.empty(3, hp.norm_eps, hp.norm_clip),
        actor_opt=nc.AdamState.for_network(agent.actor, hp.lr_actor),
        critic_opt=nc.AdamState.for_network(agent.critic, hp.lr_critic),
        rngs=rngs,
    )


def checkpoint_document(cfg: TrainConfig, st: TrainState) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "agent": ddpg.agent_to_dict(st.agent),
        "obs_normalizer": st.obs_norm.to_dict(),
        "goal_normalizer": st.goal_norm.to_dict(),
        "actor_optimizer": nc.adam_to_dict(st.actor_opt),
        "critic_optimizer": nc.adam_to_dict(st.critic_opt),
        "rng": {name: g.bit_generator.state for name, g in st.rngs.items()},
        "progress": {"epoch": st.epoch, "env_steps": st.env_steps},
    }


def save_checkpoint(path, cfg: TrainConfig, st: TrainState) -> Path:
    """Atomically write a JSON checkpoint (sorted keys, exact float round-trip)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(checkpoint_document(cfg, st), sort_keys=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(text)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def _section(doc: dict, name: str, parse: Callable):
    if name not in doc:
        raise CheckpointError(name, "missing")
    try:
        return parse(doc[name])
    except CheckpointError:
        raise
    except Exception as exc:  # any malformed content is reported against its section
        raise CheckpointError(name, f"{type(exc).__name__}: {exc}") from exc


def _parse_rngs(doc: dict) -> dict:
    out = {}
    for name, state in doc.items():
        bg = np.random.PCG64()
        bg.state = state
        out[name] = np.random.Generator(bg)
    return out


def load_checkpoint(path, expected: TrainConfig | None = None) -> tuple[TrainConfig, TrainState]:
    """Parse a checkpoint; nothing is constructed unless every section parses.

    A config-hash mismatch against ``expected`` only warns.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError("document", f"not valid JSON ({exc.msg} at offset {exc.pos})") from exc
    if not isinstance(doc, dict):
        raise CheckpointError("document", "top level is not an object")
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("format", f"unexpected format tag {doc.get('format')!r}")
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError("format_version", f"unsupported version {doc.get('format_version')!r}")
    cfg = _section(doc, "config", TrainConfig.from_dict)
    stored_hash = _section(doc, "config_hash", str)
    agent = _section(doc, "agent", ddpg.agent_from_dict)
    obs_norm = _section(doc, "obs_normalizer", Normalizer.from_dict)
    goal_norm = _section(doc, "goal_normalizer", Normalizer.from_dict)
    actor_opt = _section(doc, "actor_optimizer", nc.adam_from_dict)
    critic_opt = _section(doc, "critic_optimizer", nc.adam_from_dict)
    rngs = _section(doc, "rng", _parse_rngs)
    progress = _section(doc, "progress", lambda p: (int(p["epoch"]), int(p["env_steps"])))
    if stored_hash != cfg.config_hash():
        warnings.warn("checkpoint config hash does not match its own config", ConfigHashWarning, stacklevel=2)
    if expected is not None and expected.config_hash() != stored_hash:
        warnings.warn("checkpoint was produced with a different training config", ConfigHashWarning,
                      stacklevel=2)
    st = TrainState(agent, obs_norm, goal_norm, actor_opt, critic_opt, rngs, *progress)
    return cfg, st


# -- rollouts ------------------------------------------------------------------

@dataclass(frozen=True)
class Policy:
    """Frozen snapshot used by rollout workers."""
    agent: AgentParams
    obs_norm: Normalizer
    goal_norm: Normalizer
    hp: Hyperparams

    def act(self, obs, goal, rng, explore: bool) -> np.ndarray:
        hp = self.hp
        s = ddpg.normalize(self.obs_norm, np.clip(obs, -hp.obs_clip, hp.obs_clip))
        g = ddpg.normalize(self.goal_norm, np.clip(goal, -hp.obs_clip, hp.obs_clip))
        return ddpg.select_action(self.agent, s, g, hp, rng, explore)


def rollout(env: BatchEnv, act: Callable, rng: np.random.Generator, record: bool = False) -> dict:
    """One episode in each of ``env.n`` environments; ``act(obs, goal)`` returns raw actions."""
    T = env.cfg.episode_len
    n = env.n
    obs, ag, g = env.reset(rng)
    out = {
        "obs": np.empty((n, T + 1, obs.shape[1])), "ag": np.empty((n, T + 1, 3)),
        "g": np.empty((n, T, 3)), "actions": np.empty((n, T, 4)), "rewards": np.empty((n, T)),
    }
    if record:
        for k, shape in (("gripper_pos", 3), ("box_vel", 3)):
            out[k] = np.empty((n, T, shape))
        for k in ("finger_gap", "contact", "grasped"):
            out[k] = np.empty((n, T))
    out["obs"][:, 0], out["ag"][:, 0] = obs, ag
    for t in range(T):
        a = act(obs, g)
        out["g"][:, t] = g
        out["actions"][:, t] = a
        obs, ag, g_next, r, info = env.step(a)
        out["obs"][:, t + 1], out["ag"][:, t + 1], out["rewards"][:, t] = obs, ag, r
        if record:
            s = env.states
            out["gripper_pos"][:, t] = s[:, L.S_GRIP:L.S_GRIP + 3]
            out["box_vel"][:, t] = s[:, L.S_BOX_VEL:L.S_BOX_VEL + 3]
            out["finger_gap"][:, t] = s[:, L.S_FINGER] + s[:, L.S_FINGER + 1]
            out["contact"][:, t] = info["gripper_box_contact"]
            out["grasped"][:, t] = info["grasped"]
        g = g_next
    return out


def _chunks(total: int, size: int) -> list[int]:
    return [min(size, total - i) for i in range(0, total, size)]


class RolloutWorkers:
    """Private environments and random streams per worker, reassembled in chunk order."""

    def __init__(self, cfg: TrainConfig):
        self.n_workers = cfg.workers
        self._envs: list[dict] = [{} for _ in range(self.n_workers)]

    def _env(self, w: int, env_cfg: EnvConfig, n: int) -> BatchEnv:
        env = self._envs[w].get(n)
        if env is None:
            env = self._envs[w][n] = BatchEnv(env_cfg, n)
        else:
            env.set_config(env_cfg)
        return env

    def collect(self, policy: Policy, env_cfg: EnvConfig, n_episodes: int, chunk: int, rngs: dict) -> dict:
        sizes = _chunks(n_episodes, chunk)

        def run(ci: int, w: int) -> dict:
            rng = rngs[f"rollout_{w}"]
            env = self._env(w, env_cfg, sizes[ci])
            return rollout(env, lambda o, g: policy.act(o, g, rng, explore=True), rng)

        if self.n_workers == 1:
            parts = [run(ci, 0) for ci in range(len(sizes))]
        else:
            results: queue.Queue = queue.Queue()

            def worker(w: int):
                try:
                    for ci in range(w, len(sizes), self.n_workers):
                        results.put((ci, run(ci, w), None))
                except BaseException as exc:  # surfaced in the learner thread
                    results.put((-1, None, exc))

            threads = [threading.Thread(target=worker, args=(w,), daemon=True) for w in range(self.n_workers)]
            for th in threads:
                th.start()
            for th in threads:
                th.join()
            got = {}
            while not results.empty():
                ci, part, exc = results.get()
                if exc is not None:
                    raise exc
                got[ci] = part
            parts = [got[ci] for ci in range(len(sizes))]
        return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


# -- evaluation ----------------------------------------------------------------

@dataclass
class EvalResult:
    success_rate: float
    mean_reward: float
    episodes: int
    rewards: np.ndarray = field(repr=False, default=None)


def _episode_logs(data: dict, env_name: str, seed: int, first_index: int) -> list[EpisodeLog]:
    logs = []
    for b in range(data["rewards"].shape[0]):
        logs.append(EpisodeLog(
            env=env_name, seed=seed, episode_index=first_index + b, target=data["g"][b, 0].copy(),
            gripper_pos=data["gripper_pos"][b], finger_gap=data["finger_gap"][b],
            box_pos=data["ag"][b, 1:], box_vel=data["box_vel"][b], action=data["actions"][b],
            reward=data["rewards"][b], gripper_box_contact=data["contact"][b].astype(bool),
            grasped=data["grasped"][b].astype(bool),
            extra={"box_start": [float(v) for v in data["ag"][b, 0]]},
        ))
    return logs


def run_episodes(env_cfg: EnvConfig, act: Callable, episodes: int, rng: np.random.Generator,
                 log_fh=None, log_seed: int = 0, chunk: int = EVAL_CHUNK) -> EvalResult:
    """Roll out ``episodes`` episodes with ``act`` and aggregate final-step success and return."""
    if episodes <= 0:
        raise EmptyEvaluationError("success rate is undefined for zero evaluation episodes")
    finals, totals = [], []
    done = 0
    envs: dict = {}
    for n in _chunks(episodes, chunk):
        env = envs.setdefault(n, BatchEnv(env_cfg, n))
        data = rollout(env, act, rng, record=log_fh is not None)
        finals.append(data["rewards"][:, -1] == 0.0)
        totals.append(data["rewards"].sum(axis=1))
        if log_fh is not None:
            for log in _episode_logs(data, env_cfg.variant.value, log_seed, done):
                write_episode(log_fh, log)
        done += n
    finals = np.concatenate(finals)
    totals = np.concatenate(totals)
    return EvalResult(float(finals.mean()), float(totals.mean()), episodes, totals)


def evaluate(checkpoint, env_cfg: EnvConfig | None = None, episodes: int = 100, seed: int = 0,
             log_path=None) -> EvalResult:
    """Greedy evaluation of a checkpoint (path or ``(TrainConfig, TrainState)``)."""
    cfg, st = load_checkpoint(checkpoint) if isinstance(checkpoint, (str, Path)) else checkpoint
    env_cfg = cfg.env_config() if env_cfg is None else env_cfg
    if env_cfg.obs_dim != st.obs_norm.dim:
        raise ConfigError(f"policy expects {st.obs_norm.dim}-dim observations, "
                          f"environment {env_cfg.variant.value!r} emits {env_cfg.obs_dim}")
    policy = Policy(st.agent, st.obs_norm, st.goal_norm, cfg.hyperparams)
    rng = _stream(seed, 3)
    act = lambda o, g: policy.act(o, g, rng, explore=False)  # noqa: E731
    if log_path is None:
        return run_episodes(env_cfg, act, episodes, rng)
    Path(log_path).parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w") as fh:
        return run_episodes(env_cfg, act, episodes, rng, log_fh=fh, log_seed=seed)


def random_policy_baseline(env_cfg: EnvConfig, episodes: int, seed: int = 0) -> EvalResult:
    """Uniform random actions in [-1, 1]^4."""
    rng = _stream(seed, 4)
    return run_episodes(env_cfg, lambda o, g: rng.uniform(-1.0, 1.0, (o.shape[0], 4)), episodes, rng)


# -- training loop ----------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Path
    metrics_path: Path
    metrics: list[EpochMetrics]
    state: TrainState = field(repr=False, default=None)
    config: TrainConfig | None = None


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


class _MetricsWriter:
    def __init__(self, out: Path, append: bool):
        self.path = out / "metrics.csv"
        self.timing_path = out / "timing.csv"
        if not append or not self.path.exists():
            for p, header in ((self.path, METRIC_FIELDS), (self.timing_path, TIMING_FIELDS)):
                with open(p, "w", newline="") as fh:
                    csv.writer(fh, lineterminator="\r\n").writerow(header)

    def append(self, m: EpochMetrics) -> None:
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\r\n").writerow([_fmt(getattr(m, k)) for k in METRIC_FIELDS])
        with open(self.timing_path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\r\n").writerow([m.epoch, f"{m.wall_clock_s:.3f}"])


def _optimize(st: TrainState, buf: ReplayBuffer, hp: Hyperparams, n_steps: int):
    k_future = hp.k_future if hp.use_her else 0
    a_losses, c_losses = [], []
    agent, a_opt, c_opt = st.agent, st.actor_opt, st.critic_opt
    for _ in range(n_steps):
        batch = buf.sample_batch(hp.batch_size, k_future, st.rngs["sample"])
        pb = ddpg.prepare_batch(batch, st.obs_norm, st.goal_norm, hp)
        agent, c_opt, lc = ddpg.critic_update(agent, c_opt, hp, pb)
        agent, a_opt, la = ddpg.actor_update(agent, a_opt, hp, pb)
        c_losses.append(lc)
        a_losses.append(la)
    agent = ddpg.update_targets(agent, hp)
    st.agent, st.actor_opt, st.critic_opt = agent, a_opt, c_opt
    return a_losses, c_losses


def run_training(cfg: TrainConfig, init: TrainState | None = None, resume: bool = False,
                 progress: Callable[[EpochMetrics], None] | None = None) -> TrainResult:
    """Train per ``cfg``; writes ``metrics.csv``, ``timing.csv`` and checkpoints into ``cfg.output_dir``.

    ``init`` warm-starts from a loaded state; with ``resume`` its epoch and
    step counters (and random streams) continue instead of restarting.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    hp = cfg.hyperparams
    base_env = cfg.env_config()
    st = init_state(cfg)
    if init is not None:
        fresh_rngs = st.rngs
        st = dataclasses.replace(init)
        if not resume:
            st.rngs, st.epoch, st.env_steps = fresh_rngs, 0, 0
        elif set(st.rngs) != set(fresh_rngs):
            raise ConfigError("cannot resume with a different worker count")
    metrics_out = _MetricsWriter(out, append=resume)
    buf = ReplayBuffer(hp.buffer_capacity, base_env.episode_len, base_env.obs_dim)
    workers = RolloutWorkers(cfg)
    eval_env = base_env
    history: list[EpochMetrics] = []
    T = base_env.episode_len
    t0 = time.perf_counter()
    final_path = out / "final.json"

    def abort(exc: Exception):
        path = save_checkpoint(out / "abort.json", cfg, st)
        raise TrainingAborted(f"non-finite loss at epoch {st.epoch}: {exc}", path) from exc

    cycle_steps = cfg.episodes_per_cycle * T
    while st.epoch < cfg.epochs and st.env_steps + cycle_steps <= cfg.total_step_budget:
        train_success, a_all, c_all = [], [], []
        for _ in range(cfg.cycles_per_epoch):
            if st.env_steps + cycle_steps > cfg.total_step_budget:
                break
            env_cfg = apply_variant_rule(base_env, st.env_steps)
            policy = Policy(st.agent, st.obs_norm, st.goal_norm, hp)
            data = workers.collect(policy, env_cfg, cfg.episodes_per_cycle, hp.rollout_batch, st.rngs)
            n_ep = data["rewards"].shape[0]
            st.env_steps += n_ep * T
            train_success.append(data["rewards"][:, -1] == 0.0)
            buf.store_arrays(data["obs"], data["ag"], data["g"], data["actions"])
            st.obs_norm = ddpg.normalizer_update(st.obs_norm, data["obs"].reshape(-1, data["obs"].shape[-1]))
            st.goal_norm = ddpg.normalizer_update(
                st.goal_norm, np.concatenate([data["g"].reshape(-1, 3), data["ag"].reshape(-1, 3)]))
            try:
                a_l, c_l = _optimize(st, buf, hp, cfg.optimizer_steps_per_cycle)
            except NumericInstabilityError as exc:
                abort(exc)
            a_all += a_l
            c_all += c_l
        if not (np.all(np.isfinite(a_all)) and np.all(np.isfinite(c_all))):
            abort(NumericInstabilityError("loss history contains non-finite values"))
        st.epoch += 1
        policy = Policy(st.agent, st.obs_norm, st.goal_norm, hp)
        eval_rng = st.rngs["eval"]
        ev = run_episodes(apply_variant_rule(eval_env, st.env_steps),
                          lambda o, g: policy.act(o, g, eval_rng, explore=False), cfg.eval_episodes, eval_rng)
        m = EpochMetrics(
            epoch=st.epoch, env_steps=st.env_steps,
            train_success_rate=float(np.concatenate(train_success).mean()),
            eval_success_rate=ev.success_rate, mean_episode_reward=ev.mean_reward,
            actor_loss=float(np.mean(a_all)), critic_loss=float(np.mean(c_all)),
            wall_clock_s=time.perf_counter() - t0,
        )
        history.append(m)
        metrics_out.append(m)
        if st.epoch % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint_epoch{st.epoch:04d}.json", cfg, st)
        if progress is not None:
            progress(m)
    save_checkpoint(final_path, cfg, st)
    return TrainResult(final_path, metrics_out.path, history, st, cfg)


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k in ("epoch", "env_steps") else float(v)) for k, v in r.items()} for r in rows]
