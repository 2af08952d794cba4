import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from tabletop_her.her_replay import (
    EmptyBufferError,
    EpisodeRecord,
    MalformedEpisodeError,
    ReplayBuffer,
    recompute_reward,
)

T = 60
OBS = 5


def make_episode(rng, episode_index=0, T=T):
    ag = np.cumsum(rng.normal(0, 0.02, (T + 1, 3)), axis=0) + np.array([0.1, 0.0, 0.025])
    obs = np.concatenate([ag, rng.normal(size=(T + 1, OBS - 3))], axis=1)
    goal = np.tile(rng.uniform([0.25, -0.15, 0.025], [0.55, 0.15, 0.025]), (T, 1))
    actions = rng.uniform(-1, 1, (T, 4))
    return EpisodeRecord(obs, ag, goal, actions, recompute_reward(ag[1:], goal),
                         env_id="wall", seed=1, episode_index=episode_index)


# -- recompute_reward --------------------------------------------------------

def test_reward_zero_distance():
    assert recompute_reward([0.40, 0.00, 0.02], [0.40, 0.00, 0.02]) == 0.0


def test_reward_outside_tolerance():
    assert recompute_reward([0.40, 0.10, 0.02], [0.40, 0.00, 0.02]) == -1.0


def test_reward_inside_tolerance():
    d = np.hypot(0.02, 0.03)
    assert d == pytest.approx(0.03606, abs=1e-5)
    assert recompute_reward([0.42, 0.03, 0.02], [0.40, 0.00, 0.02]) == 0.0


def test_reward_ignores_height():
    assert recompute_reward([0.4, 0.0, 0.5], [0.4, 0.0, 0.0]) == 0.0


def test_reward_batched():
    a = np.array([[0.4, 0.0, 0.0], [0.5, 0.0, 0.0]])
    g = np.array([[0.4, 0.0, 0.0], [0.4, 0.0, 0.0]])
    assert recompute_reward(a, g).tolist() == [0.0, -1.0]


# -- store -------------------------------------------------------------------

def test_store_counts_transitions():
    buf = ReplayBuffer(10 * T, T, OBS)
    buf.store_episode(make_episode(np.random.default_rng(0)))
    assert buf.n_transitions == 60


def test_store_evicts_oldest_episode():
    rng = np.random.default_rng(1)
    buf = ReplayBuffer(120, T, OBS)
    eps = [make_episode(rng, i) for i in range(3)]
    for ep in eps:
        buf.store_episode(ep)
    assert buf.n_transitions == 120
    held = sorted(int(buf.meta[s, 1]) for s in buf.oldest_first_slots())
    assert held == [1, 2]
    assert [int(buf.meta[s, 1]) for s in buf.oldest_first_slots()] == [1, 2]


def test_store_deterministic():
    def fill():
        rng = np.random.default_rng(5)
        buf = ReplayBuffer(5 * T, T, OBS)
        for i in range(7):
            buf.store_episode(make_episode(rng, i))
        return buf.obs.tobytes() + buf.g.tobytes() + buf.meta.tobytes()
    assert fill() == fill()


def test_store_rejects_broken_chaining():
    rng = np.random.default_rng(2)
    trs = make_episode(rng).transitions()
    bad = list(trs)
    bad[10] = type(bad[10])(bad[10].state, bad[10].action, bad[10].desired_goal, bad[10].achieved_goal,
                            bad[10].reward, bad[10].next_state + 1.0, bad[10].next_achieved_goal)
    with pytest.raises(MalformedEpisodeError):
        EpisodeRecord.from_transitions(bad)
    # the chained version round-trips
    ep = EpisodeRecord.from_transitions(trs)
    assert ep.horizon == T


def test_store_rejects_wrong_reward():
    ep = make_episode(np.random.default_rng(3))
    ep.rewards = -ep.rewards - 1.0
    with pytest.raises(MalformedEpisodeError):
        ReplayBuffer(2 * T, T, OBS).store_episode(ep)


def test_store_rejects_wrong_length():
    ep = make_episode(np.random.default_rng(3), T=30)
    with pytest.raises(MalformedEpisodeError):
        ReplayBuffer(2 * T, T, OBS).store_episode(ep)


# -- sample ------------------------------------------------------------------

def _filled(n_eps=10, seed=0):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(n_eps * T, T, OBS)
    for i in range(n_eps):
        buf.store_episode(make_episode(rng, i))
    return buf


def test_sample_empty_raises():
    with pytest.raises(EmptyBufferError):
        ReplayBuffer(T, T, OBS).sample_batch(4, 4, np.random.default_rng(0))


def test_sample_no_relabel_when_k_zero():
    buf = _filled()
    b = buf.sample_batch(2000, 0, np.random.default_rng(0))
    assert not b.relabeled.any()
    np.testing.assert_array_equal(b.desired_goal, buf.g[b.episode, b.step])
    np.testing.assert_array_equal(b.state, buf.obs[b.episode, b.step])
    np.testing.assert_array_equal(b.reward, recompute_reward(buf.ag[b.episode, b.step + 1], b.desired_goal))


def test_relabel_to_own_next_goal_gives_zero_reward():
    buf = _filled()
    b = buf.sample_batch(20000, 4, np.random.default_rng(1))
    own = b.relabeled & (b.future_step == b.step + 1)
    assert own.sum() > 100
    assert np.all(b.reward[own] == 0.0)


def test_relabel_fraction_k4():
    buf = _filled()
    b = buf.sample_batch(100_000, 4, np.random.default_rng(2))
    assert abs(b.relabeled.mean() - 0.8) < 0.01


def test_relabeled_goals_come_from_future_of_same_episode():
    buf = _filled()
    b = buf.sample_batch(50_000, 4, np.random.default_rng(3))
    r = b.relabeled
    assert np.all(b.future_step[r] >= b.step[r] + 1)
    assert np.all(b.future_step[r] <= T)
    np.testing.assert_array_equal(b.desired_goal[r], buf.ag[b.episode[r], b.future_step[r]])


def test_reward_consistency_of_samples():
    buf = _filled()
    b = buf.sample_batch(50_000, 4, np.random.default_rng(4))
    np.testing.assert_array_equal(b.reward, recompute_reward(b.next_achieved_goal, b.desired_goal))


def test_sampling_uniform_over_steps_chi_square():
    buf = _filled(10)
    b = buf.sample_batch(120_000, 4, np.random.default_rng(5))
    counts = np.bincount(b.episode * T + b.step, minlength=10 * T)
    _, p = stats.chisquare(counts)
    assert p > 0.01


def test_unsupported_strategy():
    with pytest.raises(NotImplementedError):
        _filled(1).sample_batch(4, 4, np.random.default_rng(0), strategy="final")


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(["store", "sample"]), min_size=1, max_size=30),
       st.integers(T, 6 * T + 17))
def test_capacity_never_exceeded(ops, capacity):
    rng = np.random.default_rng(0)
    buf = ReplayBuffer(capacity, T, OBS)
    for i, op in enumerate(ops):
        if op == "store":
            buf.store_episode(make_episode(rng, i))
        elif buf.n_stored:
            buf.sample_batch(16, 4, rng)
        assert buf.n_transitions <= capacity


# -- dump/restore ------------------------------------------------------------

def test_dump_restore_round_trip(tmp_path):
    buf = _filled(4)
    path = tmp_path / "buf.bin"
    buf.dump(path)
    back = ReplayBuffer.restore(path)
    assert back.n_stored == buf.n_stored and back.cursor == buf.cursor
    for name in ("obs", "ag", "g", "actions", "meta"):
        np.testing.assert_array_equal(getattr(back, name), getattr(buf, name))
    a = buf.sample_batch(64, 4, np.random.default_rng(9))
    c = back.sample_batch(64, 4, np.random.default_rng(9))
    np.testing.assert_array_equal(a.desired_goal, c.desired_goal)


def test_restore_truncated(tmp_path):
    buf = _filled(2)
    path = tmp_path / "buf.bin"
    buf.dump(path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(ValueError):
        ReplayBuffer.restore(path)
