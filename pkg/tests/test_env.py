import numpy as np
import pytest

from strokerl.canvas import blank_canvas, random_canvas
from strokerl.env import (
    EnvConfig,
    PaintEnv,
    STOP_NONNEG,
    STOP_STRICT_POS,
    VecEnv,
    episode_log,
    replay_episode,
    rollout,
)
from strokerl.perception import DegenerateEpisodeError, PatchSpec, l2_loss, step_reward


def small_config(seed=0, **kw):
    defaults = dict(patch=PatchSpec(8, 8), max_steps=20, gamma=0.9,
                    grace_steps=5, stop_rule=STOP_NONNEG, seed=seed)
    defaults.update(kw)
    return EnvConfig(**defaults)


def random_policy(seed):
    rng = np.random.default_rng(seed)
    return lambda obs: rng.random(6)


class TestReset:
    def test_degenerate_goal(self):
        env = PaintEnv(small_config())
        with pytest.raises(DegenerateEpisodeError):
            env.reset(blank_canvas(16, 16), "blank")

    def test_brush_position_deterministic(self):
        positions = []
        for _ in range(2):
            env = PaintEnv(small_config(seed=5))
            env.reset(random_canvas(16, 16, seed=1), "blank")
            positions.append((env.brush.row, env.brush.col))
        assert positions[0] == positions[1]

    def test_random_start_replays_random_canvas(self):
        env = PaintEnv(small_config())
        env.reset(random_canvas(16, 16, seed=1), ("random", 42))
        assert np.array_equal(env.canvas, random_canvas(16, 16, seed=42))

    def test_given_start(self):
        start = random_canvas(16, 16, seed=9)
        env = PaintEnv(small_config())
        env.reset(random_canvas(16, 16, seed=1), start)
        assert np.array_equal(env.canvas, start)
        start[0, 0, 0] = 0.123  # env must hold its own copy
        assert env.canvas[0, 0, 0] != 0.123 or start[0, 0, 0] == env.canvas[0, 0, 0]


class TestStep:
    def test_positive_reward_for_repainting_goal(self):
        # Goal = one known stroke on blank; replaying the stroke must help.
        action = np.array([0.5, 0.5, 0.8, 0.1, 0.2, 0.3])
        env = PaintEnv(small_config(seed=3))
        env.reset(random_canvas(16, 16, seed=7), "blank")
        goal_canvas, _ = __import__("strokerl.canvas", fromlist=["render_action"]).render_action(
            env.canvas, env.brush, action, 4.0, 4.0)
        env2 = PaintEnv(small_config(seed=3))
        env2.reset(goal_canvas, "blank")
        env2.brush = env.brush
        _, reward, _ = env2.step(action)
        assert reward > 0

    def test_max_steps_cap(self):
        env = PaintEnv(small_config(max_steps=3, grace_steps=100))
        env.reset(random_canvas(16, 16, seed=1), "blank")
        policy = random_policy(0)
        for _ in range(3):
            obs, reward, done = env.step(policy(None))
        assert done
        with pytest.raises(RuntimeError):
            env.step(policy(None))

    def test_stop_on_negative_after_grace(self):
        env = PaintEnv(small_config(grace_steps=0, stop_rule=STOP_NONNEG))
        env.reset(blank_canvas(16, 16, (0.5, 0.5, 0.5)), ("random", 3))
        # Paint pure white far from the gray goal: loss increases, reward < 0.
        _, reward, done = env.step(np.array([0.5, 0.5, 1.0, 1.0, 1.0, 1.0]))
        assert reward < 0
        assert done

    def test_strict_pos_stops_on_zero(self):
        env = PaintEnv(small_config(grace_steps=0, stop_rule=STOP_STRICT_POS))
        goal = random_canvas(16, 16, seed=2)
        env.reset(goal, "blank")
        first = env.canvas.copy()
        # Painting white on white changes nothing: reward exactly 0.
        _, reward, done = env.step(np.array([0.5, 0.5, 1.0, 1.0, 1.0, 1.0]))
        assert reward == 0.0
        assert done
        assert np.array_equal(env.canvas, first)


class TestRollout:
    def test_nonempty_episode(self):
        env = PaintEnv(small_config())
        ep = rollout(random_policy(1), env, random_canvas(16, 16, seed=4), "blank")
        assert len(ep.transitions) >= 1
        assert len(ep.states) == len(ep.transitions) + 1

    def test_replay_determinism(self):
        episodes = []
        for _ in range(2):
            env = PaintEnv(small_config(seed=11))
            episodes.append(rollout(random_policy(2), env,
                                    random_canvas(16, 16, seed=4), "blank"))
        a, b = episodes
        assert len(a.transitions) == len(b.transitions)
        for ta, tb in zip(a.transitions, b.transitions):
            assert np.array_equal(ta.action, tb.action)
            assert ta.reward == tb.reward
        assert np.array_equal(a.states[-1], b.states[-1])

    def test_rewards_telescope(self):
        env = PaintEnv(small_config())
        goal = random_canvas(16, 16, seed=4)
        ep = rollout(random_policy(3), env, goal, "blank")
        total = ep.cumulative_reward()
        expected = (l2_loss(ep.states[0], goal) - l2_loss(ep.states[-1], goal)) / ep.initial_loss
        assert total == pytest.approx(expected, abs=1e-9)

    def test_stored_rewards_recomputable(self):
        env = PaintEnv(small_config())
        goal = random_canvas(16, 16, seed=5)
        ep = rollout(random_policy(4), env, goal, "blank")
        for t, transition in enumerate(ep.transitions):
            recomputed = step_reward(ep.states[t], ep.states[t + 1], goal, ep.initial_loss)
            assert transition.reward == recomputed

    def test_grace_period_rewards(self):
        env = PaintEnv(small_config(grace_steps=5))
        ep = rollout(random_policy(5), env, random_canvas(16, 16, seed=6), "blank")
        assert len(ep.transitions) <= env.config.max_steps
        # All transitions past the grace period except possibly the last are >= 0.
        for t in ep.transitions[5:-1]:
            assert t.reward >= 0


class TestVecEnv:
    def test_n1_equals_scalar(self):
        goal = random_canvas(16, 16, seed=8)
        scalar = PaintEnv(small_config(seed=21))
        obs_s = scalar.reset(goal, "blank")
        vec = VecEnv([small_config(seed=21)])
        obs_v = vec.reset([goal], ["blank"])[0]
        policy = random_policy(6)
        actions = [policy(None) for _ in range(10)]
        for a in actions:
            if scalar.done:
                break
            _, rs, ds = scalar.step(a)
            _, rv, dv = vec.step([a])[0]
            assert rs == rv and ds == dv
        assert np.array_equal(scalar.canvas, vec.envs[0].canvas)

    def test_identical_slots(self):
        goal = random_canvas(16, 16, seed=8)
        vec = VecEnv([small_config(seed=33)] * 16)
        vec.reset([goal] * 16, ["blank"] * 16)
        action = np.array([0.6, 0.4, 0.5, 0.3, 0.3, 0.3])
        results = vec.step([action] * 16)
        rewards = {r for _, r, _ in results}
        assert len(rewards) == 1
        canvases = [env.canvas for env in vec.envs]
        for canvas in canvases[1:]:
            assert np.array_equal(canvas, canvases[0])

    def test_distinct_seeds_differ(self):
        goal = random_canvas(16, 16, seed=8)
        vec = VecEnv([small_config(seed=s) for s in range(16)])
        vec.reset([goal] * 16, ["blank"] * 16)
        positions = {(env.brush.row, env.brush.col) for env in vec.envs}
        assert len(positions) > 1

    def test_length_mismatch(self):
        vec = VecEnv([small_config()])
        with pytest.raises(ValueError):
            vec.reset([random_canvas(8, 8, 0)] * 2)


class TestReplayLog:
    def test_bit_exact_replay(self):
        env = PaintEnv(small_config(seed=77))
        goal = random_canvas(16, 16, seed=10)
        ep = rollout(random_policy(7), env, goal, ("random", 55))
        log = episode_log(env, ep)
        replayed = replay_episode(log, goal)
        assert len(replayed.transitions) == len(ep.transitions)
        for ta, tb in zip(ep.transitions, replayed.transitions):
            assert ta.reward == tb.reward
        assert np.array_equal(replayed.states[-1], ep.states[-1])

    def test_goal_hash_checked(self):
        env = PaintEnv(small_config(seed=77))
        goal = random_canvas(16, 16, seed=10)
        ep = rollout(random_policy(8), env, goal, "blank")
        log = episode_log(env, ep)
        with pytest.raises(ValueError):
            replay_episode(log, random_canvas(16, 16, seed=11))


class TestEnvConfig:
    def test_bad_gamma(self):
        with pytest.raises(ValueError):
            small_config(gamma=1.5)

    def test_bad_stop_rule(self):
        with pytest.raises(ValueError):
            small_config(stop_rule="sometimes")
