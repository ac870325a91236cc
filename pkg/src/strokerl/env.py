"""Painting episode state machine and the vectorized multi-env harness.

An environment owns a goal image, a working canvas and a brush.  Each
step renders one action, rewards the fractional loss improvement toward
the goal, and stops the rollout once the reward fails the configured
critic condition past a grace period, or when the step cap is reached.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import canvas as canvas_mod
from .canvas import BrushState, DEFAULT_MAX_RADIUS
from .perception import (
    DEGENERATE_EPS,
    DegenerateEpisodeError,
    Observation,
    PatchSpec,
    l2_loss,
    observe,
    step_reward,
)

STOP_NONNEG = "nonneg"
STOP_STRICT_POS = "strict_pos"


@dataclass(frozen=True)
class EnvConfig:
    patch: PatchSpec
    max_steps: int = 50
    gamma: float = 0.9
    grace_steps: int = 5
    stop_rule: str = STOP_NONNEG
    max_radius: int = DEFAULT_MAX_RADIUS
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0,1], got {self.gamma}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.stop_rule not in (STOP_NONNEG, STOP_STRICT_POS):
            raise ValueError(f"unknown stop_rule {self.stop_rule!r}")


@dataclass
class Transition:
    obs: Observation
    action: np.ndarray
    reward: float
    next_obs: Observation
    done: bool


@dataclass
class Episode:
    goal: np.ndarray
    states: list  # canvases s_0 .. s_T
    transitions: list
    initial_loss: float

    def cumulative_reward(self) -> float:
        return float(sum(t.reward for t in self.transitions))


def canvas_hash(canvas: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(canvas).tobytes()).hexdigest()


def _reward_fails(reward: float, stop_rule: str) -> bool:
    if stop_rule == STOP_NONNEG:
        return reward < 0.0
    return reward <= 0.0


class PaintEnv:
    """Single painting environment; one owner, reset/step until done."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.goal = None
        self.canvas = None
        self.brush = None
        self.t = 0
        self.done = True
        self.initial_loss = 0.0
        self.start_record = None
        self.brush0 = None

    def reset(self, goal: np.ndarray, start="blank") -> Observation:
        """Place the brush, set up the start canvas and return o_0.

        `start` is "blank", ("random", seed) or an explicit canvas.
        """
        height, width = goal.shape[:2]
        if isinstance(start, str):
            if start != "blank":
                raise ValueError(f"unknown start mode {start!r}")
            self.canvas = canvas_mod.blank_canvas(height, width)
            self.start_record = ("blank", None)
        elif isinstance(start, tuple) and start[0] == "random":
            self.canvas = canvas_mod.random_canvas(height, width, start[1])
            self.start_record = ("random", start[1])
        else:
            self.canvas = np.asarray(start, dtype=np.float64).copy()
            if self.canvas.shape != goal.shape:
                raise ValueError("start canvas shape differs from goal")
            self.start_record = ("given", canvas_hash(self.canvas))
        self.goal = goal.copy()
        self.initial_loss = l2_loss(self.canvas, self.goal)
        if self.initial_loss <= DEGENERATE_EPS:
            raise DegenerateEpisodeError(
                f"goal equals start state (loss={self.initial_loss})"
            )
        self.brush = BrushState(
            row=float(self.rng.integers(0, height)),
            col=float(self.rng.integers(0, width)),
        )
        self.brush0 = self.brush
        self.t = 0
        self.done = False
        return self._observe()

    def _observe(self) -> Observation:
        return observe(self.canvas, self.goal, self.brush, self.config.patch)

    def step(self, action: np.ndarray) -> tuple[Observation, float, bool]:
        if self.done:
            raise RuntimeError("step() called on a finished environment")
        prev = self.canvas
        spec = self.config.patch
        self.canvas, self.brush = canvas_mod.render_action(
            prev,
            self.brush,
            action,
            max_offset_row=spec.height / 2.0,
            max_offset_col=spec.width / 2.0,
            max_radius=self.config.max_radius,
        )
        reward = step_reward(prev, self.canvas, self.goal, self.initial_loss)
        self.t += 1
        failed = self.t > self.config.grace_steps and _reward_fails(
            reward, self.config.stop_rule
        )
        self.done = failed or self.t >= self.config.max_steps
        return self._observe(), reward, self.done


def rollout(policy, env: PaintEnv, goal: np.ndarray, start="blank") -> Episode:
    """Run the policy until the env stops; returns the full episode."""
    obs = env.reset(goal, start)
    states = [env.canvas.copy()]
    transitions = []
    while not env.done:
        action = policy(obs)
        next_obs, reward, done = env.step(action)
        transitions.append(Transition(obs, np.asarray(action, dtype=np.float64), reward, next_obs, done))
        states.append(env.canvas.copy())
        obs = next_obs
    return Episode(goal=env.goal, states=states, transitions=transitions,
                   initial_loss=env.initial_loss)


class VecEnv:
    """Fixed-size batch of independent environments stepped together.

    Behavior is defined to be identical to stepping each slot on its own;
    per-slot RNG streams come from the per-slot configs.
    """

    def __init__(self, configs: list):
        if not configs:
            raise ValueError("VecEnv needs at least one config")
        self.envs = [PaintEnv(cfg) for cfg in configs]

    def __len__(self):
        return len(self.envs)

    def reset(self, goals: list, starts=None) -> list:
        starts = starts if starts is not None else ["blank"] * len(self.envs)
        self._check_len(goals)
        self._check_len(starts)
        return [env.reset(goal, start) for env, goal, start in zip(self.envs, goals, starts)]

    def step(self, actions: list) -> list:
        """One step in every slot; returns per-slot (obs, reward, done)."""
        self._check_len(actions)
        for env in self.envs:
            if env.done:
                raise RuntimeError("step() called with a finished slot")
        return [env.step(a) for env, a in zip(self.envs, actions)]

    def _check_len(self, seq):
        if len(seq) != len(self.envs):
            raise ValueError(f"expected {len(self.envs)} entries, got {len(seq)}")


def episode_log(env: PaintEnv, episode: Episode) -> dict:
    """Self-describing record sufficient for bit-exact replay."""
    cfg = env.config
    return {
        "version": 1,
        "config": {
            "patch": [cfg.patch.height, cfg.patch.width],
            "max_steps": cfg.max_steps,
            "gamma": cfg.gamma,
            "grace_steps": cfg.grace_steps,
            "stop_rule": cfg.stop_rule,
            "max_radius": cfg.max_radius,
            "seed": cfg.seed,
        },
        "goal_hash": canvas_hash(episode.goal),
        "start": list(env.start_record),
        "brush0": [env.brush0.row, env.brush0.col],
        "actions": [t.action.tolist() for t in episode.transitions],
    }


def replay_episode(log: dict, goal: np.ndarray) -> Episode:
    """Reconstruct an episode from its log; verifies the goal hash."""
    if canvas_hash(goal) != log["goal_hash"]:
        raise ValueError("goal image does not match the log's goal hash")
    cfg_d = log["config"]
    config = EnvConfig(
        patch=PatchSpec(*cfg_d["patch"]),
        max_steps=cfg_d["max_steps"],
        gamma=cfg_d["gamma"],
        grace_steps=cfg_d["grace_steps"],
        stop_rule=cfg_d["stop_rule"],
        max_radius=cfg_d["max_radius"],
        seed=cfg_d["seed"],
    )
    mode, arg = log["start"]
    if mode == "blank":
        start = "blank"
    elif mode == "random":
        start = ("random", arg)
    else:
        raise ValueError("replay of 'given' starts needs the original canvas")
    env = PaintEnv(config)
    env.reset(goal, start)
    # Force the recorded brush placement; the env's own draw is discarded.
    env.brush = BrushState(*log["brush0"])
    env.brush0 = env.brush
    obs = env._observe()
    states = [env.canvas.copy()]
    transitions = []
    for action in log["actions"]:
        next_obs, reward, done = env.step(np.asarray(action, dtype=np.float64))
        transitions.append(Transition(obs, np.asarray(action, dtype=np.float64), reward, next_obs, done))
        states.append(env.canvas.copy())
        obs = next_obs
    return Episode(goal=env.goal, states=states, transitions=transitions,
                   initial_loss=env.initial_loss)
