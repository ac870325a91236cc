"""Goal relabeling: turn any rollout into positively-rewarded supervision.

The achieved final canvas of an episode is substituted for the goal;
observations are rebuilt against it and rewards are recomputed as
fractional improvements toward it.  Because the final state matches the
substituted goal exactly, the per-episode rewards always sum to one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .env import Episode, EnvConfig, PaintEnv, canvas_hash, rollout
from .perception import (
    DEGENERATE_EPS,
    DegenerateEpisodeError,
    Observation,
    PatchSpec,
    l2_loss,
    observe,
)


@dataclass
class RelabeledSample:
    obs_hat: Observation
    action: np.ndarray
    reward_hat: float
    return_hat: float


@dataclass
class SelfSupervisedDataset:
    samples: list = field(default_factory=list)
    provenance: list = field(default_factory=list)  # per-episode metadata dicts

    def __len__(self):
        return len(self.samples)


class EmptyDatasetError(Exception):
    """Raised when every collected episode was degenerate."""


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    """Suffix sums q_t = sum_{k>=t} gamma^(k-t) r_k over the episode."""
    rewards = np.asarray(rewards, dtype=np.float64)
    returns = np.empty_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        returns[t] = acc
    return returns


def relabel_episode(ep: Episode, spec: PatchSpec, gamma: float) -> list:
    """Rebuild an episode's supervision against its own final canvas."""
    if not ep.transitions:
        raise ValueError("cannot relabel an empty episode")
    goal_hat = ep.states[-1]
    norm = l2_loss(ep.states[0], goal_hat)
    if norm <= DEGENERATE_EPS:
        raise DegenerateEpisodeError("final canvas equals the start state")
    rewards_hat = [
        (l2_loss(ep.states[t], goal_hat) - l2_loss(ep.states[t + 1], goal_hat)) / norm
        for t in range(len(ep.transitions))
    ]
    returns_hat = discounted_returns(rewards_hat, gamma)
    samples = []
    for t, transition in enumerate(ep.transitions):
        obs_hat = observe(ep.states[t], goal_hat, transition.obs.brush, spec)
        samples.append(
            RelabeledSample(
                obs_hat=obs_hat,
                action=transition.action.copy(),
                reward_hat=rewards_hat[t],
                return_hat=float(returns_hat[t]),
            )
        )
    return samples


def build_dataset(
    policy,
    goals,
    config: EnvConfig,
    episodes_per_goal: int = 1,
    starts=None,
) -> SelfSupervisedDataset:
    """Roll out, relabel and collect; degenerate episodes are skipped.

    `starts` gives one start spec per goal (default blank starts).
    """
    if not goals:
        raise ValueError("goal set must be non-empty")
    dataset = SelfSupervisedDataset()
    env = PaintEnv(config)
    for gi, goal in enumerate(goals):
        start = starts[gi] if starts is not None else "blank"
        for ei in range(episodes_per_goal):
            try:
                ep = rollout(policy, env, goal, start)
                samples = relabel_episode(ep, config.patch, config.gamma)
            except DegenerateEpisodeError:
                dataset.provenance.append(
                    {"goal": gi, "episode": ei, "degenerate": True, "length": 0}
                )
                continue
            dataset.samples.extend(samples)
            dataset.provenance.append(
                {
                    "goal": gi,
                    "episode": ei,
                    "degenerate": False,
                    "length": len(samples),
                    "goal_hash": canvas_hash(goal),
                    "seed": config.seed,
                }
            )
    if not dataset.samples:
        raise EmptyDatasetError("all collected episodes were degenerate")
    return dataset


DATASET_VERSION = 1


def _stack_obs(obs: Observation) -> np.ndarray:
    """Four tiles stacked along a leading axis: (4, h, w, 3)."""
    return np.stack(
        [obs.ego_canvas, obs.global_canvas, obs.ego_ref, obs.global_ref], axis=0
    )


def save_dataset(dataset: SelfSupervisedDataset, path) -> None:
    """Versioned container; round-trips bit-exact."""
    obs = np.stack([_stack_obs(s.obs_hat) for s in dataset.samples])
    brushes = np.array(
        [[s.obs_hat.brush.row, s.obs_hat.brush.col] for s in dataset.samples],
        dtype=np.float64,
    )
    actions = np.stack([s.action for s in dataset.samples])
    rewards = np.array([s.reward_hat for s in dataset.samples], dtype=np.float64)
    returns = np.array([s.return_hat for s in dataset.samples], dtype=np.float64)
    np.savez(
        path,
        version=np.int64(DATASET_VERSION),
        observations=obs,
        brushes=brushes,
        actions=actions,
        rewards=rewards,
        returns=returns,
        provenance=np.frombuffer(
            json.dumps(dataset.provenance).encode("utf-8"), dtype=np.uint8
        ),
    )


def load_dataset(path) -> SelfSupervisedDataset:
    from .canvas import BrushState

    with np.load(path) as data:
        if int(data["version"]) != DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {int(data['version'])}")
        provenance = json.loads(bytes(data["provenance"]).decode("utf-8"))
        dataset = SelfSupervisedDataset(provenance=provenance)
        for tiles, brush, action, reward, ret in zip(
            data["observations"],
            data["brushes"],
            data["actions"],
            data["rewards"],
            data["returns"],
        ):
            obs = Observation(
                ego_canvas=tiles[0],
                global_canvas=tiles[1],
                ego_ref=tiles[2],
                global_ref=tiles[3],
                brush=BrushState(row=float(brush[0]), col=float(brush[1])),
            )
            dataset.samples.append(
                RelabeledSample(
                    obs_hat=obs,
                    action=action,
                    reward_hat=float(reward),
                    return_hat=float(ret),
                )
            )
    return dataset
