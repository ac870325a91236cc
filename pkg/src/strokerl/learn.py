"""Behavior cloning, value regression, PPO updates and the training loop.

Three training schemes share one environment-step budget:

* ``rl_only``    -- clipped-surrogate policy optimization from scratch.
* ``ssl_only``   -- rollouts of a random policy, relabeled in hindsight,
                    fitted by supervised regression (policy and value).
* ``combined``   -- hindsight pretraining for the first three quarters
                    of the budget, then policy-optimization fine-tuning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .canvas import ACTION_DIM
from .env import EnvConfig, PaintEnv, rollout
from .hindsight import SelfSupervisedDataset, build_dataset, relabel_episode, discounted_returns
from .perception import DegenerateEpisodeError
from .policy import (
    Agent,
    assemble_input,
    forward_policy,
    forward_value,
    gaussian_log_prob,
    make_agent,
    obs_batch_to_tensor,
    sample_action,
    squash,
)

SCHEMES = ("rl_only", "ssl_only", "combined")


@dataclass(frozen=True)
class BCConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    reward_filter: bool = True  # keep only samples from positively-rewarded steps

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("invalid BC config")


@dataclass(frozen=True)
class PPOConfig:
    clip_epsilon: float = 0.2
    epochs_per_batch: int = 4
    minibatch_size: int = 64
    learning_rate: float = 3e-4
    rollout_batch: int = 512  # env steps collected per iteration
    iterations: int = 10
    entropy_coeff: float = 1e-3
    value_coeff: float = 0.5
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError(f"clip_epsilon must be in (0,1), got {self.clip_epsilon}")


@dataclass
class TrainStats:
    iteration: int
    scheme: str
    phase: str
    env_steps: int
    mean_cumulative_reward: float
    mean_episode_length: float
    bc_loss: float = math.nan
    surrogate_loss: float = math.nan
    value_loss: float = math.nan

    def as_record(self) -> dict:
        return {
            "iteration": self.iteration,
            "scheme": self.scheme,
            "phase": self.phase,
            "env_steps": self.env_steps,
            "mean_cumulative_reward": self.mean_cumulative_reward,
            "mean_episode_length": self.mean_episode_length,
            "bc_loss": self.bc_loss,
            "surrogate_loss": self.surrogate_loss,
            "value_loss": self.value_loss,
        }


@dataclass
class RolloutBatch:
    """Flat transition storage from on-policy collection."""

    inputs: torch.Tensor  # (N, 3, S, S) float32 network inputs
    actions: np.ndarray  # (N, 6)
    pre_squash: np.ndarray  # (N, 6) Gaussian samples before squashing
    log_probs: np.ndarray  # (N,) log-probs under the collecting policy
    rewards: np.ndarray  # (N,)
    returns: np.ndarray  # (N,) discounted returns to the episode end
    episode_rewards: list = field(default_factory=list)
    episode_lengths: list = field(default_factory=list)

    def __len__(self):
        return self.actions.shape[0]


def random_policy(rng: np.random.Generator):
    """Uniform-random action policy (the scheme-agnostic initial expert)."""

    def act(obs):
        return rng.random(ACTION_DIM)

    return act


def mean_policy(agent: Agent):
    """Deterministic policy that paints the squashed distribution mean."""

    def act(obs):
        grid = assemble_input(obs).transpose(2, 0, 1)
        x = torch.from_numpy(np.ascontiguousarray(grid)).float().unsqueeze(0)
        dist = forward_policy(agent, x)
        return dist.mean[0]

    return act


def _dataset_tensors(data: SelfSupervisedDataset, reward_filter: bool):
    samples = [s for s in data.samples if (not reward_filter) or s.reward_hat > 0]
    if not samples:
        samples = data.samples  # filter left nothing; fall back to everything
    inputs = obs_batch_to_tensor([s.obs_hat for s in samples])
    actions = torch.from_numpy(np.stack([s.action for s in samples])).float()
    returns = torch.from_numpy(
        np.array([s.return_hat for s in samples], dtype=np.float64)
    ).float()
    return inputs, actions, returns


def behavior_clone(agent: Agent, data: SelfSupervisedDataset, cfg: BCConfig,
                   optimizer=None) -> list:
    """Regress the policy mean onto recorded actions; returns per-epoch losses."""
    if not data.samples:
        raise ValueError("behavior cloning needs a non-empty dataset")
    inputs, actions, _ = _dataset_tensors(data, cfg.reward_filter)
    if optimizer is None:
        optimizer = torch.optim.Adam(agent.policy.parameters(), lr=cfg.learning_rate)
    losses = []
    n = inputs.shape[0]
    for _ in range(cfg.epochs):
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            xb = inputs[start : start + cfg.batch_size]
            ab = actions[start : start + cfg.batch_size]
            pre_mean, _ = agent.policy(xb)
            loss = torch.mean((torch.sigmoid(pre_mean) - ab) ** 2)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * xb.shape[0]
        losses.append(epoch_loss / n)
    return losses


def fit_value(agent: Agent, data: SelfSupervisedDataset, cfg: BCConfig,
              optimizer=None) -> list:
    """Regress the value network onto discounted hindsight returns."""
    if not data.samples:
        raise ValueError("value fitting needs a non-empty dataset")
    inputs, _, returns = _dataset_tensors(data, reward_filter=False)
    if optimizer is None:
        optimizer = torch.optim.Adam(agent.value.parameters(), lr=cfg.learning_rate)
    losses = []
    n = inputs.shape[0]
    for _ in range(cfg.epochs):
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            xb = inputs[start : start + cfg.batch_size]
            qb = returns[start : start + cfg.batch_size]
            pred = agent.value(xb)
            loss = torch.mean((pred - qb) ** 2)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * xb.shape[0]
        losses.append(epoch_loss / n)
    return losses


def policy_log_prob(agent: Agent, inputs: torch.Tensor, pre_squash: torch.Tensor) -> torch.Tensor:
    """Differentiable log-prob of stored pre-squash samples under the policy.

    Includes the logistic change-of-variables term so values line up with
    sample_action's bookkeeping (the term is parameter-free and cancels in
    PPO ratios).
    """
    pre_mean, log_std = agent.policy(inputs)
    var = torch.exp(2.0 * log_std)
    gauss = torch.sum(
        -0.5 * torch.log(2.0 * math.pi * var) - 0.5 * (pre_squash - pre_mean) ** 2 / var,
        dim=-1,
    )
    correction = torch.sum(
        torch.nn.functional.logsigmoid(pre_squash)
        + torch.nn.functional.logsigmoid(-pre_squash),
        dim=-1,
    )
    return gauss - correction


def collect_rollouts(agent: Agent, goals, starts, env_cfg: EnvConfig,
                     min_steps: int, seed: int) -> RolloutBatch:
    """On-policy collection of at least `min_steps` transitions.

    Goals (with matching starts) are taken round-robin; every started
    episode is run to completion so discounted returns are well defined.
    """
    rng = np.random.default_rng(seed)
    env = PaintEnv(EnvConfig(**{**env_cfg.__dict__, "seed": seed}))
    inputs, actions, pre_squash, log_probs = [], [], [], []
    rewards_flat, returns_flat = [], []
    ep_rewards, ep_lengths = [], []
    steps = 0
    goal_idx = 0
    while steps < min_steps:
        goal = goals[goal_idx % len(goals)]
        start = starts[goal_idx % len(goals)] if starts is not None else "blank"
        goal_idx += 1
        try:
            obs = env.reset(goal, start)
        except DegenerateEpisodeError:
            continue
        ep_rews = []
        while not env.done:
            grid = assemble_input(obs).transpose(2, 0, 1)
            x = torch.from_numpy(np.ascontiguousarray(grid)).float().unsqueeze(0)
            dist = forward_policy(agent, x)
            action, log_prob, z = sample_action(dist, rng)
            next_obs, reward, _ = env.step(action)
            inputs.append(x[0])
            actions.append(action)
            pre_squash.append(z)
            log_probs.append(log_prob)
            ep_rews.append(reward)
            obs = next_obs
        returns_flat.extend(discounted_returns(ep_rews, env_cfg.gamma).tolist())
        rewards_flat.extend(ep_rews)
        ep_rewards.append(float(sum(ep_rews)))
        ep_lengths.append(len(ep_rews))
        steps += len(ep_rews)
    return RolloutBatch(
        inputs=torch.stack(inputs),
        actions=np.stack(actions),
        pre_squash=np.stack(pre_squash),
        log_probs=np.array(log_probs, dtype=np.float64),
        rewards=np.array(rewards_flat, dtype=np.float64),
        returns=np.array(returns_flat, dtype=np.float64),
        episode_rewards=ep_rewards,
        episode_lengths=ep_lengths,
    )


def ppo_update(agent: Agent, batch: RolloutBatch, cfg: PPOConfig,
               policy_optimizer=None, value_optimizer=None) -> dict:
    """Clipped-surrogate update on one on-policy batch.

    Advantages are q - V(obs), normalized per batch.  Returns summary
    losses; fails fast on non-finite advantages.
    """
    if len(batch) == 0:
        raise ValueError("PPO update needs a non-empty batch")
    if policy_optimizer is None:
        policy_optimizer = torch.optim.Adam(agent.policy.parameters(), lr=cfg.learning_rate)
    if value_optimizer is None:
        value_optimizer = torch.optim.Adam(agent.value.parameters(), lr=cfg.learning_rate)

    values = forward_value(agent, batch.inputs)
    advantages = batch.returns - values
    if not np.all(np.isfinite(advantages)):
        raise FloatingPointError("non-finite advantages in PPO batch")
    adv_std = advantages.std()
    advantages = (advantages - advantages.mean()) / (adv_std + 1e-8)

    inputs = batch.inputs
    pre_squash = torch.from_numpy(batch.pre_squash).float()
    old_log_probs = torch.from_numpy(batch.log_probs).float()
    adv = torch.from_numpy(advantages).float()
    returns = torch.from_numpy(batch.returns).float()

    n = len(batch)
    surrogate_losses, value_losses = [], []
    for _ in range(cfg.epochs_per_batch):
        for start in range(0, n, cfg.minibatch_size):
            sl = slice(start, start + cfg.minibatch_size)
            new_log_probs = policy_log_prob(agent, inputs[sl], pre_squash[sl])
            ratio = torch.exp(new_log_probs - old_log_probs[sl])
            unclipped = ratio * adv[sl]
            clipped = torch.clamp(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * adv[sl]
            _, log_std = agent.policy(inputs[sl])
            entropy = torch.sum(log_std + 0.5 * math.log(2.0 * math.pi * math.e), dim=-1).mean()
            policy_loss = -torch.mean(torch.minimum(unclipped, clipped)) - cfg.entropy_coeff * entropy
            policy_optimizer.zero_grad()
            policy_loss.backward()
            torch.nn.utils.clip_grad_norm_(agent.policy.parameters(), cfg.max_grad_norm)
            policy_optimizer.step()

            value_loss = cfg.value_coeff * torch.mean((agent.value(inputs[sl]) - returns[sl]) ** 2)
            value_optimizer.zero_grad()
            value_loss.backward()
            torch.nn.utils.clip_grad_norm_(agent.value.parameters(), cfg.max_grad_norm)
            value_optimizer.step()

            surrogate_losses.append(policy_loss.item())
            value_losses.append(value_loss.item())
    return {
        "surrogate_loss": float(np.mean(surrogate_losses)),
        "value_loss": float(np.mean(value_losses)),
    }


def train_pipeline(goals, env_cfg: EnvConfig, bc_cfg: BCConfig, ppo_cfg: PPOConfig,
                   scheme: str, seed: int = 0, starts=None, patch_side=None,
                   conv_spec=None, fc_width=None, torch_threads: int = 1):
    """Run one training scheme end to end; returns (agent, stats history).

    All schemes consume the same env-step budget of
    ``ppo_cfg.iterations * ppo_cfg.rollout_batch``.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if not goals:
        raise ValueError("training needs a non-empty goal set")
    torch.set_num_threads(torch_threads)
    side = patch_side if patch_side is not None else env_cfg.patch.height
    net_kwargs = {}
    if conv_spec is not None:
        net_kwargs["conv_spec"] = conv_spec
    if fc_width is not None:
        net_kwargs["fc_width"] = fc_width
    agent = make_agent(side, seed=seed, **net_kwargs)
    policy_opt = torch.optim.Adam(agent.policy.parameters(), lr=ppo_cfg.learning_rate)
    value_opt = torch.optim.Adam(agent.value.parameters(), lr=ppo_cfg.learning_rate)
    bc_opt = torch.optim.Adam(agent.policy.parameters(), lr=bc_cfg.learning_rate)
    bcv_opt = torch.optim.Adam(agent.value.parameters(), lr=bc_cfg.learning_rate)
    history = []
    env_steps_total = 0
    rng = np.random.default_rng(seed)

    def collect_cfg(i):
        return EnvConfig(**{**env_cfg.__dict__, "seed": seed + 1000 * (i + 1)})

    def ssl_phase(i, policy_fn):
        nonlocal env_steps_total
        cfg = collect_cfg(i)
        data, steps, cum_rewards, lengths = _collect_relabeled(
            policy_fn, goals, starts, cfg, ppo_cfg.rollout_batch
        )
        bc_losses = behavior_clone(agent, data, bc_cfg, bc_opt)
        value_losses = fit_value(agent, data, bc_cfg, bcv_opt)
        env_steps_total += steps
        history.append(
            TrainStats(
                iteration=i, scheme=scheme, phase="ssl", env_steps=env_steps_total,
                mean_cumulative_reward=float(np.mean(cum_rewards)),
                mean_episode_length=float(np.mean(lengths)),
                bc_loss=bc_losses[-1] if bc_losses else math.nan,
                value_loss=value_losses[-1] if value_losses else math.nan,
            )
        )

    def ppo_phase(i):
        nonlocal env_steps_total
        batch = collect_rollouts(agent, goals, starts, env_cfg,
                                 ppo_cfg.rollout_batch, seed=seed + 1000 * (i + 1))
        stats = ppo_update(agent, batch, ppo_cfg, policy_opt, value_opt)
        env_steps_total += len(batch)
        history.append(
            TrainStats(
                iteration=i, scheme=scheme, phase="ppo", env_steps=env_steps_total,
                mean_cumulative_reward=float(np.mean(batch.episode_rewards)),
                mean_episode_length=float(np.mean(batch.episode_lengths)),
                surrogate_loss=stats["surrogate_loss"],
                value_loss=stats["value_loss"],
            )
        )

    # The combined scheme spends the first three quarters of the iteration
    # budget on hindsight pretraining and the final quarter (at least one
    # iteration) on policy-optimization fine-tuning.
    fine_tune_iters = max(1, ppo_cfg.iterations // 4) if ppo_cfg.iterations > 1 else 0
    pretrain_iters = ppo_cfg.iterations - fine_tune_iters

    for i in range(ppo_cfg.iterations):
        if scheme == "rl_only":
            ppo_phase(i)
        elif scheme == "ssl_only":
            # Relabeled rollouts of a random policy only; no policy optimization.
            ssl_phase(i, random_policy(rng))
        else:
            # Hindsight pretraining first, then fine-tune with PPO.
            if i < pretrain_iters:
                ssl_phase(i, random_policy(rng))
            else:
                ppo_phase(i)
    return agent, history


def _collect_relabeled(policy_fn, goals, starts, env_cfg: EnvConfig, min_steps: int):
    """Rollout until the step budget is met, relabeling every episode."""
    env = PaintEnv(env_cfg)
    data = SelfSupervisedDataset()
    steps = 0
    cum_rewards, lengths = [], []
    goal_idx = 0
    while steps < min_steps:
        goal = goals[goal_idx % len(goals)]
        start = starts[goal_idx % len(goals)] if starts is not None else "blank"
        goal_idx += 1
        try:
            ep = rollout(policy_fn, env, goal, start)
            samples = relabel_episode(ep, env_cfg.patch, env_cfg.gamma)
        except DegenerateEpisodeError:
            continue
        data.samples.extend(samples)
        data.provenance.append({"goal": (goal_idx - 1) % len(goals), "length": len(samples)})
        steps += len(ep.transitions)
        cum_rewards.append(ep.cumulative_reward())
        lengths.append(len(ep.transitions))
    return data, steps, cum_rewards, lengths
