"""Apply a trained agent to reproduce a reference image stroke by stroke.

The loop samples a brush position uniformly, paints with the
deterministic policy mean while the value network stays non-negative,
and resamples the position on a negative value prediction or when the
last stroke brought no loss improvement (the runtime analog of the
environment's stop rule; it also breaks the fixed points a deterministic
policy can reach).  It stops when the canvas is close enough to the
reference or the stroke budget runs out.  Every stroke is logged for
bit-exact replay.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import canvas as canvas_mod
from .canvas import BrushState, DEFAULT_MAX_RADIUS
from .env import EnvConfig, PaintEnv, canvas_hash
from .perception import DegenerateEpisodeError, PatchSpec, l2_loss, observe
from .policy import Agent, forward_policy, forward_value, obs_to_tensor

STROKE_LOG_VERSION = 1


@dataclass(frozen=True)
class RuntimeConfig:
    patch: PatchSpec
    thresh_sim: float = 0.01
    max_total_strokes: int = 1000
    max_radius: int = DEFAULT_MAX_RADIUS
    seed: int = 0

    def __post_init__(self):
        if self.thresh_sim <= 0:
            raise ValueError(f"thresh_sim must be > 0, got {self.thresh_sim}")
        if self.max_total_strokes < 1:
            raise ValueError("stroke budget must be >= 1")


@dataclass
class PaintResult:
    canvas: np.ndarray
    stroke_log: dict
    loss_trace: list
    final_loss: float
    budget_exhausted: bool


def _check_params(agent: Agent) -> None:
    for net in (agent.policy, agent.value):
        for p in net.parameters():
            if not torch.isfinite(p).all():
                raise FloatingPointError("non-finite network parameters")


def paint_image(agent: Agent, reference: np.ndarray, cfg: RuntimeConfig,
                start="blank") -> PaintResult:
    """Reproduce `reference` on a fresh canvas with the trained agent."""
    _check_params(agent)
    height, width = reference.shape[:2]
    if isinstance(start, str):
        canvas = canvas_mod.blank_canvas(height, width)
        start_record = ("blank", None)
    else:
        canvas = np.asarray(start, dtype=np.float64).copy()
        start_record = ("given", canvas_hash(canvas))
    rng = np.random.default_rng(cfg.seed)
    spec = cfg.patch
    strokes = []
    loss_trace = []
    loss = l2_loss(canvas, reference)
    brush = None
    at_fresh_position = True
    while loss >= cfg.thresh_sim and len(strokes) < cfg.max_total_strokes:
        if brush is None:
            brush = BrushState(
                row=float(rng.integers(0, height)), col=float(rng.integers(0, width))
            )
            at_fresh_position = True
        obs = observe(canvas, reference, brush, spec)
        x = obs_to_tensor(obs)
        if not at_fresh_position and float(forward_value(agent, x)[0]) < 0.0:
            brush = None  # value head predicts no further gain here; resample
            continue
        action = forward_policy(agent, x).mean[0]
        strokes.append([brush.row, brush.col, *action.tolist()])
        canvas, brush = canvas_mod.render_action(
            canvas, brush, action,
            max_offset_row=spec.height / 2.0, max_offset_col=spec.width / 2.0,
            max_radius=cfg.max_radius,
        )
        at_fresh_position = False
        prev_loss = loss
        loss = l2_loss(canvas, reference)
        loss_trace.append(loss)
        if loss >= prev_loss:
            brush = None  # no improvement here; move elsewhere
    log = {
        "version": STROKE_LOG_VERSION,
        "height": height,
        "width": width,
        "patch": [spec.height, spec.width],
        "max_radius": cfg.max_radius,
        "seed": cfg.seed,
        "start": list(start_record),
        "strokes": strokes,
        "reference_hash": canvas_hash(reference),
        "canvas_hash": canvas_hash(canvas),
    }
    return PaintResult(
        canvas=canvas,
        stroke_log=log,
        loss_trace=loss_trace,
        final_loss=loss,
        budget_exhausted=loss >= cfg.thresh_sim,
    )


def replay_strokes(log: dict, start=None) -> np.ndarray:
    """Rebuild the painted canvas from its stroke log, verifying the hash."""
    if log.get("version") != STROKE_LOG_VERSION:
        raise ValueError(f"unsupported stroke log version {log.get('version')}")
    mode, arg = log["start"]
    if mode == "blank":
        canvas = canvas_mod.blank_canvas(log["height"], log["width"])
    elif start is not None:
        canvas = np.asarray(start, dtype=np.float64).copy()
        if canvas_hash(canvas) != arg:
            raise ValueError("start canvas does not match the log's hash")
    else:
        raise ValueError("replay of a 'given' start needs the original canvas")
    spec = PatchSpec(*log["patch"])
    for record in log["strokes"]:
        brush = BrushState(row=record[0], col=record[1])
        action = np.asarray(record[2:], dtype=np.float64)
        canvas, _ = canvas_mod.render_action(
            canvas, brush, action,
            max_offset_row=spec.height / 2.0, max_offset_col=spec.width / 2.0,
            max_radius=log["max_radius"],
        )
    if canvas_hash(canvas) != log["canvas_hash"]:
        raise ValueError("replayed canvas hash mismatch; log is corrupt")
    return canvas


def replay_loss_trace(log: dict, reference: np.ndarray, start=None) -> list:
    """Per-stroke loss recomputation used to validate a stored trace."""
    if canvas_hash(reference) != log["reference_hash"]:
        raise ValueError("reference image does not match the log")
    mode, arg = log["start"]
    if mode == "blank":
        canvas = canvas_mod.blank_canvas(log["height"], log["width"])
    else:
        canvas = np.asarray(start, dtype=np.float64).copy()
    spec = PatchSpec(*log["patch"])
    trace = []
    for record in log["strokes"]:
        brush = BrushState(row=record[0], col=record[1])
        action = np.asarray(record[2:], dtype=np.float64)
        canvas, _ = canvas_mod.render_action(
            canvas, brush, action,
            max_offset_row=spec.height / 2.0, max_offset_col=spec.width / 2.0,
            max_radius=log["max_radius"],
        )
        trace.append(l2_loss(canvas, reference))
    return trace


def evaluate_benchmark(agent: Agent, pairs, env_cfg: EnvConfig) -> dict:
    """Mean cumulative reward and final loss over (goal, start) pairs.

    Episodes run under the critic condition of the configured stop rule
    with the deterministic policy mean.
    """
    if not pairs:
        raise ValueError("benchmark needs at least one patch")
    from .learn import mean_policy
    from .env import rollout

    policy = mean_policy(agent)
    cumulative, final_losses, lengths = [], [], []
    env = PaintEnv(env_cfg)
    for goal, start in pairs:
        try:
            ep = rollout(policy, env, goal, start)
        except DegenerateEpisodeError:
            continue
        cumulative.append(ep.cumulative_reward())
        final_losses.append(l2_loss(ep.states[-1], goal))
        lengths.append(len(ep.transitions))
    return {
        "patches": len(cumulative),
        "mean_cumulative_reward": float(np.mean(cumulative)) if cumulative else 0.0,
        "mean_final_loss": float(np.mean(final_losses)) if final_losses else 0.0,
        "mean_episode_length": float(np.mean(lengths)) if lengths else 0.0,
        "per_patch_reward": cumulative,
        "per_patch_loss": final_losses,
    }
